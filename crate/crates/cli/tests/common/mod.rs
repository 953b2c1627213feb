#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

pub fn mpd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpd")).args(args).env("MPD_LOG", "error").output().expect("binary runs")
}

pub fn arg(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}
