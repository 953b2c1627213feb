mod common;

use std::path::Path;

use common::{arg, mpd, stderr, stdout};

const CONFIG: &str = r#"
seed = 1
replications = 10

[population]
source = "synthetic"
rows = 20000

[loss]
kind = "linear"
response = "y"
covariates = ["z_cov", "z_trt"]

[design]
phase_one_size = 1500
label_budget = 200
waves = 2

[strategy]
kind = "knn"
neighbors = 20
"#;

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, CONFIG).unwrap();
    path
}

fn listing(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> =
        std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    names.sort();
    names
}

#[test]
fn writes_exactly_three_files_and_refuses_reuse() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out_dir = dir.path().join("out");
    let run = mpd(&["simulate", "--config", arg(&config), "--out", arg(&out_dir), "--seed", "7", "--reps", "6"]);
    assert!(run.status.success(), "{}", stderr(&run));
    assert_eq!(listing(&out_dir), ["manifest.toml", "replications.csv", "summary.csv"]);
    assert!(stdout(&run).contains("adaptive"));

    let summary = std::fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 2);
    let replications = std::fs::read_to_string(out_dir.join("replications.csv")).unwrap();
    assert_eq!(replications.lines().count(), 1 + 6 * 2 * 3);

    let again = mpd(&["simulate", "--config", arg(&config), "--out", arg(&out_dir), "--seed", "7", "--reps", "6"]);
    assert_eq!(again.status.code(), Some(5));
    assert!(stderr(&again).contains("--force"));

    let forced =
        mpd(&["simulate", "--config", arg(&config), "--out", arg(&out_dir), "--seed", "7", "--reps", "6", "--force"]);
    assert!(forced.status.success(), "{}", stderr(&forced));
    assert_eq!(std::fs::read_to_string(out_dir.join("replications.csv")).unwrap(), replications);
}

#[test]
fn zero_replications_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out_dir = dir.path().join("out");
    let run = mpd(&["simulate", "--config", arg(&config), "--out", arg(&out_dir), "--reps", "0"]);
    assert_eq!(run.status.code(), Some(2));
    assert!(stderr(&run).contains("replications"));
    assert!(!out_dir.join("summary.csv").exists());
}

#[test]
fn manifest_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    let run = mpd(&["simulate", "--config", arg(&config), "--out", arg(&first), "--seed", "11", "--parallel", "2"]);
    assert!(run.status.success(), "{}", stderr(&run));
    let manifest = first.join("manifest.toml");
    let rerun = mpd(&["simulate", "--config", arg(&manifest), "--out", arg(&second), "--parallel", "1"]);
    assert!(rerun.status.success(), "{}", stderr(&rerun));
    for file in ["replications.csv", "summary.csv", "manifest.toml"] {
        assert_eq!(std::fs::read(first.join(file)).unwrap(), std::fs::read(second.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn tampered_manifest_and_bad_config_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out_dir = dir.path().join("out");
    let run = mpd(&["simulate", "--config", arg(&config), "--out", arg(&out_dir), "--reps", "2"]);
    assert!(run.status.success(), "{}", stderr(&run));
    let manifest = std::fs::read_to_string(out_dir.join("manifest.toml")).unwrap();
    let tampered = dir.path().join("tampered.toml");
    std::fs::write(&tampered, manifest.replace("replications = 2", "replications = 3")).unwrap();
    let rerun = mpd(&["simulate", "--config", arg(&tampered), "--out", arg(&dir.path().join("t"))]);
    assert_eq!(rerun.status.code(), Some(2));

    let unknown = dir.path().join("unknown.toml");
    std::fs::write(&unknown, CONFIG.replace("waves = 2", "waves = 2\nwavez = 3")).unwrap();
    let rerun = mpd(&["simulate", "--config", arg(&unknown), "--out", arg(&dir.path().join("u"))]);
    assert_eq!(rerun.status.code(), Some(2));
    assert!(stderr(&rerun).contains("wavez"));
}

#[test]
fn report_prints_both_arms() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out_dir = dir.path().join("out");
    assert!(mpd(&["simulate", "--config", arg(&config), "--out", arg(&out_dir), "--reps", "3"]).status.success());
    let report = mpd(&["report", arg(&out_dir)]);
    assert!(report.status.success(), "{}", stderr(&report));
    let text = stdout(&report);
    assert!(text.lines().next().unwrap().contains("coverage"));
    assert_eq!(text.lines().filter(|l| l.contains("baseline")).count(), 1);
}
