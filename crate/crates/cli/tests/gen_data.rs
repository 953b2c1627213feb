mod common;

use common::{arg, mpd, stderr};

#[test]
fn header_and_row_count() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pop.csv");
    let out = mpd(&["gen-data", "--rows", "100000", "--seed", "3", "--out", arg(&path)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let mut sorted = header.clone();
    sorted.sort();
    assert_eq!(sorted, ["y", "z_cov", "z_trt", "z_trt_proxy"]);
    assert_eq!(lines.count(), 100_000);
}

#[test]
fn fixed_seed_is_byte_stable_and_seeds_differ() {
    let dir = tempfile::tempdir().unwrap();
    let paths: Vec<_> = ["a", "b", "c"].iter().map(|n| dir.path().join(format!("{n}.csv"))).collect();
    for (path, seed) in paths.iter().zip(["7", "7", "8"]) {
        let out = mpd(&["gen-data", "--rows", "100000", "--seed", seed, "--out", arg(path)]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let bytes: Vec<Vec<u8>> = paths.iter().map(|p| std::fs::read(p).unwrap()).collect();
    assert_eq!(bytes[0], bytes[1]);
    assert_ne!(bytes[0], bytes[2]);
}

#[test]
fn rejects_unknown_kind_and_tiny_tables() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pop.csv");
    let kind = mpd(&["gen-data", "--kind", "census", "--rows", "20000", "--out", arg(&path)]);
    assert_eq!(kind.status.code(), Some(2));
    assert!(stderr(&kind).contains("kind"));
    let tiny = mpd(&["gen-data", "--rows", "500", "--out", arg(&path)]);
    assert_eq!(tiny.status.code(), Some(2));
    assert!(!path.exists());
}
