use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn mixseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixseg")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = mixseg(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn phantom_gen_writes_scans_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["phantom", "gen", "--subjects", "2", "--scans-per-subject", "2", "--seed", "3", "--out", s(&data), "--dims", "16"]);
    let manifest = std::fs::read_to_string(data.join("manifest.tsv")).unwrap();
    let rows: Vec<&str> = manifest.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0].split('\t').next(), rows[1].split('\t').next(), "scans of one subject share its id");
    assert!(data.join("s001_scan1.labels.mxsg").exists());

    let again = dir.path().join("again");
    ok(&["phantom", "gen", "--subjects", "2", "--scans-per-subject", "2", "--seed", "3", "--out", s(&again), "--dims", "16"]);
    assert_eq!(manifest, std::fs::read_to_string(again.join("manifest.tsv")).unwrap());
}

#[test]
fn oracle_server_and_client_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let oracle = dir.path().join("oracle");
    ok(&["phantom", "gen", "--subjects", "1", "--scans-per-subject", "1", "--seed", "5", "--out", s(&data), "--dims", "24"]);
    let mut server = Command::new(env!("CARGO_BIN_EXE_mixseg"))
        .args(["serve", "--backend", "oracle", "--listen", "127.0.0.1:0", "--oracle-dir", s(&oracle)])
        .env("RUST_LOG", "warn")
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(server.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").unwrap().to_string();
    let out = dir.path().join("seg.mxsg");
    let stdout = mixseg(&[
        "segment", "--in", s(&data.join("s000_scan0.mxsg")), "--labels", s(&data.join("s000_scan0.labels.mxsg")),
        "--oracle-dir", s(&oracle), "--key-seed", "9", "--alpha", "0.4", "--tta", "2", "--patch", "12", "--stride", "8",
        "--server", &addr, "--out", s(&out),
    ]);
    server.kill().unwrap();
    assert!(stdout.status.success(), "{}", String::from_utf8_lossy(&stdout.stderr));
    assert!(String::from_utf8_lossy(&stdout.stdout).contains("macro 1.000000"));
    assert!(out.exists());
}

#[test]
fn train_then_evaluate_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    std::fs::write(
        &cfg,
        "phantom.dims = 24\nphantom.train_subjects = 2\nphantom.test_subjects = 5\nphantom.reference_scans = 2\n\
         grid.patch = 12\ngrid.stride = 12\ntrain.patch = 8\ntrain.iterations = 10\ntrain.baseline_iterations = 5\ntta.k = 1, 2\ntta.eval = 2\n",
    )
    .unwrap();
    let ckpt = dir.path().join("model.ckpt");
    let report = dir.path().join("fig3.txt");
    let csv = dir.path().join("fig3.csv");
    ok(&["train", "e2e", "--config", s(&cfg), "--seed", "2", "--out", s(&ckpt)]);
    assert!(ckpt.exists());
    let text = ok(&["eval", "fig3", "--config", s(&cfg), "--report", s(&report), "--csv", s(&csv)]);
    assert!(text.contains("fig3.k2.learned="));
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 3);
}

#[test]
fn bad_arguments_fail_cleanly() {
    let out = mixseg(&["segment", "--in", "/nonexistent.mxsg", "--key-seed", "1", "--alpha", "0.5", "--server", "127.0.0.1:1", "--out", "/tmp/x"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    assert!(!mixseg(&["attack", "bss", "--alpha", "0.5", "--attack", "nope", "--in", ".", "--report", "r"]).status.success());
}
