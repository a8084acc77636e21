use std::fs;

use mixseg::experiment::{run_experiment, sha256_hex, ExperimentConfig};
use mixseg::metrics::MetricReport;

const SMALL: &str = "
seed = 4
phantom.dims = 24
phantom.train_subjects = 3
phantom.test_subjects = 5
phantom.reference_scans = 2
phantom.attacker_scans = 2
phantom.reid_subjects = 4
grid.patch = 12
grid.stride = 12
train.patch = 8
train.iterations = 20
train.baseline_iterations = 10
tta.eval = 3
privacy.alphas = 0.5
privacy.attacks = dict, keyed
privacy.library = 5
privacy.tv_iterations = 10
";

fn config(extra: &str) -> ExperimentConfig {
    let tta = if extra.contains("tta.k") { "" } else { "tta.k = 1, 3" };
    ExperimentConfig::parse(&format!("{SMALL}\n{tta}\n{extra}")).unwrap()
}

#[test]
fn oracle_run_writes_consistent_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let summary = run_experiment(&config("backend = oracle"), dir.path()).unwrap();
    let table = MetricReport::read(dir.path().join("table1.txt")).unwrap();
    assert_eq!(table.get_f64("naive.avg"), Some(1.0));
    assert_eq!(table.get_f64("naive_tta.avg"), Some(1.0));
    assert!(table.get_f64("learned.avg").unwrap() > 0.0);

    let manifest = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert_eq!(manifest.lines().count(), summary.artifacts.len());
    for line in manifest.lines() {
        let (hash, name) = line.split_once("  ").unwrap();
        assert_eq!(sha256_hex(&fs::read(dir.path().join(name)).unwrap()), hash, "{name}");
    }
    for name in ["config.txt", "model.ckpt", "table1.csv", "fig3.csv", "privacy.txt", "privacy_sweep.csv"] {
        assert!(manifest.contains(name), "{name} missing from manifest");
    }
    let fig3 = summary.fig3.unwrap();
    assert_eq!(fig3.iter().map(|r| r.0).collect::<Vec<_>>(), vec![1, 3]);
    assert!(fig3.iter().all(|r| r.2 == 1.0));
    let privacy = summary.privacy.unwrap().report;
    assert!((privacy.get_f64("privacy.alpha0.5.keyed.ms_ssim_mean").unwrap() - 1.0).abs() < 1e-6);
    assert!(privacy.get_f64("icc.avg").is_some());
}

#[test]
fn empty_ensemble_list_drops_tta_rows() {
    let dir = tempfile::tempdir().unwrap();
    let summary = run_experiment(&config("backend = oracle\ntta.k =\nstages = table1, fig3"), dir.path()).unwrap();
    let table = summary.table1.unwrap();
    assert!(table.report.get("naive_tta.avg").is_none());
    assert!(table.report.get("learned_tta.avg").is_none());
    assert!(table.report.get("naive.avg").is_some());
    assert!(summary.fig3.unwrap().is_empty());
    assert!(summary.privacy.is_none());
}

#[test]
fn cnn_checkpoint_reload_reproduces_results() {
    let dir = tempfile::tempdir().unwrap();
    let first = run_experiment(&config("stages = table1"), &dir.path().join("a")).unwrap();
    let ckpt = dir.path().join("a/model.ckpt");
    let second = run_experiment(&config(&format!("stages = table1\ncheckpoint = {}", ckpt.display())), &dir.path().join("b")).unwrap();
    assert_eq!(first.table1.unwrap().report, second.table1.unwrap().report);
    assert_eq!(fs::read(&ckpt).unwrap(), fs::read(dir.path().join("b/model.ckpt")).unwrap());
}
