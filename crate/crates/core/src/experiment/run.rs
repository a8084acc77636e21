use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, Stage};
use super::evaluate::{run_fig3_analogue, run_privacy_suite, run_table1_analogue, PrivacySuite, Table1};
use super::study::{Models, Study};
use crate::error::Result;
use crate::metrics::{write_csv, MetricReport};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out: PathBuf,
    /// `(file name, sha256)` for every artifact, in write order.
    pub artifacts: Vec<(String, String)>,
    pub table1: Option<Table1>,
    pub fig3: Option<Vec<(usize, f64, f64)>>,
    pub privacy: Option<PrivacySuite>,
}

struct Writer {
    dir: PathBuf,
    artifacts: Vec<(String, String)>,
}

impl Writer {
    fn record(&mut self, name: &str) -> Result<()> {
        let hash = sha256_hex(&fs::read(self.dir.join(name))?);
        self.artifacts.push((name.to_string(), hash));
        Ok(())
    }

    fn report(&mut self, name: &str, r: &MetricReport) -> Result<()> {
        r.write(self.dir.join(name))?;
        self.record(name)
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        write_csv(self.dir.join(name), header, rows)?;
        self.record(name)
    }
}

/// Builds the phantom study, trains or loads the models, runs the configured stages and
/// writes reports, CSVs, the checkpoint and `manifest.txt` (sha256 of every artifact) to `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<RunSummary> {
    fs::create_dir_all(out)?;
    let mut w = Writer { dir: out.to_path_buf(), artifacts: Vec::new() };
    fs::write(out.join("config.txt"), cfg.to_text())?;
    w.record("config.txt")?;

    log::info!("building phantom study");
    let study = Study::build(cfg)?;
    log::info!("preparing models ({:?} backend)", cfg.backend);
    let models = Models::load_or_train(cfg, &study)?;
    models.save(&out.join("model.ckpt"))?;
    w.record("model.ckpt")?;
    for (name, log) in &models.logs {
        let rows: Vec<Vec<String>> = log.losses.iter().enumerate().map(|(i, l)| vec![i.to_string(), l.to_string()]).collect();
        w.csv(&format!("train_{name}.csv"), &["iteration", "loss"], &rows)?;
    }

    let mut summary = RunSummary { out: out.to_path_buf(), artifacts: Vec::new(), table1: None, fig3: None, privacy: None };
    if cfg.stages.contains(&Stage::Table1) {
        log::info!("segmentation table");
        let t = run_table1_analogue(cfg, &study, &models)?;
        w.report("table1.txt", &t.report)?;
        let header: Vec<&str> = t.header.iter().map(String::as_str).collect();
        w.csv("table1.csv", &header, &t.rows)?;
        summary.table1 = Some(t);
    }
    if cfg.stages.contains(&Stage::Fig3) {
        log::info!("ensemble-size curve");
        let rows = run_fig3_analogue(cfg, &study, &models, &cfg.tta)?;
        let csv: Vec<Vec<String>> = rows.iter().map(|(k, l, n)| vec![k.to_string(), l.to_string(), n.to_string()]).collect();
        w.csv("fig3.csv", &["k", "dice_learned", "dice_naive"], &csv)?;
        summary.fig3 = Some(rows);
    }
    if cfg.stages.contains(&Stage::Privacy) {
        log::info!("privacy suite");
        let p = run_privacy_suite(cfg, &study, &models)?;
        w.report("privacy.txt", &p.report)?;
        let rows: Vec<Vec<String>> = p
            .sweep
            .iter()
            .map(|r| {
                vec![
                    r.alpha.to_string(),
                    r.attack.name().to_string(),
                    r.mean_ms_ssim.to_string(),
                    r.std_ms_ssim.to_string(),
                    r.reid_f1.to_string(),
                    r.reid_map.to_string(),
                ]
            })
            .collect();
        w.csv("privacy_sweep.csv", &["alpha", "attack", "ms_ssim_mean", "ms_ssim_std", "reid_f1", "reid_map"], &rows)?;
        summary.privacy = Some(p);
    }

    let manifest: String = w.artifacts.iter().map(|(name, hash)| format!("{hash}  {name}\n")).collect();
    fs::write(out.join("manifest.txt"), manifest)?;
    summary.artifacts = w.artifacts;
    Ok(summary)
}
