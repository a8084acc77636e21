use std::path::Path;
use std::sync::Arc;

use super::config::{BackendKind, ExperimentConfig};
use crate::error::{Error, Result};
use crate::mixer::{AlphaBounds, ReferencePool};
use crate::models::{
    noisy_oracle_segment, train_end_to_end, train_segmenter, train_unmixer, Checkpoint, OracleAccess, OracleLedger,
    SegmentationBackend, TinyCnn, TrainConfig, TrainLog, TrainingSet, UnmixNet,
};
use crate::phantom::{generate_subject, render_scan, ScanConfig, PHANTOM_CLASSES};
use crate::seeds::{child_seed, rng_from, Stream};
use crate::tensor::{LabelField, Volume};

type Scan = (Volume<f32>, LabelField<f32>);

/// Subject-index offsets that keep the splits disjoint.
const TEST_BASE: u64 = 10_000;
const POOL_A_BASE: u64 = 20_000;
const POOL_B_BASE: u64 = 30_000;
const ATTACKER_BASE: u64 = 40_000;
const REID_BASE: u64 = 50_000;

/// Phantom splits for one run.
#[derive(Debug, Clone)]
pub struct Study {
    pub train: Vec<Scan>,
    pub test: Vec<Scan>,
    pub pool_a: ReferencePool<f32>,
    pub pool_b: ReferencePool<f32>,
    pub attacker: ReferencePool<f32>,
    /// Two scans per subject, for re-identification.
    pub reid: Vec<Volume<f32>>,
}

fn scans(cfg: &ExperimentConfig, scan_cfg: &ScanConfig, base: u64, subjects: usize, per_subject: u64) -> Result<Vec<Scan>> {
    let mut out = Vec::new();
    for i in 0..subjects as u64 {
        let spec = generate_subject(child_seed(cfg.seed, Stream::Phantom, base + i));
        for s in 0..per_subject {
            out.push(render_scan(&spec, scan_cfg, child_seed(cfg.seed, Stream::Phantom, (base + i) << 8 | s))?);
        }
    }
    Ok(out)
}

impl Study {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        let p = &cfg.phantom;
        let scan_cfg = ScanConfig { dims: [p.dims; 3], noise_std: p.noise, ..Default::default() };
        let pool = |base, n| ReferencePool::new(scans(cfg, &scan_cfg, base, n, 1)?);
        Ok(Self {
            train: scans(cfg, &scan_cfg, 0, p.train_subjects, 1)?,
            test: scans(cfg, &scan_cfg, TEST_BASE, p.test_subjects, 1)?,
            pool_a: pool(POOL_A_BASE, p.reference_scans)?,
            pool_b: pool(POOL_B_BASE, p.reference_scans)?,
            attacker: pool(ATTACKER_BASE, p.attacker_scans.max(1))?,
            reid: scans(cfg, &scan_cfg, REID_BASE, p.reid_subjects, 2)?.into_iter().map(|(v, _)| v).collect(),
        })
    }
}

/// Trained (or loaded) networks for a run.
#[derive(Debug, Clone)]
pub struct Models {
    pub seg: Option<TinyCnn<f32>>,
    pub unmix: UnmixNet<f32>,
    pub baseline: Option<TinyCnn<f32>>,
    pub logs: Vec<(String, TrainLog)>,
}

impl Models {
    /// Trains every network the configured backend needs.
    pub fn train(cfg: &ExperimentConfig, study: &Study) -> Result<Self> {
        let mut rng = rng_from(child_seed(cfg.seed, Stream::Train, 0));
        let mut unmix = UnmixNet::new(&mut rng, PHANTOM_CLASSES);
        let targets = ReferencePool::new(study.train.clone())?;
        let data = TrainingSet::random(targets.clone(), study.pool_a.clone(), cfg.train.patch);
        let mut logs = Vec::new();
        let tc = TrainConfig { seed: child_seed(cfg.seed, Stream::Train, 1), ..cfg.train.clone() };
        match cfg.backend {
            BackendKind::Cnn => {
                let mut seg = TinyCnn::new(&mut rng, PHANTOM_CLASSES);
                logs.push(("joint".into(), train_end_to_end(&mut seg, &mut unmix, &data, &tc)?));
                let mut baseline = TinyCnn::new(&mut rng, PHANTOM_CLASSES);
                let raw = TrainingSet::random(targets.clone(), targets, cfg.train.patch);
                let bc = TrainConfig {
                    iterations: cfg.baseline_iterations.max(1),
                    alpha: AlphaBounds::fixed(1.0)?,
                    seed: child_seed(cfg.seed, Stream::Train, 2),
                    ..cfg.train.clone()
                };
                logs.push(("baseline".into(), train_segmenter(&mut baseline, &raw, &bc)?));
                Ok(Self { seg: Some(seg), unmix, baseline: Some(baseline), logs })
            }
            BackendKind::Oracle | BackendKind::Noisy => {
                let noise = if cfg.backend == BackendKind::Noisy { cfg.noise_std } else { 0.0 };
                let mut noise_rng = rng_from(child_seed(cfg.seed, Stream::Backend, 0));
                let log = train_unmixer(&mut unmix, &data, &tc, |s, x| {
                    let access = OracleAccess { y_target: s.y_target.clone(), y_ref: s.y_ref.clone(), alpha: s.alpha };
                    noisy_oracle_segment(x, Some(&access), noise, &mut noise_rng)
                })?;
                logs.push(("unmix".into(), log));
                Ok(Self { seg: None, unmix, baseline: None, logs })
            }
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint<f32> {
        let mut ck = Checkpoint::new();
        ck.insert_net("unmix", &self.unmix.net);
        if let Some(s) = &self.seg {
            ck.insert_net("seg", &s.net);
        }
        if let Some(b) = &self.baseline {
            ck.insert_net("baseline", &b.net);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint<f32>, backend: BackendKind) -> Result<Self> {
        let cnn = |name: &str| -> Result<Option<TinyCnn<f32>>> {
            if ck.has_net(name) {
                Ok(Some(TinyCnn::from_net(ck.net(name)?)?))
            } else {
                Ok(None)
            }
        };
        let seg = cnn("seg")?;
        if backend == BackendKind::Cnn && seg.is_none() {
            return Err(Error::config("checkpoint has no segmenter for the cnn backend"));
        }
        Ok(Self { seg, unmix: UnmixNet::from_net(ck.net("unmix")?)?, baseline: cnn("baseline")?, logs: Vec::new() })
    }

    pub fn load_or_train(cfg: &ExperimentConfig, study: &Study) -> Result<Self> {
        match &cfg.checkpoint {
            Some(path) => Self::from_checkpoint(&Checkpoint::load(path)?, cfg.backend),
            None => Self::train(cfg, study),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    /// Server used on mixtures.
    pub fn backend(&self, cfg: &ExperimentConfig) -> Result<SegmentationBackend<f32>> {
        let ledger = Arc::new(OracleLedger::new());
        Ok(match cfg.backend {
            BackendKind::Oracle => SegmentationBackend::Oracle { ledger },
            BackendKind::Noisy => SegmentationBackend::NoisyOracle { ledger, noise_std: cfg.noise_std, seed: child_seed(cfg.seed, Stream::Backend, 1) },
            BackendKind::Cnn => SegmentationBackend::TinyCnn(self.seg.clone().ok_or_else(|| Error::config("no trained segmenter"))?),
        })
    }

    /// Server used on raw inputs for the no-privacy baseline row.
    pub fn baseline_backend(&self, cfg: &ExperimentConfig) -> Result<SegmentationBackend<f32>> {
        match (&self.baseline, cfg.backend) {
            (Some(b), BackendKind::Cnn) => Ok(SegmentationBackend::TinyCnn(b.clone())),
            (None, BackendKind::Cnn) => Err(Error::config("no trained baseline segmenter")),
            _ => self.backend(cfg),
        }
    }
}
