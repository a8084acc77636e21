use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::attacks::AttackKind;
use crate::error::{Error, Result};
use crate::mixer::AlphaBounds;
use crate::models::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Oracle,
    Noisy,
    Cnn,
}

impl FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Self::Oracle),
            "noisy" => Ok(Self::Noisy),
            "cnn" => Ok(Self::Cnn),
            other => Err(Error::config(format!("unknown backend {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Table1,
    Fig3,
    Privacy,
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table1" => Ok(Self::Table1),
            "fig3" => Ok(Self::Fig3),
            "privacy" => Ok(Self::Privacy),
            other => Err(Error::config(format!("unknown stage {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSection {
    pub dims: usize,
    pub train_subjects: usize,
    pub test_subjects: usize,
    /// Scans in each of the two disjoint client reference pools.
    pub reference_scans: usize,
    pub attacker_scans: usize,
    /// Subjects (two scans each) used for re-identification.
    pub reid_subjects: usize,
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrivacySection {
    pub alphas: Vec<f64>,
    pub attacks: Vec<AttackKind>,
    pub library: usize,
    pub tv_iterations: usize,
    pub tv_weight: f64,
    pub patches_per_scan: usize,
}

/// Everything a run needs. Parsed from flat `section.key = value` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub phantom: PhantomSection,
    pub alpha: AlphaBounds,
    pub patch: usize,
    pub stride: usize,
    pub backend: BackendKind,
    pub noise_std: f64,
    pub train: TrainConfig,
    /// Iterations for the raw-input baseline segmenter.
    pub baseline_iterations: usize,
    pub tta: Vec<usize>,
    /// Ensemble size for the `+TTA` rows and the reliability runs.
    pub tta_eval: usize,
    pub icc_tta: usize,
    pub stages: Vec<Stage>,
    pub privacy: PrivacySection,
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            phantom: PhantomSection {
                dims: 48,
                train_subjects: 20,
                test_subjects: 8,
                reference_scans: 4,
                attacker_scans: 4,
                reid_subjects: 20,
                noise: 0.03,
            },
            alpha: AlphaBounds::default(),
            patch: 16,
            stride: 16,
            backend: BackendKind::Cnn,
            noise_std: 1.0,
            train: TrainConfig { iterations: 2000, lr: 0.005, ..TrainConfig::default() },
            baseline_iterations: 600,
            tta: vec![1, 5, 10, 30],
            tta_eval: 10,
            icc_tta: 1,
            stages: vec![Stage::Table1, Stage::Fig3, Stage::Privacy],
            privacy: PrivacySection {
                alphas: vec![0.2, 0.3, 0.4, 0.5, 0.6, 0.8, 1.0],
                attacks: vec![AttackKind::Tv, AttackKind::Dictionary, AttackKind::Keyed],
                library: 100,
                tv_iterations: 300,
                tv_weight: 0.05,
                patches_per_scan: 1,
            },
            checkpoint: None,
            out: PathBuf::from("out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::config(format!("{key}: cannot parse {v:?}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse(key, s)).collect()
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::config(format!("line {}: expected key = value", n + 1)))?;
            if map.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(Error::config(format!("line {}: duplicate key {}", n + 1, k.trim())));
            }
        }
        let mut c = Self::default();
        let (mut amin, mut amax) = (c.alpha.min, c.alpha.max);
        for (k, v) in &map {
            let (k, v) = (k.as_str(), v.as_str());
            match k {
                "seed" => c.seed = parse(k, v)?,
                "phantom.dims" => c.phantom.dims = parse(k, v)?,
                "phantom.train_subjects" => c.phantom.train_subjects = parse(k, v)?,
                "phantom.test_subjects" => c.phantom.test_subjects = parse(k, v)?,
                "phantom.reference_scans" => c.phantom.reference_scans = parse(k, v)?,
                "phantom.attacker_scans" => c.phantom.attacker_scans = parse(k, v)?,
                "phantom.reid_subjects" => c.phantom.reid_subjects = parse(k, v)?,
                "phantom.noise" => c.phantom.noise = parse(k, v)?,
                "alpha.min" => amin = parse(k, v)?,
                "alpha.max" => amax = parse(k, v)?,
                "grid.patch" => c.patch = parse(k, v)?,
                "grid.stride" => c.stride = parse(k, v)?,
                "backend" => c.backend = parse(k, v)?,
                "backend.noise" => c.noise_std = parse(k, v)?,
                "train.patch" => c.train.patch = [parse(k, v)?; 3],
                "train.iterations" => c.train.iterations = parse(k, v)?,
                "train.batch" => c.train.batch_size = parse(k, v)?,
                "train.lr" => c.train.lr = parse(k, v)?,
                "train.momentum" => c.train.momentum = parse(k, v)?,
                "train.w_ce" => c.train.w_ce = parse(k, v)?,
                "train.w_dice" => c.train.w_dice = parse(k, v)?,
                "train.baseline_iterations" => c.baseline_iterations = parse(k, v)?,
                "tta.k" => c.tta = parse_list(k, v)?,
                "tta.eval" => c.tta_eval = parse(k, v)?,
                "icc.tta" => c.icc_tta = parse(k, v)?,
                "stages" => c.stages = parse_list(k, v)?,
                "privacy.alphas" => c.privacy.alphas = parse_list(k, v)?,
                "privacy.attacks" => c.privacy.attacks = parse_list(k, v)?,
                "privacy.library" => c.privacy.library = parse(k, v)?,
                "privacy.tv_iterations" => c.privacy.tv_iterations = parse(k, v)?,
                "privacy.tv_weight" => c.privacy.tv_weight = parse(k, v)?,
                "privacy.patches_per_scan" => c.privacy.patches_per_scan = parse(k, v)?,
                "checkpoint" => c.checkpoint = Some(PathBuf::from(v)),
                "out" => c.out = PathBuf::from(v),
                other => return Err(Error::config(format!("unknown key {other:?}"))),
            }
        }
        c.alpha = AlphaBounds::new(amin, amax)?;
        c.train.alpha = c.alpha;
        c.train.seed = c.seed;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.phantom;
        if p.dims < self.patch || self.patch < 3 || self.stride == 0 || self.stride > self.patch {
            return Err(Error::config("need 3 <= grid.patch <= phantom.dims and 0 < grid.stride <= grid.patch"));
        }
        if self.train.patch[0] > p.dims {
            return Err(Error::config("train.patch exceeds phantom.dims"));
        }
        if p.train_subjects == 0 || p.reference_scans == 0 {
            return Err(Error::config("need training subjects and reference scans"));
        }
        if self.tta.contains(&0) || self.tta_eval == 0 || self.icc_tta == 0 {
            return Err(Error::config("TTA counts must be at least 1"));
        }
        if let Some(ck) = &self.checkpoint {
            if !ck.exists() {
                return Err(Error::config(format!("checkpoint {} does not exist", ck.display())));
            }
        }
        self.train.validate()
    }

    /// `tta.k` sorted with duplicates removed (warns on duplicates).
    pub fn tta_list(&self) -> Vec<usize> {
        let mut ks = self.tta.clone();
        ks.sort_unstable();
        let before = ks.len();
        ks.dedup();
        if ks.len() != before {
            log::warn!("duplicate TTA counts removed: {:?} -> {:?}", self.tta, ks);
        }
        ks
    }

    /// Largest ensemble any stage needs.
    pub fn max_k(&self) -> usize {
        self.tta.iter().copied().chain([self.tta_eval, self.icc_tta]).max().unwrap_or(1)
    }

    /// Canonical text form; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let join = |v: Vec<String>| v.join(",");
        let stage = |s: &Stage| match s {
            Stage::Table1 => "table1",
            Stage::Fig3 => "fig3",
            Stage::Privacy => "privacy",
        };
        let backend = match self.backend {
            BackendKind::Oracle => "oracle",
            BackendKind::Noisy => "noisy",
            BackendKind::Cnn => "cnn",
        };
        let p = &self.phantom;
        let mut lines = vec![
            format!("seed = {}", self.seed),
            format!("phantom.dims = {}", p.dims),
            format!("phantom.train_subjects = {}", p.train_subjects),
            format!("phantom.test_subjects = {}", p.test_subjects),
            format!("phantom.reference_scans = {}", p.reference_scans),
            format!("phantom.attacker_scans = {}", p.attacker_scans),
            format!("phantom.reid_subjects = {}", p.reid_subjects),
            format!("phantom.noise = {}", p.noise),
            format!("alpha.min = {}", self.alpha.min),
            format!("alpha.max = {}", self.alpha.max),
            format!("grid.patch = {}", self.patch),
            format!("grid.stride = {}", self.stride),
            format!("backend = {backend}"),
            format!("backend.noise = {}", self.noise_std),
            format!("train.patch = {}", self.train.patch[0]),
            format!("train.iterations = {}", self.train.iterations),
            format!("train.batch = {}", self.train.batch_size),
            format!("train.lr = {}", self.train.lr),
            format!("train.momentum = {}", self.train.momentum),
            format!("train.w_ce = {}", self.train.w_ce),
            format!("train.w_dice = {}", self.train.w_dice),
            format!("train.baseline_iterations = {}", self.baseline_iterations),
            format!("tta.k = {}", join(self.tta.iter().map(|k| k.to_string()).collect())),
            format!("tta.eval = {}", self.tta_eval),
            format!("icc.tta = {}", self.icc_tta),
            format!("stages = {}", join(self.stages.iter().map(|s| stage(s).to_string()).collect())),
            format!("privacy.alphas = {}", join(self.privacy.alphas.iter().map(|a| a.to_string()).collect())),
            format!("privacy.attacks = {}", join(self.privacy.attacks.iter().map(|a| a.name().to_string()).collect())),
            format!("privacy.library = {}", self.privacy.library),
            format!("privacy.tv_iterations = {}", self.privacy.tv_iterations),
            format!("privacy.tv_weight = {}", self.privacy.tv_weight),
            format!("privacy.patches_per_scan = {}", self.privacy.patches_per_scan),
        ];
        if let Some(ck) = &self.checkpoint {
            lines.push(format!("checkpoint = {}", ck.display()));
        }
        lines.push(format!("out = {}", self.out.display()));
        lines.join("\n") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::parse(&c.to_text()).unwrap(), ExperimentConfig { train: TrainConfig { seed: 0, ..c.train.clone() }, ..c });
    }

    #[test]
    fn parses_sections_and_lists() {
        let c = ExperimentConfig::parse("seed = 7\n# comment\nbackend = noisy\ntta.k = 1, 5,5,10\nalpha.min=0.3\nstages = table1\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.train.seed, 7);
        assert_eq!(c.backend, BackendKind::Noisy);
        assert_eq!(c.alpha.min, 0.3);
        assert_eq!(c.train.alpha.min, 0.3);
        assert_eq!(c.tta_list(), vec![1, 5, 10]);
        assert_eq!(c.stages, vec![Stage::Table1]);
    }

    #[test]
    fn empty_tta_list_is_allowed() {
        let c = ExperimentConfig::parse("tta.k =\n").unwrap();
        assert!(c.tta_list().is_empty());
    }

    #[test]
    fn bad_input_is_rejected() {
        for text in ["nonsense", "foo = 1", "seed = x", "seed = 1\nseed = 2", "tta.k = 0", "grid.patch = 64", "checkpoint = /no/such/file", "alpha.min = 0.9"] {
            assert!(matches!(ExperimentConfig::parse(text), Err(Error::Config(_))), "{text}");
        }
    }
}
