use std::str::FromStr;

use rand::Rng;

use super::{dictionary_attack, tv_separation_attack, TvConfig};
use crate::error::{Error, Result};
use crate::metrics::{ms_ssim_with, reid_retrieval, similarity_matrix, MsSsimConfig};
use crate::mixer::{mix_image, ReferencePool};
use crate::parallel::par_map;
use crate::scalar::Scalar;
use crate::seeds::{child_seed, rng_from, Stream};
use crate::tensor::grid::crop;
use crate::tensor::{extract_patches, reassemble_volume, voxel_count, Dims3, Patch, PatchGrid, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    Tv,
    Dictionary,
    /// Inversion with the true key; the upper bound on any attack.
    Keyed,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Tv => "tv",
            Self::Dictionary => "dict",
            Self::Keyed => "keyed",
        }
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tv" => Ok(Self::Tv),
            "dict" => Ok(Self::Dictionary),
            "keyed" => Ok(Self::Keyed),
            other => Err(Error::config(format!("unknown attack {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub alphas: Vec<f64>,
    pub attacks: Vec<AttackKind>,
    /// Mixing patch size; also the size of attacked patches.
    pub patch: Dims3,
    /// Attacked patches per scan.
    pub patches_per_scan: usize,
    pub library_size: usize,
    pub tv: TvConfig,
    pub ssim: MsSsimConfig,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            alphas: vec![0.2, 0.4, 0.5, 0.6, 0.8, 1.0],
            attacks: vec![AttackKind::Tv, AttackKind::Dictionary],
            patch: [16; 3],
            patches_per_scan: 1,
            library_size: 100,
            tv: TvConfig::default(),
            ssim: MsSsimConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub alpha: f64,
    pub attack: AttackKind,
    pub mean_ms_ssim: f64,
    pub std_ms_ssim: f64,
    pub reid_f1: f64,
    pub reid_map: f64,
}

fn random_patch<T: Scalar, R: Rng>(pool: &ReferencePool<T>, patch: Dims3, rng: &mut R) -> Result<Volume<T>> {
    Ok(pool.reference_at(patch, rng.random_range(0..pool.positions(patch)))?.image)
}

fn random_crop<T: Scalar, R: Rng>(vol: &Volume<T>, patch: Dims3, rng: &mut R) -> Result<Volume<T>> {
    let d = vol.dims();
    if (0..3).any(|a| patch[a] > d[a]) {
        return Err(Error::dim(format!("patch {patch:?} larger than volume {d:?}")));
    }
    let origin = [0, 1, 2].map(|a| rng.random_range(0..=d[a] - patch[a]));
    let mut out = Vec::with_capacity(voxel_count(patch));
    crop(vol.data(), d, origin, patch, &mut out);
    Volume::new(patch, out)
}

/// Replaces every tile of `vol` by its mixture with a reference patch from a random pool location.
pub fn mix_volume<T: Scalar, R: Rng>(vol: &Volume<T>, pool: &ReferencePool<T>, patch: Dims3, alpha: f64, rng: &mut R) -> Result<Volume<T>> {
    let grid = PatchGrid::tiled(vol.dims(), patch)?;
    let mixed = extract_patches(vol, &grid)?
        .into_iter()
        .map(|p| {
            let r = random_patch(pool, patch, rng)?;
            Ok(Patch { origin: p.origin, data: mix_image(&p.data, &r, alpha)? })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(reassemble_volume(&mixed, vol.dims())?.with_ids(vol.subject_id.clone(), vol.scan_id.clone()))
}

struct Trial<T: Scalar> {
    target: Volume<T>,
    reference: Volume<T>,
    library: Vec<Volume<T>>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

fn attack_score<T: Scalar>(kind: AttackKind, trial: &Trial<T>, alpha: f64, cfg: &SweepConfig) -> Result<f64> {
    let x_mix = mix_image(&trial.target, &trial.reference, alpha)?;
    let estimate = match kind {
        AttackKind::Tv => tv_separation_attack(&x_mix, Some(alpha), &cfg.tv)?.target,
        AttackKind::Dictionary => dictionary_attack(&x_mix, alpha, &trial.library)?.target,
        AttackKind::Keyed => {
            let (inv, b) = (T::of(1.0 / alpha), T::of(1.0 - alpha));
            let raw = x_mix.data().iter().zip(trial.reference.data()).map(|(&m, &r)| (m - b * r) * inv).collect();
            Volume::from_clamped(x_mix.dims(), raw)?
        }
    };
    ms_ssim_with(&estimate, &trial.target, &cfg.ssim)
}

/// One row per `(alpha, attack)`: mean attack recovery MS-SSIM on patch mixtures and
/// re-identification on whole volumes mixed tile by tile at that alpha.
///
/// `dataset` needs subject ids set; `client_pool` supplies the client's references,
/// `attacker_pool` the attacker's independently generated library.
pub fn privacy_sweep<T: Scalar>(
    dataset: &[Volume<T>],
    client_pool: &ReferencePool<T>,
    attacker_pool: &ReferencePool<T>,
    cfg: &SweepConfig,
) -> Result<Vec<SweepRow>> {
    if cfg.alphas.is_empty() || cfg.attacks.is_empty() {
        return Err(Error::config("sweep needs at least one alpha and one attack"));
    }
    let mut per_subject = std::collections::HashMap::new();
    for v in dataset {
        *per_subject.entry(v.subject_id.as_str()).or_insert(0usize) += 1;
    }
    if per_subject.values().any(|&c| c < 2) {
        return Err(Error::config("every subject needs at least two scans"));
    }
    let subjects: Vec<String> = dataset.iter().map(|v| v.subject_id.clone()).collect();

    let mut trials = Vec::new();
    for (i, vol) in dataset.iter().enumerate() {
        let mut rng = rng_from(child_seed(cfg.seed, Stream::Attack, i as u64));
        for _ in 0..cfg.patches_per_scan {
            let target = random_crop(vol, cfg.patch, &mut rng)?;
            let reference = random_patch(client_pool, cfg.patch, &mut rng)?;
            let library = if cfg.attacks.contains(&AttackKind::Dictionary) {
                (0..cfg.library_size).map(|_| random_patch(attacker_pool, cfg.patch, &mut rng)).collect::<Result<_>>()?
            } else {
                Vec::new()
            };
            trials.push(Trial { target, reference, library });
        }
    }

    let mut rows = Vec::new();
    for (ai, &alpha) in cfg.alphas.iter().enumerate() {
        let mixed = dataset
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let mut rng = rng_from(child_seed(cfg.seed ^ 0x5eed, Stream::Mix, (ai * dataset.len() + i) as u64));
                mix_volume(v, client_pool, cfg.patch, alpha, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let reid = reid_retrieval(&subjects, &similarity_matrix(&mixed, &cfg.ssim)?)?;
        for &kind in &cfg.attacks {
            let scores = par_map(&trials, |_, t| attack_score(kind, t, alpha, cfg)).into_iter().collect::<Result<Vec<_>>>()?;
            let (mean, std) = mean_std(&scores);
            log::info!("alpha {alpha}: {} ms-ssim {mean:.3} +- {std:.3}, reid map {:.3}", kind.name(), reid.map);
            rows.push(SweepRow { alpha, attack: kind, mean_ms_ssim: mean, std_ms_ssim: std, reid_f1: reid.f1, reid_map: reid.map });
        }
    }
    Ok(rows)
}
