//! The privacy codec: convex mixing with private references, naive inversion,
//! and reference-ensemble test-time augmentation.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{grid::crop, voxel_count, Dims3, LabelField, Volume};

/// Closed interval the mixing coefficient is drawn from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaBounds {
    pub min: f64,
    pub max: f64,
}

impl Default for AlphaBounds {
    fn default() -> Self {
        Self { min: 0.2, max: 0.8 }
    }
}

impl AlphaBounds {
    /// `max` may be 1, which disables mixing.
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min > 0.0 && min <= max && max <= 1.0) {
            return Err(Error::config(format!("alpha bounds ({min}, {max}) must satisfy 0 < min <= max <= 1")));
        }
        Ok(Self { min, max })
    }

    pub fn fixed(alpha: f64) -> Result<Self> {
        Self::new(alpha, alpha)
    }

    pub fn contains(&self, alpha: f64) -> bool {
        alpha >= self.min && alpha <= self.max
    }
}

/// Uniform draw from the bounds.
pub fn sample_alpha<R: Rng + ?Sized>(rng: &mut R, bounds: AlphaBounds) -> Result<f64> {
    let bounds = AlphaBounds::new(bounds.min, bounds.max)?;
    if bounds.min == bounds.max {
        return Ok(bounds.min);
    }
    Ok(bounds.min + (bounds.max - bounds.min) * rng.random::<f64>())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::config(format!("alpha {alpha} outside (0, 1]")));
    }
    Ok(())
}

/// `alpha * x_target + (1 - alpha) * x_ref`, voxelwise.
pub fn mix_image<T: Scalar>(x_target: &Volume<T>, x_ref: &Volume<T>, alpha: f64) -> Result<Volume<T>> {
    if x_target.dims() != x_ref.dims() {
        return Err(Error::dim(format!("target {:?} vs reference {:?}", x_target.dims(), x_ref.dims())));
    }
    check_alpha(alpha)?;
    let a = T::of(alpha);
    let b = T::of(1.0 - alpha);
    let data = x_target.data().iter().zip(x_ref.data()).map(|(&t, &r)| a * t + b * r).collect();
    Ok(Volume::from_clamped(x_target.dims(), data)?.with_ids(x_target.subject_id.clone(), x_target.scan_id.clone()))
}

fn check_labels<T: Scalar>(a: &LabelField<T>, b: &LabelField<T>) -> Result<()> {
    if a.dims() != b.dims() || a.classes() != b.classes() {
        return Err(Error::dim(format!(
            "label fields ({}, {:?}) and ({}, {:?}) differ",
            a.classes(),
            a.dims(),
            b.classes(),
            b.dims()
        )));
    }
    Ok(())
}

/// Convex combination of two label fields.
pub fn mix_labels<T: Scalar>(y_target: &LabelField<T>, y_ref: &LabelField<T>, alpha: f64) -> Result<LabelField<T>> {
    check_labels(y_target, y_ref)?;
    check_alpha(alpha)?;
    let a = T::of(alpha);
    let b = T::of(1.0 - alpha);
    let data = y_target.data().iter().zip(y_ref.data()).map(|(&t, &r)| a * t + b * r).collect();
    LabelField::new(y_target.classes(), y_target.dims(), data)
}

/// The raw linear inverse `(y_mix_hat - (1 - alpha) y_ref) / alpha`, before any projection.
pub fn naive_unmix_raw<T: Scalar>(
    y_mix_hat: &LabelField<T>,
    y_ref: &LabelField<T>,
    alpha: f64,
    alpha_min: f64,
) -> Result<Vec<T>> {
    check_labels(y_mix_hat, y_ref)?;
    if !(alpha >= alpha_min) {
        return Err(Error::Stability { alpha, alpha_min });
    }
    check_alpha(alpha)?;
    let inv = T::of(1.0 / alpha);
    let b = T::of(1.0 - alpha);
    Ok(y_mix_hat.data().iter().zip(y_ref.data()).map(|(&m, &r)| (m - b * r) * inv).collect())
}

/// Naive unmixing projected back onto the simplex (clamp, then L1 renormalize).
pub fn naive_unmix<T: Scalar>(
    y_mix_hat: &LabelField<T>,
    y_ref: &LabelField<T>,
    alpha: f64,
    alpha_min: f64,
) -> Result<LabelField<T>> {
    let raw = naive_unmix_raw(y_mix_hat, y_ref, alpha, alpha_min)?;
    LabelField::project_simplex(y_mix_hat.classes(), y_mix_hat.dims(), raw)
}

/// One private reference: an intensity patch and its one-hot labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference<T: Scalar = f32> {
    pub image: Volume<T>,
    pub labels: LabelField<T>,
}

impl<T: Scalar> Reference<T> {
    pub fn new(image: Volume<T>, labels: LabelField<T>) -> Result<Self> {
        if image.dims() != labels.dims() {
            return Err(Error::dim("reference image and labels differ in shape"));
        }
        if !labels.is_one_hot() {
            return Err(Error::config("reference labels must be one-hot"));
        }
        Ok(Self { image, labels })
    }
}

/// The client's secret for one target patch: alpha plus K references.
#[derive(Debug, Clone, PartialEq)]
pub struct MixKey<T: Scalar = f32> {
    alpha: f64,
    references: Vec<Reference<T>>,
    rng_seed: u64,
}

impl<T: Scalar> MixKey<T> {
    pub fn new(alpha: f64, bounds: AlphaBounds, references: Vec<Reference<T>>, rng_seed: u64) -> Result<Self> {
        if !bounds.contains(alpha) {
            return Err(Error::config(format!("alpha {alpha} outside [{}, {}]", bounds.min, bounds.max)));
        }
        check_alpha(alpha)?;
        if references.is_empty() {
            return Err(Error::config("mix key needs at least one reference"));
        }
        let dims = references[0].image.dims();
        if references.iter().any(|r| r.image.dims() != dims || !r.labels.is_one_hot()) {
            return Err(Error::config("references must be one-hot and share patch dims"));
        }
        Ok(Self { alpha, references, rng_seed })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn references(&self) -> &[Reference<T>] {
        &self.references
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn len(&self) -> usize {
        self.references.len()
    }

    pub fn is_empty(&self) -> bool {
        self.references.is_empty()
    }
}

/// One encoded mixture ready for the server.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedPatchPair<T: Scalar = f32> {
    pub x_mix: Volume<T>,
    pub y_mix: Option<LabelField<T>>,
    pub alpha: f64,
    pub reference_index: usize,
}

/// Mixes the target with each reference of the key using the key's single alpha.
pub fn tta_encode<T: Scalar>(x_target: &Volume<T>, key: &MixKey<T>) -> Result<Vec<MixedPatchPair<T>>> {
    if key.references.is_empty() {
        return Err(Error::config("empty reference list"));
    }
    key.references
        .iter()
        .enumerate()
        .map(|(k, r)| {
            Ok(MixedPatchPair {
                x_mix: mix_image(x_target, &r.image, key.alpha)?,
                y_mix: None,
                alpha: key.alpha,
                reference_index: k,
            })
        })
        .collect()
}

/// Training-time variant: also mixes the target labels.
pub fn tta_encode_labeled<T: Scalar>(
    x_target: &Volume<T>,
    y_target: &LabelField<T>,
    key: &MixKey<T>,
) -> Result<Vec<MixedPatchPair<T>>> {
    let mut pairs = tta_encode(x_target, key)?;
    for (pair, r) in pairs.iter_mut().zip(&key.references) {
        pair.y_mix = Some(mix_labels(y_target, &r.labels, key.alpha)?);
    }
    Ok(pairs)
}

/// Voxelwise mean of the per-reference predictions.
pub fn tta_decode<T: Scalar>(predictions: &[LabelField<T>]) -> Result<LabelField<T>> {
    let first = predictions.first().ok_or_else(|| Error::config("no predictions to ensemble"))?;
    let mut acc = vec![0.0f64; first.data().len()];
    for p in predictions {
        check_labels(first, p)?;
        for (a, v) in acc.iter_mut().zip(p.data()) {
            *a += v.as_f64();
        }
    }
    let k = predictions.len() as f64;
    LabelField::new(first.classes(), first.dims(), acc.into_iter().map(|a| T::of(a / k)).collect())
}

/// Client-private labeled scans from which reference patches are cut.
#[derive(Debug, Clone, Default)]
pub struct ReferencePool<T: Scalar = f32> {
    scans: Vec<(Volume<T>, LabelField<T>)>,
}

impl<T: Scalar> ReferencePool<T> {
    pub fn new(scans: Vec<(Volume<T>, LabelField<T>)>) -> Result<Self> {
        if scans.is_empty() {
            return Err(Error::config("reference pool is empty"));
        }
        for (v, l) in &scans {
            if v.dims() != l.dims() || !l.is_one_hot() {
                return Err(Error::config("reference pool scans need matching one-hot labels"));
            }
        }
        Ok(Self { scans })
    }

    pub fn len(&self) -> usize {
        self.scans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scans.is_empty()
    }

    pub fn scans(&self) -> &[(Volume<T>, LabelField<T>)] {
        &self.scans
    }

    /// Number of distinct (scan, origin) positions for a patch shape.
    pub fn positions(&self, patch: Dims3) -> usize {
        self.scans
            .iter()
            .map(|(v, _)| {
                let d = v.dims();
                (0..3).map(|a| d[a].saturating_sub(patch[a] - 1)).product::<usize>()
            })
            .sum()
    }

    /// Cuts the reference patch at a flat position index.
    pub fn reference_at(&self, patch: Dims3, mut position: usize) -> Result<Reference<T>> {
        for (v, l) in &self.scans {
            let d = v.dims();
            let span = [d[0] + 1 - patch[0], d[1] + 1 - patch[1], d[2] + 1 - patch[2]];
            let count = span[0] * span[1] * span[2];
            if position < count {
                let origin = [position / (span[1] * span[2]), (position / span[2]) % span[1], position % span[2]];
                let mut img = Vec::with_capacity(voxel_count(patch));
                crop(v.data(), d, origin, patch, &mut img);
                let mut lab = Vec::with_capacity(l.classes() * voxel_count(patch));
                for c in 0..l.classes() {
                    crop(l.channel(c), d, origin, patch, &mut lab);
                }
                return Reference::new(Volume::new(patch, img)?, LabelField::new(l.classes(), patch, lab)?);
            }
            position -= count;
        }
        Err(Error::config("reference position out of range"))
    }

    /// Draws `k` references at distinct uniformly random locations (without replacement).
    pub fn draw_key<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        patch: Dims3,
        alpha: f64,
        bounds: AlphaBounds,
        k: usize,
    ) -> Result<MixKey<T>> {
        if k == 0 {
            return Err(Error::config("TTA count must be at least 1"));
        }
        let total = self.positions(patch);
        if total < k {
            return Err(Error::config(format!("pool has {total} positions, {k} references requested")));
        }
        let seed = rng.random::<u64>();
        let refs = sample(rng, total, k)
            .into_iter()
            .map(|p| self.reference_at(patch, p))
            .collect::<Result<Vec<_>>>()?;
        MixKey::new(alpha, bounds, refs, seed)
    }
}
