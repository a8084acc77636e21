//! Dense 3D containers, patch gridding and the MXSG tensor container.

pub(crate) mod grid;
mod mxsg;

pub use grid::{extract_label_patches, extract_patches, reassemble, reassemble_volume, Patch, PatchGrid};
pub use mxsg::{Tensor, MXSG_MAGIC, MXSG_VERSION};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Spatial extent `(H, W, D)` in voxels.
pub type Dims3 = [usize; 3];

/// Tolerance on per-voxel channel sums of a [`LabelField`].
pub const SIMPLEX_TOL: f64 = 1e-5;

#[inline]
pub fn voxel_count(dims: Dims3) -> usize {
    dims[0] * dims[1] * dims[2]
}

#[inline]
pub(crate) fn flat_index(dims: Dims3, h: usize, w: usize, d: usize) -> usize {
    (h * dims[1] + w) * dims[2] + d
}

/// A scan (or a patch of one): scalar intensities in `[0, 1]`, row-major `(H, W, D)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T: Scalar = f32> {
    dims: Dims3,
    data: Vec<T>,
    pub subject_id: String,
    pub scan_id: String,
}

impl<T: Scalar> Volume<T> {
    /// Builds a volume, rejecting wrong lengths and values outside `[0, 1]`.
    pub fn new(dims: Dims3, data: Vec<T>) -> Result<Self> {
        if data.len() != voxel_count(dims) {
            return Err(Error::dim(format!(
                "volume data has {} values, dims {:?} need {}",
                data.len(),
                dims,
                voxel_count(dims)
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || **v < T::zero() || **v > T::one()) {
            return Err(Error::Format(format!("intensity {bad} outside [0, 1]")));
        }
        Ok(Self { dims, data, subject_id: String::new(), scan_id: String::new() })
    }

    /// Builds a volume after clamping every value into `[0, 1]` (NaN maps to 0).
    pub fn from_clamped(dims: Dims3, mut data: Vec<T>) -> Result<Self> {
        for v in &mut data {
            *v = if v.is_nan() { T::zero() } else { v.max(T::zero()).min(T::one()) };
        }
        Self::new(dims, data)
    }

    pub fn filled(dims: Dims3, value: T) -> Result<Self> {
        Self::new(dims, vec![value; voxel_count(dims)])
    }

    pub fn with_ids(mut self, subject_id: impl Into<String>, scan_id: impl Into<String>) -> Self {
        self.subject_id = subject_id.into();
        self.scan_id = scan_id.into();
        self
    }

    pub fn dims(&self) -> Dims3 {
        self.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, h: usize, w: usize, d: usize) -> T {
        self.data[flat_index(self.dims, h, w, d)]
    }

    /// Converts to another precision.
    pub fn cast<U: Scalar>(&self) -> Volume<U> {
        Volume {
            dims: self.dims,
            data: self.data.iter().map(|v| U::of(v.as_f64()).max(U::zero()).min(U::one())).collect(),
            subject_id: self.subject_id.clone(),
            scan_id: self.scan_id.clone(),
        }
    }

    /// Axis-aligned 2D slice through voxel `index` of `axis`; returns `(rows, cols, values)`.
    pub fn slice(&self, axis: usize, index: usize) -> (usize, usize, Vec<T>) {
        let [h, w, d] = self.dims;
        match axis {
            0 => (w, d, (0..w).flat_map(|j| (0..d).map(move |k| (j, k))).map(|(j, k)| self.get(index, j, k)).collect()),
            1 => (h, d, (0..h).flat_map(|i| (0..d).map(move |k| (i, k))).map(|(i, k)| self.get(i, index, k)).collect()),
            _ => (h, w, (0..h).flat_map(|i| (0..w).map(move |j| (i, j))).map(|(i, j)| self.get(i, j, index)).collect()),
        }
    }
}

/// Per-voxel class probabilities, channel-major `(C, H, W, D)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelField<T: Scalar = f32> {
    classes: usize,
    dims: Dims3,
    data: Vec<T>,
}

impl<T: Scalar> LabelField<T> {
    /// Builds a field, checking that every voxel is a point of the probability simplex.
    pub fn new(classes: usize, dims: Dims3, data: Vec<T>) -> Result<Self> {
        let field = Self::new_unchecked(classes, dims, data)?;
        field.check_simplex(SIMPLEX_TOL)?;
        Ok(field)
    }

    /// Length checks only; used for intermediate results that are renormalized later.
    pub(crate) fn new_unchecked(classes: usize, dims: Dims3, data: Vec<T>) -> Result<Self> {
        if classes == 0 {
            return Err(Error::dim("label field needs at least one class"));
        }
        if data.len() != classes * voxel_count(dims) {
            return Err(Error::dim(format!(
                "label data has {} values, ({classes}, {dims:?}) needs {}",
                data.len(),
                classes * voxel_count(dims)
            )));
        }
        Ok(Self { classes, dims, data })
    }

    /// One-hot field from per-voxel class indices.
    pub fn one_hot(classes: usize, dims: Dims3, labels: &[u8]) -> Result<Self> {
        let n = voxel_count(dims);
        if labels.len() != n {
            return Err(Error::dim(format!("{} labels for {n} voxels", labels.len())));
        }
        let mut data = vec![T::zero(); classes * n];
        for (v, &l) in labels.iter().enumerate() {
            let l = l as usize;
            if l >= classes {
                return Err(Error::dim(format!("label {l} out of range for {classes} classes")));
            }
            data[l * n + v] = T::one();
        }
        Ok(Self { classes, dims, data })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dims(&self) -> Dims3 {
        self.dims
    }

    pub fn voxels(&self) -> usize {
        voxel_count(self.dims)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.voxels();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn prob(&self, c: usize, voxel: usize) -> T {
        self.data[c * self.voxels() + voxel]
    }

    /// Hard labels; ties go to the lower class index.
    pub fn argmax(&self) -> Vec<u8> {
        let n = self.voxels();
        (0..n)
            .map(|v| {
                let mut best = 0;
                let mut best_p = self.data[v];
                for c in 1..self.classes {
                    let p = self.data[c * n + v];
                    if p > best_p {
                        best = c;
                        best_p = p;
                    }
                }
                best as u8
            })
            .collect()
    }

    pub fn is_one_hot(&self) -> bool {
        let n = self.voxels();
        (0..n).all(|v| {
            let mut ones = 0;
            for c in 0..self.classes {
                let p = self.data[c * n + v];
                if p == T::one() {
                    ones += 1;
                } else if p != T::zero() {
                    return false;
                }
            }
            ones == 1
        })
    }

    pub fn check_simplex(&self, tol: f64) -> Result<()> {
        let n = self.voxels();
        for v in 0..n {
            let mut sum = 0.0;
            for c in 0..self.classes {
                let p = self.data[c * n + v].as_f64();
                if !p.is_finite() || p < -tol {
                    return Err(Error::Format(format!("voxel {v} has invalid probability {p}")));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > tol {
                return Err(Error::Format(format!("voxel {v} channel sum {sum} is not 1")));
            }
        }
        Ok(())
    }

    /// Clamps to `[0, 1]` and rescales each voxel to unit L1 norm.
    /// A voxel whose channels all clamp to zero becomes uniform.
    pub fn project_simplex(classes: usize, dims: Dims3, mut data: Vec<T>) -> Result<Self> {
        let n = voxel_count(dims);
        if data.len() != classes * n {
            return Err(Error::dim("label data length mismatch"));
        }
        let uniform = T::one() / T::of(classes as f64);
        for v in 0..n {
            let mut sum = T::zero();
            for c in 0..classes {
                let p = &mut data[c * n + v];
                *p = if p.is_nan() { T::zero() } else { p.max(T::zero()).min(T::one()) };
                sum += *p;
            }
            for c in 0..classes {
                let p = &mut data[c * n + v];
                *p = if sum > T::zero() { *p / sum } else { uniform };
            }
        }
        Self::new(classes, dims, data)
    }

    pub fn cast<U: Scalar>(&self) -> LabelField<U> {
        LabelField { classes: self.classes, dims: self.dims, data: self.data.iter().map(|v| U::of(v.as_f64())).collect() }
    }
}
