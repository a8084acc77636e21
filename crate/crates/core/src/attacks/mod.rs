//! Single-channel source-separation attacks on intercepted mixtures.
//!
//! These are classical baselines (TV-regularized descent, dictionary search).
//! They are weaker than a learned generative prior, so the recovery scores
//! they produce are lower bounds on what a stronger adversary could achieve.

mod dictionary;
mod sweep;
mod tv;

pub use dictionary::{dictionary_attack, plausibility};
pub use sweep::{privacy_sweep, mix_volume, AttackKind, SweepConfig, SweepRow};
pub use tv::{total_variation, tv_alpha_grid_attack, tv_separation_attack, TvConfig, TvInit};

use crate::error::{Error, Result};
use crate::metrics::{ms_ssim_with, MsSsimConfig};
use crate::scalar::Scalar;
use crate::tensor::Volume;

/// `m` observed mixtures of `n` sources through an `m x n` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingSystem<T: Scalar = f32> {
    pub m: usize,
    pub n: usize,
    pub matrix: Vec<Vec<f64>>,
    pub observed: Vec<Volume<T>>,
}

impl<T: Scalar> MixingSystem<T> {
    pub fn new(matrix: Vec<Vec<f64>>, observed: Vec<Volume<T>>) -> Result<Self> {
        let m = matrix.len();
        let n = matrix.first().map_or(0, Vec::len);
        if m == 0 || n < 2 || matrix.iter().any(|row| row.len() != n) || observed.len() != m {
            return Err(Error::config("mixing system needs m >= 1 rows of n >= 2 coefficients and one observation per row"));
        }
        Ok(Self { m, n, matrix, observed })
    }

    /// The threat model here: one mixture of target and reference, `A = [alpha, 1 - alpha]`.
    pub fn single(x_mix: Volume<T>, alpha: f64) -> Result<Self> {
        Self::new(vec![vec![alpha, 1.0 - alpha]], vec![x_mix])
    }

    pub fn alpha(&self) -> f64 {
        self.matrix[0][0]
    }

    pub fn mixture(&self) -> &Volume<T> {
        &self.observed[0]
    }

    pub fn is_underdetermined(&self) -> bool {
        self.m < self.n
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult<T: Scalar = f32> {
    pub target: Volume<T>,
    pub reference: Volume<T>,
    pub target_ms_ssim: Option<f64>,
    pub reference_ms_ssim: Option<f64>,
    /// Mean squared residual of the data term at the returned estimates.
    pub residual: f64,
    pub alpha: f64,
    pub config: String,
}

impl<T: Scalar> AttackResult<T> {
    /// Fills the MS-SSIM of both estimates against the true sources.
    pub fn score(mut self, true_target: &Volume<T>, true_reference: Option<&Volume<T>>, cfg: &MsSsimConfig) -> Result<Self> {
        self.target_ms_ssim = Some(ms_ssim_with(&self.target, true_target, cfg)?);
        if let Some(r) = true_reference {
            self.reference_ms_ssim = Some(ms_ssim_with(&self.reference, r, cfg)?);
        }
        Ok(self)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::config(format!("attack alpha {alpha} outside (0, 1]")));
    }
    Ok(())
}
