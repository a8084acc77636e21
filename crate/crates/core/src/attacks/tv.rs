use rand::Rng;

use super::{check_alpha, AttackResult};
use crate::error::{Error, Result};
use crate::metrics::MsSsimConfig;
use crate::scalar::Scalar;
use crate::seeds::rng_from;
use crate::tensor::{Dims3, Volume};

/// Smoothing of the isotropic TV magnitude so the objective is differentiable.
const TV_EPS: f64 = 1e-2;
const DIVERGENCE_STREAK: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TvInit {
    /// Both estimates start at the observed mixture.
    Mixture,
    /// Independent uniform noise in [0, 1] from the given seed.
    Random(u64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvConfig {
    pub iterations: usize,
    pub tv_weight: f64,
    /// Step size; `None` picks the reciprocal of the objective's Lipschitz bound.
    pub step: Option<f64>,
    pub init: TvInit,
}

impl Default for TvConfig {
    fn default() -> Self {
        Self { iterations: 300, tv_weight: 0.05, step: None, init: TvInit::Mixture }
    }
}

/// Forward differences with reflective boundaries (the difference past the last voxel is zero).
fn forward_diffs(x: &[f64], dims: Dims3, i: usize) -> [f64; 3] {
    let [h, w, d] = dims;
    let (a, b, c) = (i / (w * d), (i / d) % w, i % d);
    let dx = if a + 1 < h { x[i + w * d] - x[i] } else { 0.0 };
    let dy = if b + 1 < w { x[i + d] - x[i] } else { 0.0 };
    let dz = if c + 1 < d { x[i + 1] - x[i] } else { 0.0 };
    [dx, dy, dz]
}

/// Smoothed isotropic total variation and its gradient, accumulated into `grad` scaled by `weight`.
fn tv_value_grad(x: &[f64], dims: Dims3, weight: f64, grad: &mut [f64]) -> f64 {
    let [_, w, d] = dims;
    let strides = [w * d, d, 1];
    let mut total = 0.0;
    for i in 0..x.len() {
        let g = forward_diffs(x, dims, i);
        let mag = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2] + TV_EPS * TV_EPS).sqrt();
        total += mag - TV_EPS;
        if weight != 0.0 {
            for (a, s) in strides.iter().enumerate() {
                if g[a] != 0.0 {
                    let q = weight * g[a] / mag;
                    grad[i + s] += q;
                    grad[i] -= q;
                }
            }
        }
    }
    total
}

/// Isotropic total variation with forward differences and reflective boundaries.
pub fn total_variation<T: Scalar>(x: &Volume<T>) -> f64 {
    let data: Vec<f64> = x.data().iter().map(|v| v.as_f64()).collect();
    (0..data.len())
        .map(|i| {
            let g = forward_diffs(&data, x.dims(), i);
            (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt()
        })
        .sum()
}

/// Minimizes `|a x + (1-a) r - x_mix|^2 + tv_weight (TV(x) + TV(r))` over both sources.
///
/// `alpha = None` means the attacker does not know the mixing weight and assumes 0.5.
pub fn tv_separation_attack<T: Scalar>(x_mix: &Volume<T>, alpha: Option<f64>, cfg: &TvConfig) -> Result<AttackResult<T>> {
    let alpha = alpha.unwrap_or(0.5);
    check_alpha(alpha)?;
    if cfg.iterations == 0 {
        return Err(Error::config("attack needs at least one iteration"));
    }
    if !(cfg.tv_weight >= 0.0) {
        return Err(Error::config("tv weight must be non-negative"));
    }
    let dims = x_mix.dims();
    let m: Vec<f64> = x_mix.data().iter().map(|v| v.as_f64()).collect();
    let n = m.len();
    let beta = 1.0 - alpha;
    let (mut x, mut r) = match cfg.init {
        TvInit::Mixture => (m.clone(), m.clone()),
        TvInit::Random(seed) => {
            let mut rng = rng_from(seed);
            let x = (0..n).map(|_| rng.random::<f64>()).collect();
            let r = (0..n).map(|_| rng.random::<f64>()).collect();
            (x, r)
        }
    };
    // Data term Hessian norm is 2(a^2 + b^2); the smoothed TV term adds at most 24 w / eps.
    let lipschitz = 2.0 * (alpha * alpha + beta * beta) + 24.0 * cfg.tv_weight / TV_EPS;
    let step = cfg.step.unwrap_or(1.0 / lipschitz);
    let mut gx = vec![0.0; n];
    let mut gr = vec![0.0; n];
    let mut prev = f64::INFINITY;
    let mut streak = 0;
    let mut residual = 0.0;
    for it in 0..cfg.iterations {
        gx.iter_mut().for_each(|g| *g = 0.0);
        gr.iter_mut().for_each(|g| *g = 0.0);
        let mut data = 0.0;
        for i in 0..n {
            let e = alpha * x[i] + beta * r[i] - m[i];
            data += e * e;
            gx[i] = 2.0 * alpha * e;
            gr[i] = 2.0 * beta * e;
        }
        let tv = tv_value_grad(&x, dims, cfg.tv_weight, &mut gx) + tv_value_grad(&r, dims, cfg.tv_weight, &mut gr);
        let loss = (data + cfg.tv_weight * tv) / n as f64;
        residual = data / n as f64;
        if !loss.is_finite() {
            return Err(Error::Divergence { iteration: it, streak });
        }
        streak = if loss > prev { streak + 1 } else { 0 };
        if streak >= DIVERGENCE_STREAK {
            return Err(Error::Divergence { iteration: it, streak });
        }
        prev = loss;
        for i in 0..n {
            x[i] -= step * gx[i];
            r[i] -= step * gr[i];
        }
    }
    let final_residual = (0..n)
        .map(|i| {
            let e = alpha * x[i] + beta * r[i] - m[i];
            e * e
        })
        .sum::<f64>()
        / n as f64;
    log::debug!("tv attack: residual {residual:.3e} -> {final_residual:.3e}");
    let to_vol = |v: Vec<f64>| Volume::from_clamped(dims, v.into_iter().map(T::of).collect());
    Ok(AttackResult {
        target: to_vol(x)?,
        reference: to_vol(r)?,
        target_ms_ssim: None,
        reference_ms_ssim: None,
        residual: final_residual,
        alpha,
        config: format!("tv iterations={} tv_weight={} init={:?}", cfg.iterations, cfg.tv_weight, cfg.init),
    })
}

/// Unknown-alpha mode: runs the TV attack at every grid value and keeps the best
/// recovery against the true target (the attacker's best case).
pub fn tv_alpha_grid_attack<T: Scalar>(
    x_mix: &Volume<T>,
    grid: &[f64],
    cfg: &TvConfig,
    true_target: &Volume<T>,
    ssim: &MsSsimConfig,
) -> Result<AttackResult<T>> {
    let mut best: Option<AttackResult<T>> = None;
    for &a in grid {
        let res = tv_separation_attack(x_mix, Some(a), cfg)?.score(true_target, None, ssim)?;
        if best.as_ref().is_none_or(|b| res.target_ms_ssim > b.target_ms_ssim) {
            best = Some(res);
        }
    }
    best.ok_or_else(|| Error::config("empty alpha grid"))
}
