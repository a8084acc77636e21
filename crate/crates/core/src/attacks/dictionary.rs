use super::{check_alpha, AttackResult};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Volume;

const RANGE_WEIGHT: f64 = 10.0;

/// Attacker's prior score for a candidate image (lower is more plausible):
/// squared excursion outside `[0, 1]` plus mean squared forward difference.
pub fn plausibility(x: &[f64], dims: [usize; 3]) -> f64 {
    let [h, w, d] = dims;
    let n = x.len() as f64;
    let range: f64 = x.iter().map(|&v| (v.min(0.0) + (v - 1.0).max(0.0)).powi(2)).sum();
    let mut smooth = 0.0;
    for a in 0..h {
        for b in 0..w {
            for c in 0..d {
                let i = (a * w + b) * d + c;
                if a + 1 < h {
                    smooth += (x[i + w * d] - x[i]).powi(2);
                }
                if b + 1 < w {
                    smooth += (x[i + d] - x[i]).powi(2);
                }
                if c + 1 < d {
                    smooth += (x[i + 1] - x[i]).powi(2);
                }
            }
        }
    }
    (RANGE_WEIGHT * range + smooth) / n
}

/// Inverts the mixture with every library patch as the candidate reference and
/// keeps the most plausible target estimate.
pub fn dictionary_attack<T: Scalar>(x_mix: &Volume<T>, alpha: f64, library: &[Volume<T>]) -> Result<AttackResult<T>> {
    check_alpha(alpha)?;
    if library.is_empty() {
        return Err(Error::config("dictionary attack needs a non-empty library"));
    }
    let dims = x_mix.dims();
    let m: Vec<f64> = x_mix.data().iter().map(|v| v.as_f64()).collect();
    let beta = 1.0 - alpha;
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    for (k, r) in library.iter().enumerate() {
        if r.dims() != dims {
            return Err(Error::dim(format!("library patch {k} has dims {:?}, mixture {:?}", r.dims(), dims)));
        }
        let x: Vec<f64> = m.iter().zip(r.data()).map(|(mv, rv)| (mv - beta * rv.as_f64()) / alpha).collect();
        let score = plausibility(&x, dims);
        if best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, k, x));
        }
    }
    let (score, k, x) = best.expect("library is non-empty");
    let residual = x
        .iter()
        .zip(&m)
        .zip(library[k].data())
        .map(|((xv, mv), rv)| {
            let e = alpha * xv.clamp(0.0, 1.0) + beta * rv.as_f64() - mv;
            e * e
        })
        .sum::<f64>()
        / m.len() as f64;
    Ok(AttackResult {
        target: Volume::from_clamped(dims, x.into_iter().map(T::of).collect())?,
        reference: library[k].clone(),
        target_ms_ssim: None,
        reference_ms_ssim: None,
        residual,
        alpha,
        config: format!("dict library={} chosen={k} score={score:.4e}", library.len()),
    })
}
