//! Multi-class cross entropy and soft Dice on probability fields `(C, n)`.

use crate::scalar::Scalar;

/// Smoothing constant added to numerator and denominator of the soft Dice.
pub const DICE_SMOOTH: f64 = 1e-5;
const LOG_FLOOR: f64 = 1e-12;

/// `-(1/n) sum_v sum_c y log p`.
pub fn cross_entropy<T: Scalar>(probs: &[T], target: &[T], classes: usize, n: usize) -> f64 {
    debug_assert_eq!(probs.len(), classes * n);
    let mut total = 0.0;
    for (p, y) in probs.iter().zip(target) {
        let y = y.as_f64();
        if y != 0.0 {
            total -= y * p.as_f64().max(LOG_FLOOR).ln();
        }
    }
    total / n as f64
}

/// Gradient of [`cross_entropy`] w.r.t. the softmax logits: `(p - y) / n`
/// (targets sum to one per voxel).
pub fn cross_entropy_logit_grad<T: Scalar>(probs: &[T], target: &[T], n: usize, weight: f64) -> Vec<T> {
    let s = T::of(weight / n as f64);
    probs.iter().zip(target).map(|(&p, &y)| (p - y) * s).collect()
}

/// `1 - mean_c (2 I_c + s) / (P_c + Y_c + s)` and its gradient w.r.t. `probs`, scaled by `weight`.
pub fn soft_dice<T: Scalar>(probs: &[T], target: &[T], classes: usize, n: usize, weight: f64) -> (f64, Vec<T>) {
    let mut grad = vec![T::zero(); probs.len()];
    let mut score = 0.0;
    for c in 0..classes {
        let p = &probs[c * n..(c + 1) * n];
        let y = &target[c * n..(c + 1) * n];
        let (mut inter, mut ps, mut ys) = (0.0, 0.0, 0.0);
        for (a, b) in p.iter().zip(y) {
            let (a, b) = (a.as_f64(), b.as_f64());
            inter += a * b;
            ps += a;
            ys += b;
        }
        let num = 2.0 * inter + DICE_SMOOTH;
        let den = ps + ys + DICE_SMOOTH;
        score += num / den;
        let scale = -weight / classes as f64 / (den * den);
        let g = &mut grad[c * n..(c + 1) * n];
        for (gv, b) in g.iter_mut().zip(y) {
            *gv = T::of(scale * (2.0 * b.as_f64() * den - num));
        }
    }
    (1.0 - score / classes as f64, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dice_loss_bounds() {
        let y = vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0];
        let (l, _) = soft_dice(&y, &y, 2, 4, 1.0);
        assert!(l.abs() < 1e-12);
        let wrong: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();
        let (l, _) = soft_dice(&wrong, &y, 2, 4, 1.0);
        assert!(l > 0.99 && l <= 1.0);
    }

    #[test]
    fn empty_class_has_no_nan() {
        let y = vec![1.0, 1.0, 0.0, 0.0];
        let (l, g) = soft_dice(&y, &y, 2, 2, 1.0);
        assert!(l.abs() < 1e-12 && g.iter().all(|v: &f64| v.is_finite()));
    }

    #[test]
    fn cross_entropy_is_non_negative() {
        let p = vec![0.7, 0.2, 0.3, 0.8];
        let y = vec![0.5, 0.0, 0.5, 1.0];
        assert!(cross_entropy(&p, &y, 2, 2) >= 0.0);
        assert!(cross_entropy(&[1.0, 0.0], &[1.0, 0.0], 2, 1).abs() < 1e-15);
    }

    #[test]
    fn dice_gradient_matches_finite_differences() {
        let p = vec![0.6, 0.3, 0.1, 0.4, 0.7, 0.9];
        let y = vec![1.0, 0.0, 0.5, 0.0, 1.0, 0.5];
        let (_, g) = soft_dice(&p, &y, 2, 3, 1.0);
        for i in 0..6 {
            let h = 1e-6;
            let mut a = p.clone();
            a[i] += h;
            let mut b = p.clone();
            b[i] -= h;
            let fd = (soft_dice(&a, &y, 2, 3, 1.0).0 - soft_dice(&b, &y, 2, 3, 1.0).0) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8);
        }
    }
}
