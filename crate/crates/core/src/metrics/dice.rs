use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::LabelField;

/// Per-class Dice and the macro average over foreground classes (1..C).
#[derive(Debug, Clone, PartialEq)]
pub struct DiceReport {
    pub per_class: Vec<f64>,
    pub macro_avg: f64,
}

fn check<T: Scalar>(pred: &LabelField<T>, gt: &LabelField<T>) -> Result<()> {
    if pred.dims() != gt.dims() || pred.classes() != gt.classes() {
        return Err(Error::dim(format!(
            "prediction ({}, {:?}) vs ground truth ({}, {:?})",
            pred.classes(),
            pred.dims(),
            gt.classes(),
            gt.dims()
        )));
    }
    Ok(())
}

fn from_hard(a: &[u8], b: &[u8], class: u8) -> f64 {
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        let (ia, ib) = (x == class, y == class);
        na += ia as usize;
        nb += ib as usize;
        inter += (ia && ib) as usize;
    }
    if na + nb == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (na + nb) as f64
    }
}

/// `2|A∩B| / (|A| + |B|)` for one class after argmax hardening; 1 when both masks are empty.
pub fn dice<T: Scalar>(pred: &LabelField<T>, gt: &LabelField<T>, class: usize) -> Result<f64> {
    check(pred, gt)?;
    if class >= gt.classes() {
        return Err(Error::dim(format!("class {class} out of range")));
    }
    Ok(from_hard(&pred.argmax(), &gt.argmax(), class as u8))
}

pub fn dice_report<T: Scalar>(pred: &LabelField<T>, gt: &LabelField<T>) -> Result<DiceReport> {
    check(pred, gt)?;
    let (a, b) = (pred.argmax(), gt.argmax());
    let per_class: Vec<f64> = (0..gt.classes()).map(|c| from_hard(&a, &b, c as u8)).collect();
    let fg = if per_class.len() > 1 { &per_class[1..] } else { &per_class[..] };
    let macro_avg = fg.iter().sum::<f64>() / fg.len() as f64;
    Ok(DiceReport { per_class, macro_avg })
}

pub fn macro_dice<T: Scalar>(pred: &LabelField<T>, gt: &LabelField<T>) -> Result<f64> {
    Ok(dice_report(pred, gt)?.macro_avg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn field(labels: &[u8]) -> LabelField<f64> {
        LabelField::one_hot(2, [1, 1, labels.len()], labels).unwrap()
    }

    #[test]
    fn identical_is_one() {
        let a = field(&[0, 1, 1, 0, 1]);
        assert_eq!(dice_report(&a, &a).unwrap().per_class, vec![1.0, 1.0]);
    }

    #[test]
    fn disjoint_is_zero() {
        let a = field(&[1, 1, 1, 1, 0, 0, 0, 0]);
        let b = field(&[0, 0, 0, 0, 1, 1, 1, 1]);
        assert_eq!(dice(&a, &b, 1).unwrap(), 0.0);
    }

    #[test]
    fn half_overlap() {
        let a = field(&[1, 1, 1, 1, 0, 0]);
        let b = field(&[0, 0, 1, 1, 1, 1]);
        assert_eq!(dice(&a, &b, 1).unwrap(), 0.5);
    }

    #[test]
    fn empty_masks_score_one() {
        let a = field(&[0, 0, 0]);
        assert_eq!(dice(&a, &a, 1).unwrap(), 1.0);
    }

    #[test]
    fn soft_predictions_are_hardened_with_low_index_ties() {
        let soft = LabelField::new(2, [1, 1, 2], vec![0.5, 0.2, 0.5, 0.8]).unwrap();
        let gt = field(&[0, 1]);
        assert_eq!(dice(&soft, &gt, 1).unwrap(), 1.0);
    }

    #[test]
    fn mismatched_dims_fail() {
        assert!(dice(&field(&[0, 1]), &field(&[0, 1, 1]), 0).is_err());
    }

    proptest! {
        #[test]
        fn symmetric(a in prop::collection::vec(0u8..2, 1..40), seed in any::<u64>()) {
            let b: Vec<u8> = a.iter().enumerate().map(|(i, &x)| if (seed >> (i % 64)) & 1 == 1 { 1 - x } else { x }).collect();
            let (fa, fb) = (field(&a), field(&b));
            for c in 0..2 {
                prop_assert_eq!(dice(&fa, &fb, c).unwrap(), dice(&fb, &fa, c).unwrap());
            }
        }
    }
}
