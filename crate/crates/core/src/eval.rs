//! Pixel-wise segmentation metrics: confusion counts, accuracy, and the
//! Dice similarity coefficient, with an inter-rater comparison mode.

use crate::error::{Error, Result};
use crate::raster::BinaryMask;

/// Pixel-wise confusion counts; vessel is the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl EvalCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

pub fn confusion(pred: &BinaryMask, reference: &BinaryMask) -> Result<EvalCounts> {
    if pred.width() != reference.width() || pred.height() != reference.height() {
        return Err(Error::shape(
            "confusion mask extents",
            &[reference.width(), reference.height()],
            &[pred.width(), pred.height()],
        ));
    }
    let mut c = EvalCounts {
        tp: 0,
        fp: 0,
        fn_: 0,
        tn: 0,
    };
    for (&p, &r) in pred.data().iter().zip(reference.data()) {
        match (p, r) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// (TP + TN) / (TP + TN + FP + FN)
pub fn accuracy(c: &EvalCounts) -> f64 {
    (c.tp + c.tn) as f64 / c.total() as f64
}

/// 2TP / (2TP + FP + FN). Two empty masks are perfect agreement (1.0).
pub fn dice(c: &EvalCounts) -> f64 {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        return 1.0;
    }
    2.0 * c.tp as f64 / denom as f64
}

/// Compare two segmentations; both metrics are symmetric under operand
/// swap, which is asserted here rather than assumed.
pub fn compare_raters(a: &BinaryMask, b: &BinaryMask) -> Result<(f64, f64)> {
    let fwd = confusion(a, b)?;
    let rev = confusion(b, a)?;
    let (acc, dsc) = (accuracy(&fwd), dice(&fwd));
    debug_assert!((acc - accuracy(&rev)).abs() < 1e-15);
    debug_assert!((dsc - dice(&rev)).abs() < 1e-15);
    Ok((acc, dsc))
}

/// Convenience: Dice between two masks.
pub fn dice_masks(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    Ok(dice(&confusion(a, b)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask_from_bits(w: usize, h: usize, bits: &[bool]) -> BinaryMask {
        BinaryMask::new(w, h, bits.to_vec()).unwrap()
    }

    #[test]
    fn identical_masks_are_perfect() {
        let m = mask_from_bits(2, 2, &[true, false, true, false]);
        let c = confusion(&m, &m).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        assert_eq!(accuracy(&c), 1.0);
        assert_eq!(dice(&c), 1.0);
    }

    #[test]
    fn complementary_masks_share_nothing() {
        let a = mask_from_bits(2, 2, &[true, false, true, false]);
        let b = mask_from_bits(2, 2, &[false, true, false, true]);
        let c = confusion(&a, &b).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));
        assert_eq!(compare_raters(&a, &b).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn hand_arithmetic_cases() {
        let c = EvalCounts { tp: 2, fp: 1, fn_: 1, tn: 0 };
        assert!((dice(&c) - 2.0 / 3.0).abs() < 1e-15);
        let c = EvalCounts { tp: 1, fp: 1, fn_: 1, tn: 1 };
        assert_eq!(accuracy(&c), 0.5);
        let c = EvalCounts { tp: 50, fp: 0, fn_: 0, tn: 50 };
        assert_eq!(accuracy(&c), 1.0);
    }

    #[test]
    fn empty_vs_empty_dice_is_one() {
        let a = BinaryMask::filled(4, 4, false);
        assert_eq!(dice_masks(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn extent_mismatch_errors() {
        let a = BinaryMask::filled(4, 4, false);
        let b = BinaryMask::filled(4, 5, false);
        assert!(confusion(&a, &b).is_err());
    }

    proptest! {
        #[test]
        fn matches_per_pixel_loop_oracle(bits_a in proptest::collection::vec(any::<bool>(), 256),
                                         bits_b in proptest::collection::vec(any::<bool>(), 256)) {
            let a = mask_from_bits(16, 16, &bits_a);
            let b = mask_from_bits(16, 16, &bits_b);
            let c = confusion(&a, &b).unwrap();
            let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
            for i in 0..256 {
                match (bits_a[i], bits_b[i]) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => tn += 1,
                }
            }
            prop_assert_eq!(c, EvalCounts { tp, fp, fn_, tn });
            prop_assert_eq!(c.total(), 256);
            // formula oracles
            prop_assert_eq!(accuracy(&c), (tp + tn) as f64 / 256.0);
            if 2 * tp + fp + fn_ > 0 {
                prop_assert_eq!(dice(&c), 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64);
            }
            // symmetry + complement invariance
            let (acc, dsc) = compare_raters(&a, &b).unwrap();
            let (acc_r, dsc_r) = compare_raters(&b, &a).unwrap();
            prop_assert_eq!(acc, acc_r);
            prop_assert_eq!(dsc, dsc_r);
            let na = mask_from_bits(16, 16, &bits_a.iter().map(|v| !v).collect::<Vec<_>>());
            let nb = mask_from_bits(16, 16, &bits_b.iter().map(|v| !v).collect::<Vec<_>>());
            prop_assert_eq!(accuracy(&confusion(&na, &nb).unwrap()), acc);
        }
    }
}
