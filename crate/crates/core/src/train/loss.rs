//! Masked binary cross-entropy.

use crate::model::Real;

use super::TrainError;

/// Predictions are clamped to `[CLAMP, 1 - CLAMP]` before taking logs.
pub const CLAMP: f64 = 1e-7;

/// Mean of `-[y ln ŷ + (1 - y) ln(1 - ŷ)]` over the entries whose mask is set.
pub fn masked_bce<F: Real>(y_hat: &[F], y: &[F], mask: &[bool]) -> Result<F, TrainError> {
    assert!(y_hat.len() == y.len() && y.len() == mask.len(), "masks must align");
    let lo = F::of(CLAMP);
    let hi = F::one() - lo;
    let mut sum = F::zero();
    let mut n = 0usize;
    for ((p, t), m) in y_hat.iter().zip(y).zip(mask) {
        if !*m {
            continue;
        }
        let p = p.max(lo).min(hi);
        sum = sum - (*t * p.ln() + (F::one() - *t) * (F::one() - p).ln());
        n += 1;
    }
    if n == 0 {
        return Err(TrainError::EmptyScorableSet);
    }
    Ok(sum / F::of(n as f64))
}

/// d(BCE)/d(logit) for one prediction: `ŷ - y`, or zero where the clamp is
/// active (the clamped loss is flat there).
#[inline]
pub fn bce_logit_grad<F: Real>(y_hat: F, y: F) -> F {
    let lo = F::of(CLAMP);
    if y_hat < lo || y_hat > F::one() - lo {
        F::zero()
    } else {
        y_hat - y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_on_positive_is_ln2() {
        let l = masked_bce(&[0.5f64], &[1.0], &[true]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn nothing_scorable() {
        assert!(matches!(masked_bce(&[0.3f64, 0.2], &[1.0, 0.0], &[false, false]), Err(TrainError::EmptyScorableSet)));
    }

    #[test]
    fn non_scorable_is_excluded() {
        let l = masked_bce(&[0.5f64, 0.9], &[1.0, 1.0], &[true, false]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn extremes_stay_finite() {
        let l = masked_bce(&[0.0f64, 1.0, 1.0, 0.0], &[1.0, 0.0, 1.0, 0.0], &[true; 4]).unwrap();
        assert!(l.is_finite());
        let l32 = masked_bce(&[0.0f32, 1.0], &[1.0, 0.0], &[true; 2]).unwrap();
        assert!(l32.is_finite());
    }
}
