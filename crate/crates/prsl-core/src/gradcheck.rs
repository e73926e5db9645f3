//! Central-difference gradient checking for every analytic backward pass.

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::tensor::TensorBase;

/// Compare an analytic gradient against central finite differences.
///
/// Returns the maximum over coordinates of
/// `|analytic - numeric| / max(1e-12, |analytic| + |numeric|)`.
pub fn grad_check<S, F>(
    scalar_fn: F,
    analytic: &TensorBase<S>,
    point: &TensorBase<S>,
    step: S,
) -> Result<S>
where
    S: Scalar,
    F: Fn(&TensorBase<S>) -> Result<S>,
{
    if step <= S::zero() {
        return Err(CoreError::InvalidConfig {
            context: "grad_check",
            detail: format!("step must be positive, got {step}"),
        });
    }
    if analytic.shape() != point.shape() {
        return Err(CoreError::ShapeMismatch {
            context: "grad_check",
            left: analytic.shape().to_vec(),
            right: point.shape().to_vec(),
        });
    }

    let floor = S::of(1e-12);
    let two = S::of(2.0);
    let mut worst = S::zero();
    let mut probe = point.clone();
    for i in 0..point.len() {
        let original = point.data()[i];

        probe.data_mut()[i] = original + step;
        let plus = scalar_fn(&probe)?;
        probe.data_mut()[i] = original - step;
        let minus = scalar_fn(&probe)?;
        probe.data_mut()[i] = original;

        if !plus.is_finite() || !minus.is_finite() {
            return Err(CoreError::NonFinite { context: "grad_check evaluation" });
        }

        let numeric = (plus - minus) / (two * step);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / floor.max(a.abs() + numeric.abs());
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}
