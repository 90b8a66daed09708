//! Central finite-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::tensor::array::NumericArray;

/// Compares `analytic` against central finite differences of the scalar
/// function `f` around `theta`, one entry at a time, and returns the largest
/// relative error `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(
    mut f: F,
    theta: &NumericArray,
    analytic: &NumericArray,
    epsilon: f64,
) -> Result<f64>
where
    F: FnMut(&NumericArray) -> Result<f64>,
{
    if epsilon <= 0.0 {
        return Err(Error::InvalidConfig("grad_check: epsilon must be > 0".into()));
    }
    if theta.shape() != analytic.shape() {
        return Err(Error::shape(
            "grad_check",
            format!("theta {:?} vs analytic {:?}", theta.shape(), analytic.shape()),
        ));
    }
    let mut probe = theta.clone();
    let mut max_rel = 0.0f64;
    for i in 0..theta.len() {
        let orig = theta.data()[i];
        probe.data_mut()[i] = orig + epsilon;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - epsilon;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "non-finite forward value while perturbing entry {i}"
            )));
        }
        let numeric = (plus - minus) / (2.0 * epsilon);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}
