//! Central finite-difference gradient verification.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_H: f64 = 1e-5;

/// Central-difference gradient of a scalar function at `point`.
pub fn central_diff_grad(
    f: &mut dyn FnMut(&Tensor) -> Result<f64>,
    point: &Tensor,
    h: f64,
) -> Result<Tensor> {
    if h <= 0.0 {
        return Err(Error::Config("finite difference step must be > 0".into()));
    }
    let mut grad = Tensor::zeros(point.shape());
    let mut x = point.clone();
    for i in 0..point.len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + h;
        let fp = f(&x)?;
        x.data_mut()[i] = orig - h;
        let fm = f(&x)?;
        x.data_mut()[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite {
                context: format!("finite_diff_check objective at coordinate {i}"),
            });
        }
        grad.data_mut()[i] = (fp - fm) / (2.0 * h);
    }
    Ok(grad)
}

/// Max over coordinates of `|a - n| / max(1, |a|, |n|)`.
pub fn max_rel_err(analytic: &Tensor, numeric: &Tensor) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| (a - n).abs() / 1.0f64.max(a.abs()).max(n.abs()))
        .fold(0.0, f64::max)
}

/// Compares the analytic gradient of `f` at `point` against central
/// differences and returns the max relative error.
pub fn finite_diff_check(
    f: &mut dyn FnMut(&Tensor) -> Result<f64>,
    point: &Tensor,
    analytic: &Tensor,
    h: f64,
) -> Result<f64> {
    if analytic.shape() != point.shape() {
        return Err(Error::shape(
            "finite_diff_check",
            format!("{:?}", point.shape()),
            format!("{:?}", analytic.shape()),
        ));
    }
    let numeric = central_diff_grad(f, point, h)?;
    Ok(max_rel_err(analytic, &numeric))
}
