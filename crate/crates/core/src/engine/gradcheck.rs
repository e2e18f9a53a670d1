//! Central finite-difference verification of analytic gradients.

use crate::error::{input_err, Error, Result};

/// Denominator floor of the relative error.
pub const REL_ERR_FLOOR: f64 = 1e-8;

pub const DEFAULT_EPS: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Largest relative error between `gradient` (the analytic gradient of
/// `value` at `point`) and the central difference
/// `(f(x + eps) - f(x - eps)) / (2 eps)`, taken over all coordinates.
pub fn grad_check(
    mut value: impl FnMut(&[f64]) -> Result<f64>,
    gradient: &[f64],
    point: &[f64],
    eps: f64,
) -> Result<f64> {
    if gradient.len() != point.len() {
        return Err(input_err!(
            "gradient has {} entries for a {}-dimensional point",
            gradient.len(),
            point.len()
        ));
    }
    if !(eps > 0.0) {
        return Err(input_err!("finite-difference step must be positive, got {eps}"));
    }
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let original = x[i];
        x[i] = original + eps;
        let plus = value(&x)?;
        x[i] = original - eps;
        let minus = value(&x)?;
        x[i] = original;

        let numeric = (plus - minus) / (2.0 * eps);
        if !numeric.is_finite() || !gradient[i].is_finite() {
            return Err(Error::Numerical(format!(
                "coordinate {i}: analytic {} vs numeric {numeric}",
                gradient[i]
            )));
        }
        worst = worst.max(relative_error(gradient[i], numeric));
    }
    Ok(worst)
}

/// Like [`grad_check`], but each numeric derivative is the Richardson
/// extrapolation `(4·D(eps/2) − D(eps)) / 3` of two central differences,
/// which cancels the `eps²` truncation term. Suited to whole-model checks,
/// where no single plain step keeps both truncation and roundoff below the
/// tolerance for gradients spanning many orders of magnitude.
pub fn grad_check_extrapolated(
    mut value: impl FnMut(&[f64]) -> Result<f64>,
    gradient: &[f64],
    point: &[f64],
    eps: f64,
) -> Result<f64> {
    if gradient.len() != point.len() {
        return Err(input_err!(
            "gradient has {} entries for a {}-dimensional point",
            gradient.len(),
            point.len()
        ));
    }
    if !(eps > 0.0) {
        return Err(input_err!("finite-difference step must be positive, got {eps}"));
    }
    let mut x = point.to_vec();
    let mut central = |x: &mut Vec<f64>, i: usize, h: f64| -> Result<f64> {
        let original = x[i];
        x[i] = original + h;
        let plus = value(x)?;
        x[i] = original - h;
        let minus = value(x)?;
        x[i] = original;
        Ok((plus - minus) / (2.0 * h))
    };
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let coarse = central(&mut x, i, eps)?;
        let fine = central(&mut x, i, eps / 2.0)?;
        let numeric = (4.0 * fine - coarse) / 3.0;
        if !numeric.is_finite() || !gradient[i].is_finite() {
            return Err(Error::Numerical(format!(
                "coordinate {i}: analytic {} vs numeric {numeric}",
                gradient[i]
            )));
        }
        worst = worst.max(relative_error(gradient[i], numeric));
    }
    Ok(worst)
}
