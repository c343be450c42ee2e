//! Central finite-difference gradients.

use crate::error::{Error, Result};

/// Default relative step.
pub const DEFAULT_FD_STEP: f64 = 1e-4;

/// Central-difference gradient with per-coordinate step `h * max(1, |θ_i|)`.
///
/// A failed or non-finite evaluation at either perturbation of coordinate
/// `i` yields [`Error::Evaluation`] naming `i`.
pub fn fd_gradient<F>(mut objective: F, theta: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut x = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let step = h * theta[i].abs().max(1.0);
        x[i] = theta[i] + step;
        let plus = objective(&x);
        x[i] = theta[i] - step;
        let minus = objective(&x);
        x[i] = theta[i];
        match (plus, minus) {
            (Ok(p), Ok(m)) if p.is_finite() && m.is_finite() => grad.push((p - m) / (2.0 * step)),
            _ => return Err(Error::Evaluation { coordinate: i }),
        }
    }
    Ok(grad)
}
