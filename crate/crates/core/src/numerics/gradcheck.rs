use crate::error::{Error, Result};

/// Compares an analytic gradient against central differences of `f` at `x`.
///
/// Returns `max_i |fd_i - grad_i| / max(1, |grad_i|)`.
pub fn fd_check(
    mut f: impl FnMut(&[f64]) -> f64,
    grad: &[f64],
    x: &[f64],
    eps: f64,
) -> Result<f64> {
    if grad.len() != x.len() {
        return Err(Error::Shape(format!(
            "gradient has {} entries for {} parameters",
            grad.len(),
            x.len()
        )));
    }
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let up = f(&probe);
        probe[i] = x[i] - eps;
        let down = f(&probe);
        probe[i] = x[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numerical(format!(
                "objective is not finite around coordinate {i}"
            )));
        }
        let fd = (up - down) / (2.0 * eps);
        worst = worst.max((fd - grad[i]).abs() / grad[i].abs().max(1.0));
    }
    Ok(worst)
}
