//! Central finite-difference probes used to verify analytic gradients.
//!
//! The probes stay deliberately independent of the tape: they only need a
//! closure evaluating the loss at a perturbed coordinate.

/// Central difference (f(x+h) - f(x-h)) / 2h.
pub fn central_diff(f: &mut dyn FnMut(f64) -> f64, x0: f64, eps: f64) -> f64 {
    (f(x0 + eps) - f(x0 - eps)) / (2.0 * eps)
}

/// Step size scaled to the coordinate's magnitude.
pub fn fd_eps(x0: f64) -> f64 {
    1e-5 * x0.abs().max(1.0)
}

/// Relative error with a floor that keeps near-zero gradients comparable
/// at the finite-difference noise level.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}
