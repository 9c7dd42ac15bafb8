//! Differentiable computation core: tensors, the reverse-mode tape, the
//! kernel-smoothing retrieval primitive, complex helpers and a
//! finite-difference gradient checker.

mod attend;
mod complex;
mod gradcheck;
mod tape;
mod tensor;

pub use attend::{attend, attend_distance_form, attend_var, attend_weights};
pub use complex::{cabs, cadd, cmul, hermitian_dot, ComplexVector};
pub use gradcheck::{grad_check, grad_check_coords, GradCheck};
pub use tape::{Gradients, Mask, Tape, Var};
pub use tensor::Tensor;

/// Floor applied to norms before dividing: `Norm(x) = x / max(|x|, NORM_EPS)`.
pub const NORM_EPS: f64 = 1e-12;

/// `x / max(|x|, NORM_EPS)`.
pub fn normalize(x: &[f64]) -> Vec<f64> {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_EPS);
    x.iter().map(|v| v / n).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `ln(1 + e^x)`, the map from an unconstrained scalar to a positive one.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Inverse of [`sigmoid`] for `0 < y < 1`.
pub fn logit(y: f64) -> f64 {
    (y / (1.0 - y)).ln()
}
