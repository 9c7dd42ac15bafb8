use num_complex::Complex64;

use crate::error::{ensure, Result};
use crate::numerics::ComplexVector;

/// Keys and values seen by one head of a moons model.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadFeatures {
    /// `k_1..k_D`.
    pub keys: Vec<ComplexVector>,
    /// `v_1..v_{D-1}`.
    pub values: Vec<ComplexVector>,
}

fn apply(w: &[[Complex64; 3]; 3], x: &ComplexVector) -> [Complex64; 3] {
    let mut out = [Complex64::new(0.0, 0.0); 3];
    for (r, o) in out.iter_mut().enumerate() {
        *o = (0..3).map(|c| w[r][c] * x.get(c)).sum();
    }
    out
}

/// Raw linear features of a 3-dim complex sequence, split into `n_heads`
/// contiguous groups of `3 / n_heads` coordinates.
///
/// `k_t = W_phi x_t` and `v_t = W_psi x_{t+1}`, with no leak and no
/// normalization.
pub fn moons_linear_extractors(
    inputs: &[ComplexVector],
    w_phi: &[[Complex64; 3]; 3],
    w_psi: &[[Complex64; 3]; 3],
    n_heads: usize,
) -> Result<Vec<HeadFeatures>> {
    ensure!(n_heads > 0 && 3 % n_heads == 0, "head count {n_heads} must divide 3");
    ensure!(inputs.iter().all(|x| x.len() == 3), "moons observations are 3-dim");
    let width = 3 / n_heads;
    let keys: Vec<_> = inputs.iter().map(|x| apply(w_phi, x)).collect();
    let values: Vec<_> = inputs.iter().skip(1).map(|x| apply(w_psi, x)).collect();
    let slice = |v: &[Complex64; 3], h: usize| ComplexVector::from_values(&v[h * width..(h + 1) * width]);
    Ok((0..n_heads)
        .map(|h| HeadFeatures {
            keys: keys.iter().map(|k| slice(k, h)).collect(),
            values: values.iter().map(|v| slice(v, h)).collect(),
        })
        .collect())
}
