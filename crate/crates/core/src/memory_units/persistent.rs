use crate::error::{ensure, Result};
use crate::numerics::{Mask, Tape, Tensor, Var};

/// Weights of one persistent memory unit: a key projection and a fixed
/// array of `N_m` trainable key/value pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct PersistentUnitParams {
    /// `[d_k, d_in]`.
    pub w_phi: Tensor,
    /// `[N_m, d_k]`.
    pub stored_keys: Tensor,
    /// `[N_m, d_v]`.
    pub stored_values: Tensor,
    pub beta: f64,
    /// Leaky averaging of the query features; 0 disables it.
    pub lambda_phi: f64,
}

impl PersistentUnitParams {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.stored_keys.rows() == self.stored_values.rows() && self.stored_keys.rows() >= 1,
            "stored keys ({}) and values ({}) need equal, nonzero counts",
            self.stored_keys.rows(),
            self.stored_values.rows()
        );
        ensure!(
            self.stored_keys.cols() == self.w_phi.rows(),
            "stored key width {} differs from projected key width {}",
            self.stored_keys.cols(),
            self.w_phi.rows()
        );
        ensure!(
            self.beta >= 0.0 && self.beta.is_finite(),
            "beta must be finite and >= 0"
        );
        ensure!((0.0..1.0).contains(&self.lambda_phi), "lambda_phi must lie in [0, 1)");
        Ok(())
    }
}

/// Tape handles for a layer of persistent units. Head `h` owns column
/// block `h` of `stored_keys` and `stored_values`.
#[derive(Clone, Copy, Debug)]
pub struct PersistentVars {
    pub w_phi: Var,
    /// Per-head leaky coefficient; `None` means plain `Norm(W_phi x_t)`.
    pub lambda_phi: Option<Var>,
    pub stored_keys: Var,
    pub stored_values: Var,
    pub beta: Var,
}

/// `y_t = sum_i softmax_i(beta k_t . K_i) V_i` against the stored pairs.
pub fn persistent_layer(tape: &mut Tape, x: Var, vars: &PersistentVars, heads: usize) -> Var {
    let raw = tape.linear(x, vars.w_phi);
    let feats = match vars.lambda_phi {
        Some(l) => tape.leaky_average(raw, l, heads),
        None => raw,
    };
    let keys = tape.normalize_heads(feats, heads);
    tape.attention(keys, vars.stored_keys, vars.stored_values, vars.beta, heads, Mask::None)
}

/// Outputs `y_1..y_D` of one persistent unit on `inputs` (`[D, d_in]`).
pub fn persistent_forward(inputs: &Tensor, params: &PersistentUnitParams) -> Result<Tensor> {
    params.validate()?;
    ensure!(
        inputs.shape().len() == 2 && inputs.rows() >= 1 && inputs.cols() == params.w_phi.cols(),
        "inputs must be [D >= 1, {}]",
        params.w_phi.cols()
    );
    let mut tape = Tape::new();
    let x = tape.constant(inputs.clone());
    let lambda_phi = (params.lambda_phi > 0.0).then(|| tape.constant(Tensor::vector(vec![params.lambda_phi])));
    let vars = PersistentVars {
        w_phi: tape.constant(params.w_phi.clone()),
        lambda_phi,
        stored_keys: tape.constant(params.stored_keys.clone()),
        stored_values: tape.constant(params.stored_values.clone()),
        beta: tape.constant(Tensor::vector(vec![params.beta])),
    };
    let y = persistent_layer(&mut tape, x, &vars, 1);
    Ok(tape.value(y).clone())
}
