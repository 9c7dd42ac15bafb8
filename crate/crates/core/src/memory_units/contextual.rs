use crate::error::{ensure, Result};
use crate::numerics::{Mask, Tape, Tensor, Var};

/// Weights of one contextual memory unit.
///
/// Projections are stored `[out, in]`: `w_phi` maps an input of width
/// `d_in` to a key of width `d_k`, `w_psi` to a value of width `d_v`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextualUnitParams {
    pub w_phi: Tensor,
    pub w_psi: Tensor,
    /// Leaky-average coefficient for keys, in `[0, 1)`.
    pub lambda_phi: f64,
    /// Weight of the look-ahead input in values, `>= 0`.
    pub lambda_psi: f64,
    /// Kernel bandwidth, `> 0`.
    pub beta: f64,
}

impl ContextualUnitParams {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.w_phi.shape().len() == 2 && self.w_psi.shape().len() == 2,
            "projections must be matrices"
        );
        ensure!(
            self.w_phi.cols() == self.w_psi.cols(),
            "key and value projections read different input widths"
        );
        ensure!(
            (0.0..1.0).contains(&self.lambda_phi),
            "lambda_phi must lie in [0, 1), got {}",
            self.lambda_phi
        );
        ensure!(self.lambda_psi >= 0.0, "lambda_psi must be >= 0");
        ensure!(self.beta > 0.0 && self.beta.is_finite(), "beta must be positive");
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.w_phi.cols()
    }

    pub fn key_dim(&self) -> usize {
        self.w_phi.rows()
    }

    pub fn value_dim(&self) -> usize {
        self.w_psi.rows()
    }
}

/// Tape handles for a layer of `heads` contextual units sharing one input.
///
/// `lambda_phi`, `lambda_psi` and `beta` hold one already-constrained value
/// per head. The projections stack the heads' rows, so head `h` owns rows
/// `h*d_k..(h+1)*d_k` of `w_phi`.
#[derive(Clone, Copy, Debug)]
pub struct ContextualVars {
    pub w_phi: Var,
    pub w_psi: Var,
    pub lambda_phi: Var,
    pub lambda_psi: Var,
    pub beta: Var,
}

/// Unit-norm keys `k_t = Norm(kbar_t)` with
/// `kbar_t = W_phi x_t + lambda_phi kbar_{t-1}`.
pub fn contextual_keys(tape: &mut Tape, x: Var, w_phi: Var, lambda_phi: Var, heads: usize) -> Var {
    let raw = tape.linear(x, w_phi);
    let leaky = tape.leaky_average(raw, lambda_phi, heads);
    tape.normalize_heads(leaky, heads)
}

/// Unit-norm values `v_t = Norm(W_psi x_t + lambda_psi W_psi x_{t+1})`,
/// one row fewer than the input.
pub fn contextual_values(tape: &mut Tape, x: Var, w_psi: Var, lambda_psi: Var, heads: usize) -> Var {
    let raw = tape.linear(x, w_psi);
    let mixed = tape.shift_mix(raw, lambda_psi, heads);
    tape.normalize_heads(mixed, heads)
}

/// Outputs `y_t` of a layer of contextual units over a whole sequence.
///
/// Row `t` retrieves from the pairs `(k_s, v_s)`, `s < t`; the first row
/// sees an empty memory and is zero. Returns the attention node, whose
/// recorded weights give the per-head attention maps.
pub fn contextual_layer(tape: &mut Tape, x: Var, vars: &ContextualVars, heads: usize) -> Var {
    let keys = contextual_keys(tape, x, vars.w_phi, vars.lambda_phi, heads);
    let values = contextual_values(tape, x, vars.w_psi, vars.lambda_psi, heads);
    // The last key never has a value; under the strict mask no row needs it.
    let rows = tape.value(values).rows();
    let stored = tape.slice_rows(keys, 0, rows);
    tape.attention(keys, stored, values, vars.beta, heads, Mask::StrictCausal)
}

fn bind(tape: &mut Tape, inputs: &Tensor, p: &ContextualUnitParams) -> Result<(Var, ContextualVars)> {
    p.validate()?;
    ensure!(
        inputs.shape().len() == 2 && inputs.cols() == p.input_dim(),
        "inputs must be [D, {}], got {:?}",
        p.input_dim(),
        inputs.shape()
    );
    let x = tape.constant(inputs.clone());
    let vars = ContextualVars {
        w_phi: tape.constant(p.w_phi.clone()),
        w_psi: tape.constant(p.w_psi.clone()),
        lambda_phi: tape.constant(Tensor::vector(vec![p.lambda_phi])),
        lambda_psi: tape.constant(Tensor::vector(vec![p.lambda_psi])),
        beta: tape.constant(Tensor::vector(vec![p.beta])),
    };
    Ok((x, vars))
}

/// Keys `k_1..k_D` for the sequence `inputs` (`[D, d_in]`).
pub fn extract_keys(inputs: &Tensor, params: &ContextualUnitParams) -> Result<Tensor> {
    ensure!(inputs.rows() >= 1, "need at least one input");
    let mut tape = Tape::new();
    let (x, v) = bind(&mut tape, inputs, params)?;
    let k = contextual_keys(&mut tape, x, v.w_phi, v.lambda_phi, 1);
    Ok(tape.value(k).clone())
}

/// Values `v_1..v_{D-1}`; the last input has no successor so yields none.
pub fn extract_values(inputs: &Tensor, params: &ContextualUnitParams) -> Result<Tensor> {
    ensure!(inputs.rows() >= 2, "values need at least two inputs");
    let mut tape = Tape::new();
    let (x, v) = bind(&mut tape, inputs, params)?;
    let out = contextual_values(&mut tape, x, v.w_psi, v.lambda_psi, 1);
    Ok(tape.value(out).clone())
}

/// Outputs `y_1..y_D` of one contextual unit.
pub fn contextual_forward(inputs: &Tensor, params: &ContextualUnitParams) -> Result<Tensor> {
    ensure!(inputs.rows() >= 1, "need at least one input");
    let mut tape = Tape::new();
    let (x, v) = bind(&mut tape, inputs, params)?;
    let y = contextual_layer(&mut tape, x, &v, 1);
    Ok(tape.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(d: usize, lambda_phi: f64, lambda_psi: f64, beta: f64) -> ContextualUnitParams {
        ContextualUnitParams {
            w_phi: Tensor::identity(d),
            w_psi: Tensor::identity(d),
            lambda_phi,
            lambda_psi,
            beta,
        }
    }

    #[test]
    fn running_sum_before_normalization() {
        // lambda_phi = 1 is outside the trainable range but exercises the
        // recurrence: kbar = (1, 2, 3) on unit inputs.
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(3, 1, vec![1.0; 3]).unwrap());
        let w = tape.constant(Tensor::identity(1));
        let lam = tape.constant(Tensor::vector(vec![1.0]));
        let raw = tape.linear(x, w);
        let leaky = tape.leaky_average(raw, lam, 1);
        assert_eq!(tape.value(leaky).data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn value_boundary_produces_one_value() {
        let x = Tensor::matrix(2, 2, vec![0.3, 0.1, 0.5, -0.4]).unwrap();
        let v = extract_values(&x, &params(2, 0.0, 1.0, 1.0)).unwrap();
        assert_eq!(v.rows(), 1);
        let s = [0.8, -0.3];
        let n = (0.64f64 + 0.09).sqrt();
        assert!((v.row(0)[0] - s[0] / n).abs() < 1e-15);
        assert!((v.row(0)[1] - s[1] / n).abs() < 1e-15);
        assert!(extract_values(
            &Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap(),
            &params(2, 0.0, 1.0, 1.0)
        )
        .is_err());
    }

    #[test]
    fn single_step_output_is_zero() {
        let x = Tensor::matrix(1, 3, vec![0.2, 0.4, -1.0]).unwrap();
        let y = contextual_forward(&x, &params(3, 0.3, 0.5, 2.0)).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_input_is_guarded() {
        let x = Tensor::zeros(&[3, 2]);
        let k = extract_keys(&x, &params(2, 0.5, 0.0, 1.0)).unwrap();
        assert!(k.is_finite());
        assert_eq!(k.data(), &[0.0; 6]);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let x = Tensor::matrix(2, 2, vec![1.0; 4]).unwrap();
        assert!(contextual_forward(&x, &params(2, 1.0, 0.0, 1.0)).is_err());
        assert!(contextual_forward(&x, &params(2, 0.0, -0.1, 1.0)).is_err());
        assert!(contextual_forward(&x, &params(2, 0.0, 0.0, 0.0)).is_err());
        assert!(contextual_forward(&x, &params(3, 0.0, 0.0, 1.0)).is_err());
    }
}
