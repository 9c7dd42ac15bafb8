use crate::error::{ensure, Result};
use crate::networks::MoonsModel;
use crate::numerics::{cabs, ComplexVector, Tape, Tensor, Var};

/// Default clip of the moons loss: the loss of the zero predictor on
/// unit-modulus targets.
pub const MOONS_CLIP: f64 = 3.0;

/// Mean over `T >= 2` of `min(sum_k |z_{T,k} - x_{T+1,k}|^2, clip)`.
///
/// `predictions[i]` is `z_{i+1}` and `targets[i]` is `x_{i+2}`; the first
/// pair is skipped because `z_1` comes from an empty memory.
pub fn clipped_complex_mse(predictions: &[ComplexVector], targets: &[ComplexVector], clip: f64) -> Result<f64> {
    ensure!(
        predictions.len() == targets.len(),
        "predictions and targets differ in length"
    );
    ensure!(clip > 0.0, "clip must be > 0");
    if predictions.len() < 2 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (z, x) in predictions.iter().zip(targets).skip(1) {
        ensure!(z.len() == x.len(), "coordinate count mismatch");
        let re: Vec<f64> = z.re().data().iter().zip(x.re().data()).map(|(a, b)| a - b).collect();
        let im: Vec<f64> = z.im().data().iter().zip(x.im().data()).map(|(a, b)| a - b).collect();
        let diff = ComplexVector::new(Tensor::vector(re), Tensor::vector(im))?;
        let e: f64 = cabs(&diff).data().iter().map(|m| m * m).sum();
        total += e.min(clip);
    }
    Ok(total / (predictions.len() - 1) as f64)
}

/// Clipped loss of `model` on one sequence (`[D, 6]` rows), recorded on
/// `tape` with parameters `vars`.
pub fn moons_sequence_loss(tape: &mut Tape, model: &MoonsModel, vars: &[Var], x: &Tensor, clip: f64) -> Result<Var> {
    let d = x.rows();
    ensure!(d >= 3, "moons sequences need at least three steps");
    let xv = tape.constant(x.clone());
    let z = model.forward_tape(tape, vars, xv);
    let pred = tape.slice_rows(z, 0, d - 1);
    let target = tape.slice_rows(xv, 1, d);
    let mut rows = vec![true; d - 1];
    rows[0] = false;
    Ok(tape.clipped_sq_err(pred, target, clip, &rows))
}

/// Mean negative log-likelihood of `targets` under the row softmax of
/// `logits` (all rows counted).
pub fn cross_entropy(logits: &Tensor, targets: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    let t: Vec<Option<usize>> = targets.iter().map(|&t| Some(t)).collect();
    let out = tape.cross_entropy(l, &t)?;
    Ok(tape.value(out).item())
}
