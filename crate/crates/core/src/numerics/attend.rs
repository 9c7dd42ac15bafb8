use super::tape::{Mask, Tape, Var};
use crate::error::{ensure, Result};

fn check(query: &[f64], keys: &[Vec<f64>], values: &[Vec<f64>], beta: f64) -> Result<()> {
    ensure!(
        keys.len() == values.len(),
        "{} keys but {} values",
        keys.len(),
        values.len()
    );
    ensure!(
        keys.iter().all(|k| k.len() == query.len()),
        "key dimension differs from query dimension {}",
        query.len()
    );
    if let Some(v0) = values.first() {
        ensure!(
            values.iter().all(|v| v.len() == v0.len()),
            "values have unequal dimensions"
        );
    }
    ensure!(
        beta >= 0.0 && beta.is_finite(),
        "beta must be finite and >= 0, got {beta}"
    );
    ensure!(
        query
            .iter()
            .chain(keys.iter().flatten())
            .chain(values.iter().flatten())
            .all(|v| v.is_finite()),
        "non-finite input to attend"
    );
    Ok(())
}

/// Softmax weights `softmax_i(beta * <query, k_i>)`, computed with the
/// maximum logit subtracted.
pub fn attend_weights(query: &[f64], keys: &[Vec<f64>], beta: f64) -> Vec<f64> {
    let logits: Vec<f64> = keys.iter().map(|k| beta * super::dot(query, k)).collect();
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
    let z: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= z);
    w
}

/// Kernel-smoothing retrieval in dot-product form:
/// `sum_i softmax_i(beta <query, k_i>) v_i`.
///
/// An empty memory returns the zero vector of dimension `value_dim`.
pub fn attend(query: &[f64], keys: &[Vec<f64>], values: &[Vec<f64>], beta: f64, value_dim: usize) -> Result<Vec<f64>> {
    check(query, keys, values, beta)?;
    if keys.is_empty() {
        return Ok(vec![0.0; value_dim]);
    }
    ensure!(
        values[0].len() == value_dim,
        "values have dimension {}, expected {value_dim}",
        values[0].len()
    );
    let w = attend_weights(query, keys, beta);
    let mut out = vec![0.0; value_dim];
    for (wi, v) in w.iter().zip(values) {
        for (o, x) in out.iter_mut().zip(v) {
            *o += wi * x;
        }
    }
    Ok(out)
}

/// Gaussian kernel regression in distance form:
/// `sum_i exp(-beta |query - k_i|^2) v_i / Z`.
pub fn attend_distance_form(query: &[f64], keys: &[Vec<f64>], values: &[Vec<f64>], beta: f64) -> Result<Vec<f64>> {
    check(query, keys, values, beta)?;
    ensure!(
        !keys.is_empty(),
        "distance-form retrieval needs at least one stored pair"
    );
    let logits: Vec<f64> = keys
        .iter()
        .map(|k| {
            let d2: f64 = query.iter().zip(k).map(|(a, b)| (a - b) * (a - b)).sum();
            -beta * d2
        })
        .collect();
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
    let z: f64 = w.iter().sum();
    let mut out = vec![0.0; values[0].len()];
    for (wi, v) in w.iter().zip(values) {
        for (o, x) in out.iter_mut().zip(v) {
            *o += wi / z * x;
        }
    }
    Ok(out)
}

/// Differentiable single-query retrieval on a tape. `query` is `[1, d]` or
/// `[d]`, `keys` `[n, d]`, `values` `[n, d']`, `beta` a one-element tensor.
pub fn attend_var(tape: &mut Tape, query: Var, keys: Var, values: Var, beta: Var) -> Result<Var> {
    let d = tape.value(query).len();
    ensure!(
        tape.value(keys).cols() == d || tape.value(keys).is_empty(),
        "key dimension mismatch"
    );
    ensure!(
        tape.value(keys).rows() == tape.value(values).rows(),
        "keys/values count mismatch"
    );
    ensure!(tape.value(beta).len() == 1, "beta must be a single value");
    let q = if tape.value(query).shape().len() == 2 {
        query
    } else {
        // [d] -> [1, d]
        let idx: Vec<usize> = (0..d).collect();
        tape.gather_cols(query, &idx)
    };
    Ok(tape.attention(q, keys, values, beta, 1, Mask::None))
}
