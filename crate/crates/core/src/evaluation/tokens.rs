use std::fmt::Write as _;

use crate::datasets::{exact_next_token_distribution, IclSequence, InductionSample, PfaSpec};
use crate::error::{ensure, Result};
use crate::memory_units::{contextual_layer, ContextualUnitParams, ContextualVars};
use crate::networks::SequenceModel;
use crate::numerics::{Tape, Tensor};
use crate::record::fmt_f64;

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Greedy continuation of `context` by `horizon` tokens.
pub fn rollout_tokens(model: &SequenceModel, context: &[usize], horizon: usize) -> Result<Vec<usize>> {
    ensure!(horizon >= 1 && !context.is_empty(), "need a context and horizon >= 1");
    let mut seq = context.to_vec();
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let logits = model.logits(&seq)?;
        let next = argmax(logits.row(logits.rows() - 1));
        out.push(next);
        seq.push(next);
    }
    Ok(out)
}

/// `(1/2) sum |p - q|`.
pub fn tvd(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Accuracy and distribution distance on last-token prediction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IclScore {
    pub accuracy: f64,
    pub tvd: f64,
    pub items: usize,
}

/// Scores one prediction: whether the most likely predicted token is a
/// most likely token under `exact`, and the distance between the two.
/// `predicted` is renormalized first.
pub fn score_prediction(predicted: &[f64], exact: &[f64]) -> (bool, f64) {
    let z: f64 = predicted.iter().sum();
    let p: Vec<f64> = predicted.iter().map(|v| v / z).collect();
    let best = exact.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let correct = exact[argmax(&p)] >= best - 1e-12;
    (correct, tvd(&p, exact))
}

/// Last-token accuracy and TVD of `model` on `(automaton, sequence)`
/// items. The model's softmax is restricted to the alphabet (separator
/// excluded) and renormalized.
pub fn icl_eval(model: &SequenceModel, items: &[(&PfaSpec, &IclSequence)]) -> Result<IclScore> {
    icl_eval_with(items, |pfa, seq| {
        ensure!(
            model.config.vocab == pfa.vocab(),
            "model vocab differs from the automaton's"
        );
        let logits = model.logits(&seq.tokens[..seq.tokens.len() - 1])?;
        let probs = softmax(logits.row(logits.rows() - 1));
        Ok(probs[..pfa.alphabet].to_vec())
    })
}

/// [`icl_eval`] for any predictor mapping an item to next-token weights
/// over the alphabet.
pub fn icl_eval_with<F>(items: &[(&PfaSpec, &IclSequence)], mut predict: F) -> Result<IclScore>
where
    F: FnMut(&PfaSpec, &IclSequence) -> Result<Vec<f64>>,
{
    ensure!(!items.is_empty(), "no evaluation items");
    let (mut correct, mut total_tvd) = (0usize, 0.0);
    for (pfa, seq) in items {
        ensure!(seq.tokens.len() >= 2, "sequence too short to predict its last token");
        let exact = exact_next_token_distribution(pfa, seq.last_prefix())?;
        let pred = predict(pfa, seq)?;
        ensure!(
            pred.len() == exact.len(),
            "prediction covers {} tokens, expected {}",
            pred.len(),
            exact.len()
        );
        let (ok, d) = score_prediction(&pred, &exact);
        correct += ok as usize;
        total_tvd += d;
    }
    let n = items.len() as f64;
    Ok(IclScore {
        accuracy: correct as f64 / n,
        tvd: total_tvd / n,
        items: items.len(),
    })
}

/// Fraction of query positions where `predict` returns the label.
/// `predict` maps a sample to one predicted token per query.
pub fn induction_accuracy<F>(samples: &[InductionSample], mut predict: F) -> Result<f64>
where
    F: FnMut(&InductionSample) -> Result<Vec<usize>>,
{
    let (mut hit, mut total) = (0usize, 0usize);
    for s in samples {
        let preds = predict(s)?;
        ensure!(preds.len() == s.queries.len(), "one prediction per query expected");
        hit += preds.iter().zip(&s.labels).filter(|(a, b)| a == b).count();
        total += s.queries.len();
    }
    ensure!(total > 0, "samples contain no queries");
    Ok(hit as f64 / total as f64)
}

/// Argmax accuracy of `model` at the query positions of `samples`.
pub fn induction_eval(model: &SequenceModel, samples: &[InductionSample]) -> Result<f64> {
    induction_accuracy(samples, |s| {
        let logits = model.logits(&s.tokens)?;
        Ok(s.queries.iter().map(|&q| argmax(logits.row(q))).collect())
    })
}

/// Mean attention of the last position over earlier positions.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionProfile {
    /// `relative_positions[j]` is the offset (<= 0) from the last position
    /// of the key that column `j` refers to.
    pub relative_positions: Vec<i64>,
    /// One row per head.
    pub heads: Vec<Vec<f64>>,
    /// Mean over heads.
    pub mean: Vec<f64>,
}

impl AttentionProfile {
    fn from_rows(relative_positions: Vec<i64>, heads: Vec<Vec<f64>>) -> Self {
        let w = relative_positions.len();
        let mean = (0..w)
            .map(|j| heads.iter().map(|h| h[j]).sum::<f64>() / heads.len() as f64)
            .collect();
        AttentionProfile {
            relative_positions,
            heads,
            mean,
        }
    }

    /// `relative_position,head_id,weight` rows; the head mean uses the id
    /// `all`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("relative_position,head_id,weight\n");
        let rows = self.heads.iter().enumerate().map(|(h, r)| (h.to_string(), r));
        for (id, row) in rows.chain(std::iter::once(("all".to_string(), &self.mean))) {
            for (p, w) in self.relative_positions.iter().zip(row) {
                let _ = writeln!(s, "{p},{id},{}", fmt_f64(*w));
            }
        }
        s
    }
}

/// Fewest positions whose weights reach half of the total mass.
pub fn bandwidth(weights: &[f64]) -> usize {
    let mut w = weights.to_vec();
    w.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = w.iter().sum();
    let mut acc = 0.0;
    for (i, v) in w.iter().enumerate() {
        acc += v;
        if acc >= 0.5 * total {
            return i + 1;
        }
    }
    w.len()
}

/// Accumulates last-row weights `(weights, heads, tq, tk)` into `sums`.
fn add_last_row(sums: &mut [Vec<f64>], rec: (&[f64], usize, usize, usize), width: usize) {
    let (w, heads, tq, tk) = rec;
    for (h, row) in sums.iter_mut().enumerate().take(heads) {
        let base = h * tq * tk + (tq - 1) * tk;
        for j in 0..width {
            row[j] += w[base + j];
        }
    }
}

/// Last-token attention profile of block `layer` averaged over
/// `sequences`, which must share one length.
pub fn attention_profile(model: &SequenceModel, sequences: &[Vec<usize>], layer: usize) -> Result<AttentionProfile> {
    ensure!(!sequences.is_empty(), "no sequences");
    ensure!(layer < model.config.n_blocks, "layer {layer} out of range");
    let len = sequences[0].len();
    ensure!(len >= 2, "sequences need at least two tokens");
    ensure!(
        sequences.iter().all(|s| s.len() == len),
        "sequences must share one length"
    );
    let heads = model.config.n_heads;
    // Mosaic rows see strictly earlier positions; transformer rows include
    // their own.
    let width = match model.family {
        crate::networks::Family::Mosaic => len - 1,
        crate::networks::Family::Transformer => len,
    };
    let mut sums = vec![vec![0.0; width]; heads];
    for s in sequences {
        let mut tape = Tape::new();
        let vars = model.params.bind_frozen(&mut tape);
        let trace = model.forward(&mut tape, &vars, s, None)?;
        let rec = tape.attention_weights(trace.attention[layer]).expect("attention node");
        add_last_row(&mut sums, rec, width);
    }
    let n = sequences.len() as f64;
    let heads = sums
        .into_iter()
        .map(|r| r.into_iter().map(|v| v / n).collect())
        .collect();
    let rel = (0..width).map(|j| j as i64 - (len as i64 - 1)).collect();
    Ok(AttentionProfile::from_rows(rel, heads))
}

/// Last-position attention profile of one contextual unit averaged over
/// input sequences (`[D, d_in]` each, equal `D >= 2`).
pub fn unit_attention_profile(params: &ContextualUnitParams, inputs: &[Tensor]) -> Result<AttentionProfile> {
    params.validate()?;
    ensure!(!inputs.is_empty(), "no sequences");
    let len = inputs[0].rows();
    ensure!(len >= 2, "sequences need at least two steps");
    ensure!(
        inputs.iter().all(|x| x.rows() == len && x.cols() == params.input_dim()),
        "inputs must share shape [{len}, {}]",
        params.input_dim()
    );
    let mut sums = vec![vec![0.0; len - 1]];
    for x in inputs {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let vars = ContextualVars {
            w_phi: tape.constant(params.w_phi.clone()),
            w_psi: tape.constant(params.w_psi.clone()),
            lambda_phi: tape.constant(Tensor::vector(vec![params.lambda_phi])),
            lambda_psi: tape.constant(Tensor::vector(vec![params.lambda_psi])),
            beta: tape.constant(Tensor::vector(vec![params.beta])),
        };
        let y = contextual_layer(&mut tape, xv, &vars, 1);
        add_last_row(&mut sums, tape.attention_weights(y).expect("attention node"), len - 1);
    }
    let n = inputs.len() as f64;
    let heads = sums
        .into_iter()
        .map(|r| r.into_iter().map(|v| v / n).collect())
        .collect();
    let rel = (0..len - 1).map(|j| j as i64 - (len as i64 - 1)).collect();
    Ok(AttentionProfile::from_rows(rel, heads))
}
