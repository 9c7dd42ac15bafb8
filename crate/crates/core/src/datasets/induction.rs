use rand::seq::index::sample;
use rand::Rng as _;

use crate::error::{ensure, Result};
use crate::rng::{self, Rng};

/// A token sequence in which some tokens always have the same successor.
#[derive(Clone, Debug, PartialEq)]
pub struct InductionSample {
    pub tokens: Vec<usize>,
    /// Positions `T` (0-based) holding a token with a fixed successor that
    /// already occurred before `T`, and with `T + 1` inside the sequence.
    pub queries: Vec<usize>,
    /// `tokens[T + 1]` for each query.
    pub labels: Vec<usize>,
}

impl InductionSample {
    /// Per-position next-token targets with only query positions set.
    pub fn targets(&self) -> Vec<Option<usize>> {
        let mut t = vec![None; self.tokens.len()];
        for (&q, &l) in self.queries.iter().zip(&self.labels) {
            t[q] = Some(l);
        }
        t
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InductionConfig {
    pub vocab: usize,
    pub len: usize,
    /// Tokens given a fixed successor in each sample.
    pub triggers: usize,
}

impl Default for InductionConfig {
    fn default() -> Self {
        InductionConfig {
            vocab: 16,
            len: 64,
            triggers: 4,
        }
    }
}

impl InductionConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.vocab >= 4, "vocab must be >= 4");
        ensure!(self.len >= 8, "length must be >= 8");
        ensure!(
            self.triggers >= 1 && self.triggers < self.vocab,
            "trigger count must lie in 1..vocab"
        );
        Ok(())
    }
}

/// Samples a sequence where token `a` with `successor[a] = Some(b)` is
/// always followed by `b` and every other token by a uniform draw.
pub fn gen_induction_with_map(
    r: &mut Rng,
    vocab: usize,
    len: usize,
    successor: &[Option<usize>],
    first: Option<usize>,
) -> Result<InductionSample> {
    ensure!(successor.len() == vocab, "successor map must cover the vocab");
    ensure!(
        successor.iter().flatten().all(|&b| b < vocab),
        "successor outside vocab"
    );
    let mut tokens = Vec::with_capacity(len);
    let mut cur = first.unwrap_or_else(|| r.random_range(0..vocab));
    ensure!(cur < vocab, "first token outside vocab");
    for _ in 0..len {
        tokens.push(cur);
        cur = successor[cur].unwrap_or_else(|| r.random_range(0..vocab));
    }
    let mut seen = vec![false; vocab];
    let (mut queries, mut labels) = (Vec::new(), Vec::new());
    for t in 0..len {
        let a = tokens[t];
        if seen[a] && successor[a].is_some() && t + 1 < len {
            queries.push(t);
            labels.push(tokens[t + 1]);
        }
        seen[a] = true;
    }
    Ok(InductionSample {
        tokens,
        queries,
        labels,
    })
}

/// Draws a fresh successor map (triggers to non-trigger tokens) and a
/// sequence from it.
pub fn gen_induction_with(r: &mut Rng, cfg: &InductionConfig) -> Result<InductionSample> {
    cfg.validate()?;
    let chosen = sample(r, cfg.vocab, cfg.triggers).into_vec();
    let mut is_trigger = vec![false; cfg.vocab];
    for &a in &chosen {
        is_trigger[a] = true;
    }
    let others: Vec<usize> = (0..cfg.vocab).filter(|&t| !is_trigger[t]).collect();
    let mut successor = vec![None; cfg.vocab];
    for &a in &chosen {
        successor[a] = Some(others[r.random_range(0..others.len())]);
    }
    gen_induction_with_map(r, cfg.vocab, cfg.len, &successor, None)
}

pub fn gen_induction(seed: u64, vocab: usize, len: usize) -> Result<InductionSample> {
    let cfg = InductionConfig {
        vocab,
        len,
        triggers: (vocab / 4).max(1),
    };
    gen_induction_with(&mut rng::stream(seed, "induction"), &cfg)
}

/// `count` samples from one stream.
pub fn gen_induction_set(seed: u64, label: &str, cfg: &InductionConfig, count: usize) -> Result<Vec<InductionSample>> {
    let mut r = rng::stream(seed, label);
    (0..count).map(|_| gen_induction_with(&mut r, cfg)).collect()
}
