use std::collections::VecDeque;
use std::ops::RangeInclusive;

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, Exp1};

use crate::error::{ensure, Error, Result};
use crate::rng::{self, Rng};

/// A transition: from its owning state to `next`, emitting `token`.
#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub next: usize,
    pub token: usize,
    pub prob: f64,
}

/// Probabilistic finite automaton over tokens `0..alphabet`. The separator
/// between strings is token `alphabet`, so models see `alphabet + 1` ids.
#[derive(Clone, Debug, PartialEq)]
pub struct PfaSpec {
    pub start: usize,
    pub alphabet: usize,
    pub edges: Vec<Vec<Edge>>,
}

impl PfaSpec {
    pub fn n_states(&self) -> usize {
        self.edges.len()
    }

    pub fn separator(&self) -> usize {
        self.alphabet
    }

    /// Token ids including the separator.
    pub fn vocab(&self) -> usize {
        self.alphabet + 1
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_states();
        ensure!(
            n >= 1 && self.start < n,
            "start state {} outside {} states",
            self.start,
            n
        );
        for (s, out) in self.edges.iter().enumerate() {
            ensure!(!out.is_empty(), "state {s} has no outgoing edges");
            let total: f64 = out.iter().map(|e| e.prob).sum();
            ensure!((total - 1.0).abs() < 1e-12, "state {s} probabilities sum to {total}");
            for e in out {
                ensure!(e.next < n && e.token < self.alphabet, "edge out of range at state {s}");
                ensure!(e.prob >= 0.0 && e.prob.is_finite(), "bad probability at state {s}");
            }
        }
        ensure!(
            self.reachable().iter().all(|&r| r),
            "some state is unreachable from the start"
        );
        Ok(())
    }

    fn reachable(&self) -> Vec<bool> {
        let mut seen = vec![false; self.n_states()];
        let mut queue = VecDeque::from([self.start]);
        seen[self.start] = true;
        while let Some(s) = queue.pop_front() {
            for e in &self.edges[s] {
                if e.prob > 0.0 && !seen[e.next] {
                    seen[e.next] = true;
                    queue.push_back(e.next);
                }
            }
        }
        seen
    }

    /// Walks `len` steps from the start state.
    pub fn sample_string(&self, r: &mut Rng, len: usize) -> Vec<usize> {
        let mut state = self.start;
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            let edges = &self.edges[state];
            let u: f64 = r.random();
            let mut acc = 0.0;
            let mut chosen = &edges[edges.len() - 1];
            for e in edges {
                acc += e.prob;
                if u < acc {
                    chosen = e;
                    break;
                }
            }
            out.push(chosen.token);
            state = chosen.next;
        }
        out
    }
}

/// Shape of randomly generated automata.
#[derive(Clone, Debug, PartialEq)]
pub struct PfaConfig {
    pub states: RangeInclusive<usize>,
    pub alphabet: usize,
    pub edges_per_state: RangeInclusive<usize>,
    /// Whether a state's outgoing edges emit distinct tokens.
    pub distinct_tokens: bool,
    pub max_attempts: usize,
}

impl Default for PfaConfig {
    fn default() -> Self {
        PfaConfig {
            states: 4..=12,
            alphabet: 18,
            edges_per_state: 2..=4,
            distinct_tokens: true,
            max_attempts: 1000,
        }
    }
}

/// A random automaton whose every state is reachable from state 0, with
/// edge probabilities from a flat Dirichlet.
pub fn gen_pfa_with(r: &mut Rng, cfg: &PfaConfig) -> Result<PfaSpec> {
    ensure!(
        !cfg.states.is_empty() && *cfg.states.start() >= 1,
        "state range must be nonempty and positive"
    );
    ensure!(
        !cfg.edges_per_state.is_empty() && *cfg.edges_per_state.start() >= 1,
        "edge range must be nonempty and positive"
    );
    ensure!(cfg.alphabet >= 1, "alphabet must be nonempty");
    ensure!(
        !cfg.distinct_tokens || *cfg.edges_per_state.start() <= cfg.alphabet,
        "cannot draw {} distinct tokens from an alphabet of {}",
        cfg.edges_per_state.start(),
        cfg.alphabet
    );
    for _ in 0..cfg.max_attempts.max(1) {
        let n = r.random_range(cfg.states.clone());
        let mut edges = Vec::with_capacity(n);
        for _ in 0..n {
            let mut m = r.random_range(cfg.edges_per_state.clone());
            let tokens: Vec<usize> = if cfg.distinct_tokens {
                m = m.min(cfg.alphabet);
                sample(r, cfg.alphabet, m).into_vec()
            } else {
                (0..m).map(|_| r.random_range(0..cfg.alphabet)).collect()
            };
            let weights: Vec<f64> = (0..m).map(|_| Exp1.sample(r)).collect();
            let total: f64 = weights.iter().sum();
            let mut out: Vec<Edge> = tokens
                .into_iter()
                .zip(&weights)
                .map(|(token, w)| Edge {
                    next: r.random_range(0..n),
                    token,
                    prob: w / total,
                })
                .collect();
            // Absorb rounding so each row sums to one as closely as possible.
            let rest: f64 = out[1..].iter().map(|e| e.prob).sum();
            out[0].prob = 1.0 - rest;
            edges.push(out);
        }
        let pfa = PfaSpec {
            start: 0,
            alphabet: cfg.alphabet,
            edges,
        };
        if pfa.validate().is_ok() {
            return Ok(pfa);
        }
    }
    Err(Error::Exhausted(format!(
        "no connected automaton after {} attempts",
        cfg.max_attempts
    )))
}

pub fn gen_pfa(seed: u64, cfg: &PfaConfig) -> Result<PfaSpec> {
    gen_pfa_with(&mut rng::stream(seed, "pfa"), cfg)
}

/// Disjoint families of automata for training and held-out testing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PfaSplit {
    Train,
    Test,
}

/// `count` automata for `split`, each from its own derived stream. Test
/// automata identical to a training one (vanishingly unlikely) are skipped.
pub fn gen_pfa_pool(seed: u64, split: PfaSplit, count: usize, cfg: &PfaConfig) -> Result<Vec<PfaSpec>> {
    let label = match split {
        PfaSplit::Train => "pfa-train",
        PfaSplit::Test => "pfa-test",
    };
    let mut out = Vec::with_capacity(count);
    let mut i = 0u64;
    let train_ref = if split == PfaSplit::Test {
        gen_pfa_pool(seed, PfaSplit::Train, count, cfg)?
    } else {
        Vec::new()
    };
    while out.len() < count {
        let pfa = gen_pfa(rng::derive_seed(seed, &format!("{label}-{i}")), cfg)?;
        i += 1;
        if !train_ref.contains(&pfa) {
            out.push(pfa);
        }
    }
    Ok(out)
}

/// Strings from one automaton joined by separators.
#[derive(Clone, Debug, PartialEq)]
pub struct IclSequence {
    pub tokens: Vec<usize>,
    /// Token index ranges `[start, end)` of each string.
    pub strings: Vec<(usize, usize)>,
}

impl IclSequence {
    /// Tokens of the final string before its last token.
    pub fn last_prefix(&self) -> &[usize] {
        let (s, e) = *self.strings.last().expect("at least one string");
        &self.tokens[s..e - 1]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IclConfig {
    pub n_strings: RangeInclusive<usize>,
    pub string_len: RangeInclusive<usize>,
}

impl Default for IclConfig {
    fn default() -> Self {
        IclConfig {
            n_strings: 10..=20,
            string_len: 1..=10,
        }
    }
}

impl IclConfig {
    /// Longest sequence this configuration can produce.
    pub fn max_tokens(&self) -> usize {
        let n = *self.n_strings.end();
        n * self.string_len.end() + n.saturating_sub(1)
    }
}

pub fn sample_icl_sequence_with(pfa: &PfaSpec, r: &mut Rng, cfg: &IclConfig) -> Result<IclSequence> {
    ensure!(
        !cfg.n_strings.is_empty() && *cfg.n_strings.start() >= 1,
        "need at least one string"
    );
    ensure!(
        !cfg.string_len.is_empty() && *cfg.string_len.start() >= 1,
        "strings need at least one token"
    );
    let n = r.random_range(cfg.n_strings.clone());
    let mut tokens = Vec::new();
    let mut strings = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 {
            tokens.push(pfa.separator());
        }
        let len = r.random_range(cfg.string_len.clone());
        let start = tokens.len();
        tokens.extend(pfa.sample_string(r, len));
        strings.push((start, tokens.len()));
    }
    Ok(IclSequence { tokens, strings })
}

pub fn sample_icl_sequence(pfa: &PfaSpec, seed: u64, cfg: &IclConfig) -> Result<IclSequence> {
    sample_icl_sequence_with(pfa, &mut rng::stream(seed, "icl-sequence"), cfg)
}

/// Distribution of the next token of a string that began with `prefix`.
///
/// Runs the forward recursion over states given the emitted prefix, then
/// pushes the state posterior through one more transition. The result has
/// one entry per alphabet token.
pub fn exact_next_token_distribution(pfa: &PfaSpec, prefix: &[usize]) -> Result<Vec<f64>> {
    let n = pfa.n_states();
    let mut alpha = vec![0.0; n];
    alpha[pfa.start] = 1.0;
    for (i, &tok) in prefix.iter().enumerate() {
        let mut next = vec![0.0; n];
        for (s, &a) in alpha.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for e in pfa.edges[s].iter().filter(|e| e.token == tok) {
                next[e.next] += a * e.prob;
            }
        }
        let z: f64 = next.iter().sum();
        if z <= 0.0 {
            return Err(Error::contract(format!(
                "prefix has zero probability at position {i} (token {tok})"
            )));
        }
        alpha = next.into_iter().map(|v| v / z).collect();
    }
    let mut dist = vec![0.0; pfa.alphabet];
    for (s, &a) in alpha.iter().enumerate() {
        for e in &pfa.edges[s] {
            dist[e.token] += a * e.prob;
        }
    }
    let z: f64 = dist.iter().sum();
    Ok(dist.into_iter().map(|v| v / z).collect())
}
