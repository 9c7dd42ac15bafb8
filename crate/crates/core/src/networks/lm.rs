use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::params::{Parameters, Trainable};
use crate::error::{ensure, Result};
use crate::memory_units::{contextual_layer, persistent_layer, ContextualVars, PersistentVars};
use crate::numerics::{logit, normalize, softplus_inv, Mask, Tape, Tensor, Var};
use crate::rng::{self, Rng};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Mosaic,
    Transformer,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Mosaic => "mosaic",
            Family::Transformer => "transformer",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mosaic" => Ok(Family::Mosaic),
            "transformer" => Ok(Family::Transformer),
            _ => Err(crate::Error::parse(format!("unknown model family {s:?}"))),
        }
    }
}

/// How many persistent slots a mosaic block gets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlotSizing {
    Fixed(usize),
    /// Match one transformer block's parameter count.
    MatchBlock,
    /// Match the whole transformer, position table included.
    MatchTotal,
}

/// Architecture of a token-level sequence model.
#[derive(Clone, Debug, PartialEq)]
pub struct LmConfig {
    pub vocab: usize,
    pub d_model: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    /// Longest input the transformer's position table covers. The mosaic
    /// has no position parameters but uses this for parity sizing.
    pub max_len: usize,
    pub slots: SlotSizing,
    /// Leaky averaging in front of the persistent memories.
    pub persistent_leaky: bool,
    pub beta_init: f64,
    pub lambda_phi_init: f64,
    pub lambda_psi_init: f64,
    pub dropout: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            vocab: 16,
            d_model: 64,
            n_blocks: 1,
            n_heads: 2,
            max_len: 64,
            slots: SlotSizing::MatchTotal,
            persistent_leaky: false,
            beta_init: 8.0,
            lambda_phi_init: 0.1,
            lambda_psi_init: 1.0,
            dropout: 0.0,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.vocab >= 2, "vocab must be >= 2");
        ensure!(self.n_blocks >= 1, "need at least one block");
        ensure!(self.n_heads >= 1, "need at least one head");
        ensure!(
            self.d_model.is_multiple_of(self.n_heads),
            "d_model {} is not divisible by {} heads",
            self.d_model,
            self.n_heads
        );
        ensure!(self.max_len >= 1, "max_len must be >= 1");
        ensure!(self.beta_init > 0.0, "beta_init must be > 0");
        ensure!(
            (0.0..1.0).contains(&self.lambda_phi_init) && self.lambda_phi_init > 0.0,
            "lambda_phi_init must lie in (0, 1)"
        );
        ensure!(self.lambda_psi_init > 0.0, "lambda_psi_init must be > 0");
        ensure!((0.0..1.0).contains(&self.dropout), "dropout must lie in [0, 1)");
        Ok(())
    }

    fn mosaic_block_base(&self) -> usize {
        let (d, h) = (self.d_model, self.n_heads);
        5 * d * d + 4 * d + 4 * h + if self.persistent_leaky { h } else { 0 }
    }

    /// Parameters of one transformer block.
    pub fn transformer_block_params(&self) -> usize {
        let d = self.d_model;
        12 * d * d + 13 * d
    }

    /// Parameters of one mosaic block with `slots` persistent pairs.
    pub fn mosaic_block_params(&self, slots: usize) -> usize {
        self.mosaic_block_base() + 2 * slots * self.d_model
    }

    /// Resolved persistent slot count.
    pub fn slot_count(&self) -> usize {
        let d = self.d_model as f64;
        let gap = self.transformer_block_params() as f64 - self.mosaic_block_base() as f64;
        let per_block = match self.slots {
            SlotSizing::Fixed(n) => return n.max(1),
            SlotSizing::MatchBlock => gap,
            SlotSizing::MatchTotal => gap + (self.max_len as f64 * d) / self.n_blocks as f64,
        };
        ((per_block / (2.0 * d)).round() as usize).max(1)
    }
}

/// A token model: mosaic or transformer blocks between a token embedding
/// and a readout tied to that embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceModel {
    pub family: Family,
    pub config: LmConfig,
    pub params: Parameters,
}

impl Trainable for SequenceModel {
    fn parameters(&self) -> &Parameters {
        &self.params
    }

    fn parameters_mut(&mut self) -> &mut Parameters {
        &mut self.params
    }

    /// Stored persistent keys go back to unit norm per head.
    fn project(&mut self) {
        if self.family != Family::Mosaic {
            return;
        }
        let heads = self.config.n_heads;
        for b in 0..self.config.n_blocks {
            if let Some(keys) = self.params.get_mut(&format!("blocks.{b}.pers.keys")) {
                renormalize_heads(keys, heads);
            }
        }
    }
}

fn renormalize_heads(t: &mut Tensor, heads: usize) {
    let dk = t.cols() / heads;
    for r in 0..t.rows() {
        let row = t.row_mut(r);
        for h in 0..heads {
            let n = normalize(&row[h * dk..(h + 1) * dk]);
            row[h * dk..(h + 1) * dk].copy_from_slice(&n);
        }
    }
}

struct Init {
    rng: Rng,
    params: Parameters,
}

impl Init {
    fn normal(&mut self, path: String, shape: &[usize], std: f64) {
        let dist = Normal::new(0.0, std).expect("valid normal");
        let n = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        self.params
            .push(path, Tensor::new(shape.to_vec(), data).expect("shape"), true);
    }

    /// Weight matrix `[out, in]` with variance `1 / in`.
    fn weight(&mut self, path: String, out: usize, inp: usize) {
        self.normal(path, &[out, inp], 1.0 / (inp as f64).sqrt());
    }

    fn fill(&mut self, path: String, shape: &[usize], v: f64) {
        self.params.push(path, Tensor::filled(shape, v), false);
    }

    fn layer_norm(&mut self, prefix: &str) {
        self.fill(format!("{prefix}.gain"), &[self.d()], 1.0);
        self.fill(format!("{prefix}.bias"), &[self.d()], 0.0);
    }

    fn d(&self) -> usize {
        self.params.get("embed").expect("embedding first").cols()
    }
}

fn start(cfg: &LmConfig, seed: u64, label: &str) -> Result<Init> {
    cfg.validate()?;
    let mut init = Init {
        rng: rng::stream(seed, label),
        params: Parameters::new(),
    };
    init.normal(
        "embed".into(),
        &[cfg.vocab, cfg.d_model],
        1.0 / (cfg.d_model as f64).sqrt(),
    );
    Ok(init)
}

/// Mosaic LM: contextual then persistent memory layers per block, each
/// pre-normalized with a residual connection. No position parameters.
pub fn build_mosaic_lm(cfg: &LmConfig, seed: u64) -> Result<SequenceModel> {
    let mut init = start(cfg, seed, "mosaic-init")?;
    let (d, h) = (cfg.d_model, cfg.n_heads);
    let slots = cfg.slot_count();
    for b in 0..cfg.n_blocks {
        let p = format!("blocks.{b}");
        init.layer_norm(&format!("{p}.ln1"));
        init.weight(format!("{p}.ctx.w_phi"), d, d);
        init.weight(format!("{p}.ctx.w_psi"), d, d);
        init.fill(format!("{p}.ctx.lambda_phi"), &[h], logit(cfg.lambda_phi_init));
        init.fill(format!("{p}.ctx.lambda_psi"), &[h], softplus_inv(cfg.lambda_psi_init));
        init.fill(format!("{p}.ctx.beta"), &[h], softplus_inv(cfg.beta_init));
        init.weight(format!("{p}.ctx.mix"), d, d);
        init.layer_norm(&format!("{p}.ln2"));
        init.weight(format!("{p}.pers.w_phi"), d, d);
        init.normal(format!("{p}.pers.keys"), &[slots, d], 1.0);
        init.normal(format!("{p}.pers.values"), &[slots, d], 1.0 / ((d / h) as f64).sqrt());
        init.fill(format!("{p}.pers.beta"), &[h], softplus_inv(cfg.beta_init));
        if cfg.persistent_leaky {
            init.fill(format!("{p}.pers.lambda_phi"), &[h], logit(cfg.lambda_phi_init));
        }
        init.weight(format!("{p}.pers.mix"), d, d);
    }
    init.layer_norm("final_ln");
    let mut model = SequenceModel {
        family: Family::Mosaic,
        config: cfg.clone(),
        params: init.params,
    };
    model.project();
    Ok(model)
}

/// Pre-norm decoder transformer with learned absolute positions.
pub fn build_baseline_transformer(cfg: &LmConfig, seed: u64) -> Result<SequenceModel> {
    let mut init = start(cfg, seed, "transformer-init")?;
    let d = cfg.d_model;
    init.normal("pos".into(), &[cfg.max_len, d], 1.0 / (d as f64).sqrt());
    for b in 0..cfg.n_blocks {
        let p = format!("blocks.{b}");
        init.layer_norm(&format!("{p}.ln1"));
        for w in ["q", "k", "v", "o"] {
            init.weight(format!("{p}.attn.w_{w}"), d, d);
            init.fill(format!("{p}.attn.b_{w}"), &[d], 0.0);
        }
        init.layer_norm(&format!("{p}.ln2"));
        init.weight(format!("{p}.ffn.w1"), 4 * d, d);
        init.fill(format!("{p}.ffn.b1"), &[4 * d], 0.0);
        init.weight(format!("{p}.ffn.w2"), d, 4 * d);
        init.fill(format!("{p}.ffn.b2"), &[d], 0.0);
    }
    init.layer_norm("final_ln");
    Ok(SequenceModel {
        family: Family::Transformer,
        config: cfg.clone(),
        params: init.params,
    })
}

pub fn build_lm(family: Family, cfg: &LmConfig, seed: u64) -> Result<SequenceModel> {
    match family {
        Family::Mosaic => build_mosaic_lm(cfg, seed),
        Family::Transformer => build_baseline_transformer(cfg, seed),
    }
}

/// Nodes of interest from one forward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    /// `[L, vocab]`.
    pub logits: Var,
    /// The contextual (mosaic) or self-attention (transformer) node of each
    /// block; its recorded weights are the block's attention maps.
    pub attention: Vec<Var>,
}

struct Ctx<'a> {
    model: &'a SequenceModel,
    vars: &'a [Var],
    dropout: Option<&'a mut Rng>,
}

impl Ctx<'_> {
    fn p(&self, path: &str) -> Var {
        let i = self
            .model
            .params
            .index_of(path)
            .unwrap_or_else(|| panic!("missing parameter {path}"));
        self.vars[i]
    }

    fn layer_norm(&self, tape: &mut Tape, x: Var, prefix: &str) -> Var {
        let (g, b) = (self.p(&format!("{prefix}.gain")), self.p(&format!("{prefix}.bias")));
        tape.layer_norm(x, g, b, LN_EPS)
    }

    fn affine(&self, tape: &mut Tape, x: Var, w: &str, b: &str) -> Var {
        let y = tape.linear(x, self.p(w));
        tape.add_row(y, self.p(b))
    }

    fn dropout(&mut self, tape: &mut Tape, x: Var) -> Var {
        let rate = self.model.config.dropout;
        let Some(rng) = self.dropout.as_deref_mut() else {
            return x;
        };
        if rate == 0.0 {
            return x;
        }
        let shape = tape.value(x).shape().to_vec();
        let n: usize = shape.iter().product();
        let keep = 1.0 / (1.0 - rate);
        let mask = (0..n)
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let m = tape.constant(Tensor::new(shape, mask).expect("shape"));
        tape.mul(x, m)
    }
}

impl SequenceModel {
    /// Records the forward pass over `tokens` on `tape`. `vars` are the
    /// parameters bound in order; passing an RNG enables dropout.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], tokens: &[usize], dropout: Option<&mut Rng>) -> Result<Trace> {
        let cfg = &self.config;
        ensure!(!tokens.is_empty(), "empty input");
        ensure!(vars.len() == self.params.len(), "parameters bound to a different model");
        ensure!(
            tokens.iter().all(|&t| t < cfg.vocab),
            "token id outside vocab {}",
            cfg.vocab
        );
        if self.family == Family::Transformer {
            ensure!(
                tokens.len() <= cfg.max_len,
                "input of length {} exceeds the position table ({})",
                tokens.len(),
                cfg.max_len
            );
        }
        let mut cx = Ctx {
            model: self,
            vars,
            dropout,
        };
        let embed = cx.p("embed");
        let mut x = tape.embedding(embed, tokens);
        if self.family == Family::Transformer {
            let positions: Vec<usize> = (0..tokens.len()).collect();
            let pos = tape.embedding(cx.p("pos"), &positions);
            x = tape.add(x, pos);
        }
        let mut attention = Vec::with_capacity(cfg.n_blocks);
        for b in 0..cfg.n_blocks {
            let (delta, attn) = match self.family {
                Family::Mosaic => self.mosaic_block(&mut cx, tape, x, b),
                Family::Transformer => self.transformer_block(&mut cx, tape, x, b),
            };
            x = delta;
            attention.push(attn);
        }
        let x = cx.layer_norm(tape, x, "final_ln");
        let logits = tape.linear(x, embed);
        Ok(Trace { logits, attention })
    }

    fn mosaic_block(&self, cx: &mut Ctx, tape: &mut Tape, x: Var, b: usize) -> (Var, Var) {
        let heads = self.config.n_heads;
        let p = format!("blocks.{b}");
        let h = cx.layer_norm(tape, x, &format!("{p}.ln1"));
        let lambda_phi = tape.sigmoid(cx.p(&format!("{p}.ctx.lambda_phi")));
        let lambda_psi = tape.softplus(cx.p(&format!("{p}.ctx.lambda_psi")));
        let beta = tape.softplus(cx.p(&format!("{p}.ctx.beta")));
        let vars = ContextualVars {
            w_phi: cx.p(&format!("{p}.ctx.w_phi")),
            w_psi: cx.p(&format!("{p}.ctx.w_psi")),
            lambda_phi,
            lambda_psi,
            beta,
        };
        let attn = contextual_layer(tape, h, &vars, heads);
        let c = tape.linear(attn, cx.p(&format!("{p}.ctx.mix")));
        let c = cx.dropout(tape, c);
        let x = tape.add(x, c);

        let h = cx.layer_norm(tape, x, &format!("{p}.ln2"));
        let lambda_phi = self
            .config
            .persistent_leaky
            .then(|| tape.sigmoid(cx.p(&format!("{p}.pers.lambda_phi"))));
        let beta = tape.softplus(cx.p(&format!("{p}.pers.beta")));
        let vars = PersistentVars {
            w_phi: cx.p(&format!("{p}.pers.w_phi")),
            lambda_phi,
            stored_keys: cx.p(&format!("{p}.pers.keys")),
            stored_values: cx.p(&format!("{p}.pers.values")),
            beta,
        };
        let y = persistent_layer(tape, h, &vars, heads);
        let y = tape.linear(y, cx.p(&format!("{p}.pers.mix")));
        let y = cx.dropout(tape, y);
        (tape.add(x, y), attn)
    }

    fn transformer_block(&self, cx: &mut Ctx, tape: &mut Tape, x: Var, b: usize) -> (Var, Var) {
        let heads = self.config.n_heads;
        let dh = self.config.d_model / heads;
        let p = format!("blocks.{b}");
        let h = cx.layer_norm(tape, x, &format!("{p}.ln1"));
        let q = cx.affine(tape, h, &format!("{p}.attn.w_q"), &format!("{p}.attn.b_q"));
        let k = cx.affine(tape, h, &format!("{p}.attn.w_k"), &format!("{p}.attn.b_k"));
        let v = cx.affine(tape, h, &format!("{p}.attn.w_v"), &format!("{p}.attn.b_v"));
        let scale = tape.constant(Tensor::filled(&[heads], 1.0 / (dh as f64).sqrt()));
        let attn = tape.attention(q, k, v, scale, heads, Mask::Causal);
        let a = cx.dropout(tape, attn);
        let o = cx.affine(tape, a, &format!("{p}.attn.w_o"), &format!("{p}.attn.b_o"));
        let o = cx.dropout(tape, o);
        let x = tape.add(x, o);

        let h = cx.layer_norm(tape, x, &format!("{p}.ln2"));
        let f = cx.affine(tape, h, &format!("{p}.ffn.w1"), &format!("{p}.ffn.b1"));
        let f = tape.gelu(f);
        let f = cx.affine(tape, f, &format!("{p}.ffn.w2"), &format!("{p}.ffn.b2"));
        let f = cx.dropout(tape, f);
        (tape.add(x, f), attn)
    }

    /// Logits `[L, vocab]` for `tokens` without recording gradients.
    pub fn logits(&self, tokens: &[usize]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.params.bind_frozen(&mut tape);
        let trace = self.forward(&mut tape, &vars, tokens, None)?;
        Ok(tape.value(trace.logits).clone())
    }
}
