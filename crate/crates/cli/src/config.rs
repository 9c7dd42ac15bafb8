//! Experiment configuration: a [`Record`] whose every key has a default.
//!
//! A config file or `--set section.key=value` override may only name keys
//! that exist in [`ExperimentConfig::default`]; anything else is rejected
//! before any compute starts. A run manifest is itself a valid config: its
//! bookkeeping sections are skipped on load.

use std::fmt;
use std::str::FromStr;

use mosaic_core::datasets::{IclConfig, InductionConfig, PfaConfig};
use mosaic_core::networks::{Family, LmConfig, SlotSizing};
use mosaic_core::record::{dotted, fmt_f64, fmt_list, parse_list, Record};
use mosaic_core::training::{AdamConfig, ScheduleSpec};

use crate::error::{detail, CliError, CliResult};

/// Sections a manifest adds on top of the resolved config.
pub const MANIFEST_SECTIONS: &[&str] = &["manifest", "seeds", "pools", "metrics", "artifacts", "timing"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Moons,
    Induction,
    Icl,
    Gradcheck,
    AttnProfile,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Moons => "moons",
            Kind::Induction => "induction",
            Kind::Icl => "icl",
            Kind::Gradcheck => "gradcheck",
            Kind::AttnProfile => "attnprofile",
        }
    }
}

impl FromStr for Kind {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Kind> {
        Ok(match s {
            "moons" => Kind::Moons,
            "induction" => Kind::Induction,
            "icl" => Kind::Icl,
            "gradcheck" => Kind::Gradcheck,
            "attnprofile" => Kind::AttnProfile,
            other => return Err(CliError::config(format!("unknown experiment kind {other:?}"))),
        })
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Optimization length and learning-rate schedule of one experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainKnobs {
    pub batch: usize,
    pub iterations: usize,
    pub peak_lr: f64,
    pub warmup: usize,
    pub min_lr: f64,
}

impl TrainKnobs {
    pub fn schedule(&self) -> ScheduleSpec {
        ScheduleSpec {
            peak_lr: self.peak_lr,
            warmup: self.warmup,
            total: self.iterations,
            min_lr: self.min_lr,
        }
    }

    fn write(&self, r: &mut Record, s: &str) {
        r.set(s, "batch", self.batch);
        r.set(s, "iterations", self.iterations);
        r.set(s, "peak_lr", fmt_f64(self.peak_lr));
        r.set(s, "warmup", self.warmup);
        r.set(s, "min_lr", fmt_f64(self.min_lr));
    }

    fn read(r: &Record, s: &str) -> CliResult<TrainKnobs> {
        let k = TrainKnobs {
            batch: value(r, s, "batch")?,
            iterations: value(r, s, "iterations")?,
            peak_lr: value(r, s, "peak_lr")?,
            warmup: value(r, s, "warmup")?,
            min_lr: value(r, s, "min_lr")?,
        };
        check(k.batch >= 1, format!("{s}.batch must be >= 1"))?;
        k.schedule()
            .validate()
            .map_err(|e| CliError::config(format!("[{s}] {}", detail(&e))))?;
        Ok(k)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSection {
    pub seed: u64,
    pub family: Family,
    /// Must match the subcommand's kind when set.
    pub kind: Option<Kind>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSection {
    pub blocks: usize,
    pub heads: usize,
    pub d_model: usize,
    pub slots: SlotSizing,
    pub persistent_leaky: bool,
    pub beta_init: f64,
    pub lambda_phi_init: f64,
    pub lambda_psi_init: f64,
    pub dropout: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MoonsSection {
    pub heads: usize,
    pub init_scale: f64,
    pub seq_len: usize,
    pub train: TrainKnobs,
    pub eval_triple: [u64; 3],
    pub eval_sequences: usize,
    pub horizon: usize,
    /// Largest context length on the curve; 0 picks max(2 lcm, 3 p3).
    pub t_max: usize,
    /// Checkpoint read by `moons-eval`, or `identity`.
    pub checkpoint: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InductionSection {
    pub vocab: usize,
    pub len: usize,
    pub triggers: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub depths: Vec<usize>,
    pub train: TrainKnobs,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IclSection {
    pub states: (usize, usize),
    pub alphabet: usize,
    pub edges: (usize, usize),
    pub strings: (usize, usize),
    pub string_len: (usize, usize),
    pub train_sequences: usize,
    pub train_pfas: usize,
    pub val_sequences: usize,
    pub test_sequences: usize,
    pub iid_sequences: usize,
    pub train: TrainKnobs,
    /// Checkpoint read by `icl-eval`.
    pub checkpoint: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSection {
    pub families: Vec<Family>,
    pub blocks: Vec<usize>,
    pub d_model: Vec<usize>,
    pub peak_lr: Vec<f64>,
    /// Most training runs a sweep may start.
    pub budget: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckSection {
    pub coords: usize,
    pub step: f64,
    pub tol: f64,
    pub d_model: usize,
    /// Token sequence length for the sequence models.
    pub seq_len: usize,
    /// Observation rows for the moons models.
    pub moons_len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProfileSection {
    pub lambdas: Vec<f64>,
    pub d_in: usize,
    pub d_k: usize,
    /// Kernel bandwidth of the profiled unit.
    pub beta: f64,
    /// Lag-one correlation of the synthetic inputs.
    pub rho: f64,
    pub len: usize,
    pub sequences: usize,
    /// Trained sequence-model checkpoint to profile instead of a unit.
    pub checkpoint: String,
    pub layer: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub run: RunSection,
    pub model: ModelSection,
    pub optim: AdamConfig,
    pub moons: MoonsSection,
    pub induction: InductionSection,
    pub icl: IclSection,
    pub sweep: SweepSection,
    pub gradcheck: GradcheckSection,
    pub profile: ProfileSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            run: RunSection {
                seed: 0,
                family: Family::Mosaic,
                kind: None,
            },
            model: ModelSection {
                blocks: 1,
                heads: 2,
                d_model: 32,
                slots: SlotSizing::MatchTotal,
                persistent_leaky: false,
                beta_init: 8.0,
                lambda_phi_init: 0.1,
                lambda_psi_init: 1.0,
                dropout: 0.0,
            },
            optim: AdamConfig::default(),
            moons: MoonsSection {
                heads: 3,
                init_scale: 0.1,
                seq_len: 800,
                train: TrainKnobs {
                    batch: 8,
                    iterations: 600,
                    peak_lr: 0.05,
                    warmup: 30,
                    min_lr: 1e-4,
                },
                eval_triple: [6, 8, 12],
                eval_sequences: 512,
                horizon: 25,
                t_max: 0,
                checkpoint: String::new(),
            },
            induction: InductionSection {
                vocab: 16,
                len: 64,
                triggers: 4,
                train_samples: 2000,
                test_samples: 500,
                depths: vec![1],
                train: TrainKnobs {
                    batch: 8,
                    iterations: 8000,
                    peak_lr: 0.003,
                    warmup: 400,
                    min_lr: 3e-5,
                },
            },
            icl: IclSection {
                states: (4, 12),
                alphabet: 18,
                edges: (2, 4),
                strings: (10, 20),
                string_len: (1, 10),
                train_sequences: 1000,
                train_pfas: 1000,
                val_sequences: 200,
                test_sequences: 200,
                iid_sequences: 200,
                train: TrainKnobs {
                    batch: 8,
                    iterations: 2000,
                    peak_lr: 0.01,
                    warmup: 100,
                    min_lr: 1e-4,
                },
                checkpoint: String::new(),
            },
            sweep: SweepSection {
                families: vec![Family::Mosaic, Family::Transformer],
                blocks: vec![1, 2],
                d_model: vec![32, 64],
                peak_lr: vec![0.003, 0.01],
                budget: 16,
            },
            gradcheck: GradcheckSection {
                coords: 24,
                step: 1e-5,
                tol: 1e-4,
                d_model: 8,
                seq_len: 8,
                moons_len: 40,
            },
            profile: ProfileSection {
                lambdas: vec![0.0, 0.5, 0.9],
                d_in: 32,
                d_k: 32,
                beta: 16.0,
                rho: 0.95,
                len: 32,
                sequences: 256,
                checkpoint: String::new(),
                layer: 0,
            },
        }
    }
}

fn check(cond: bool, msg: impl fmt::Display) -> CliResult<()> {
    if cond {
        Ok(())
    } else {
        Err(CliError::config(msg))
    }
}

fn value<T: FromStr>(r: &Record, section: &str, key: &str) -> CliResult<T> {
    r.parse_value(section, key).map_err(|e| CliError::config(e.to_string()))
}

fn list<T: FromStr>(r: &Record, section: &str, key: &str) -> CliResult<Vec<T>> {
    let raw = r.get(section, key).unwrap_or("");
    parse_list(raw).map_err(|e| CliError::config(format!("{}: {e}", dotted(section, key))))
}

fn range(r: &Record, section: &str, key: &str) -> CliResult<(usize, usize)> {
    let lo: usize = value(r, section, &format!("{key}_min"))?;
    let hi: usize = value(r, section, &format!("{key}_max"))?;
    check(
        1 <= lo && lo <= hi,
        format!("{section}.{key}_min..{key}_max must be a nonempty positive range"),
    )?;
    Ok((lo, hi))
}

fn set_range(r: &mut Record, section: &str, key: &str, (lo, hi): (usize, usize)) {
    r.set(section, &format!("{key}_min"), lo);
    r.set(section, &format!("{key}_max"), hi);
}

fn floats(v: &[f64]) -> String {
    fmt_list(&v.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>())
}

pub fn slots_name(s: SlotSizing) -> String {
    match s {
        SlotSizing::Fixed(n) => n.to_string(),
        SlotSizing::MatchBlock => "match-block".into(),
        SlotSizing::MatchTotal => "match-total".into(),
    }
}

fn parse_slots(raw: &str) -> CliResult<SlotSizing> {
    match raw {
        "match-block" => Ok(SlotSizing::MatchBlock),
        "match-total" => Ok(SlotSizing::MatchTotal),
        n => n.parse().ok().filter(|&n| n > 0).map(SlotSizing::Fixed).ok_or_else(|| {
            CliError::config(format!(
                "model.slots: expected match-block, match-total or a positive count, got {raw:?}"
            ))
        }),
    }
}

impl ExperimentConfig {
    /// Every key with its current value.
    pub fn to_record(&self) -> Record {
        let mut r = Record::new();
        r.set("run", "seed", self.run.seed);
        r.set("run", "family", self.run.family.name());
        r.set("run", "kind", self.run.kind.map_or("auto", Kind::name));

        let m = &self.model;
        r.set("model", "blocks", m.blocks);
        r.set("model", "heads", m.heads);
        r.set("model", "d_model", m.d_model);
        r.set("model", "slots", slots_name(m.slots));
        r.set("model", "persistent_leaky", m.persistent_leaky);
        r.set("model", "beta_init", fmt_f64(m.beta_init));
        r.set("model", "lambda_phi_init", fmt_f64(m.lambda_phi_init));
        r.set("model", "lambda_psi_init", fmt_f64(m.lambda_psi_init));
        r.set("model", "dropout", fmt_f64(m.dropout));

        r.set("optim", "beta1", fmt_f64(self.optim.beta1));
        r.set("optim", "beta2", fmt_f64(self.optim.beta2));
        r.set("optim", "eps", fmt_f64(self.optim.eps));
        r.set("optim", "weight_decay", fmt_f64(self.optim.weight_decay));

        let mo = &self.moons;
        r.set("moons", "heads", mo.heads);
        r.set("moons", "init_scale", fmt_f64(mo.init_scale));
        r.set("moons", "seq_len", mo.seq_len);
        mo.train.write(&mut r, "moons");
        r.set("moons", "eval_triple", fmt_list(&mo.eval_triple));
        r.set("moons", "eval_sequences", mo.eval_sequences);
        r.set("moons", "horizon", mo.horizon);
        r.set("moons", "t_max", mo.t_max);
        r.set("moons", "checkpoint", &mo.checkpoint);

        let ind = &self.induction;
        r.set("induction", "vocab", ind.vocab);
        r.set("induction", "len", ind.len);
        r.set("induction", "triggers", ind.triggers);
        r.set("induction", "train_samples", ind.train_samples);
        r.set("induction", "test_samples", ind.test_samples);
        r.set("induction", "depths", fmt_list(&ind.depths));
        ind.train.write(&mut r, "induction");

        let icl = &self.icl;
        set_range(&mut r, "icl", "states", icl.states);
        r.set("icl", "alphabet", icl.alphabet);
        set_range(&mut r, "icl", "edges", icl.edges);
        set_range(&mut r, "icl", "strings", icl.strings);
        set_range(&mut r, "icl", "string_len", icl.string_len);
        r.set("icl", "train_sequences", icl.train_sequences);
        r.set("icl", "train_pfas", icl.train_pfas);
        r.set("icl", "val_sequences", icl.val_sequences);
        r.set("icl", "test_sequences", icl.test_sequences);
        r.set("icl", "iid_sequences", icl.iid_sequences);
        icl.train.write(&mut r, "icl");
        r.set("icl", "checkpoint", &icl.checkpoint);

        let sw = &self.sweep;
        r.set(
            "sweep",
            "families",
            fmt_list(&sw.families.iter().map(|f| f.name()).collect::<Vec<_>>()),
        );
        r.set("sweep", "blocks", fmt_list(&sw.blocks));
        r.set("sweep", "d_model", fmt_list(&sw.d_model));
        r.set("sweep", "peak_lr", floats(&sw.peak_lr));
        r.set("sweep", "budget", sw.budget);

        let g = &self.gradcheck;
        r.set("gradcheck", "coords", g.coords);
        r.set("gradcheck", "step", fmt_f64(g.step));
        r.set("gradcheck", "tol", fmt_f64(g.tol));
        r.set("gradcheck", "d_model", g.d_model);
        r.set("gradcheck", "seq_len", g.seq_len);
        r.set("gradcheck", "moons_len", g.moons_len);

        let p = &self.profile;
        r.set("profile", "lambdas", floats(&p.lambdas));
        r.set("profile", "d_in", p.d_in);
        r.set("profile", "d_k", p.d_k);
        r.set("profile", "beta", fmt_f64(p.beta));
        r.set("profile", "rho", fmt_f64(p.rho));
        r.set("profile", "len", p.len);
        r.set("profile", "sequences", p.sequences);
        r.set("profile", "checkpoint", &p.checkpoint);
        r.set("profile", "layer", p.layer);
        r
    }

    /// Reads a complete record (as produced by [`Self::to_record`]) and
    /// validates every field.
    pub fn from_record(r: &Record) -> CliResult<ExperimentConfig> {
        let kind = match r.get("run", "kind").unwrap_or("auto") {
            "auto" => None,
            k => Some(k.parse()?),
        };
        let family: Family = r
            .get("run", "family")
            .unwrap_or("")
            .parse()
            .map_err(|e: mosaic_core::Error| CliError::config(format!("run.family: {e}")))?;
        let families: Vec<String> = list(r, "sweep", "families")?;
        let families = families
            .iter()
            .map(|f| {
                f.parse::<Family>()
                    .map_err(|e| CliError::config(format!("sweep.families: {e}")))
            })
            .collect::<CliResult<Vec<_>>>()?;
        let triple: Vec<u64> = list(r, "moons", "eval_triple")?;
        let eval_triple: [u64; 3] = triple
            .try_into()
            .map_err(|_| CliError::config("moons.eval_triple needs three periods"))?;

        let cfg = ExperimentConfig {
            run: RunSection {
                seed: value(r, "run", "seed")?,
                family,
                kind,
            },
            model: ModelSection {
                blocks: value(r, "model", "blocks")?,
                heads: value(r, "model", "heads")?,
                d_model: value(r, "model", "d_model")?,
                slots: parse_slots(r.get("model", "slots").unwrap_or(""))?,
                persistent_leaky: value(r, "model", "persistent_leaky")?,
                beta_init: value(r, "model", "beta_init")?,
                lambda_phi_init: value(r, "model", "lambda_phi_init")?,
                lambda_psi_init: value(r, "model", "lambda_psi_init")?,
                dropout: value(r, "model", "dropout")?,
            },
            optim: AdamConfig {
                beta1: value(r, "optim", "beta1")?,
                beta2: value(r, "optim", "beta2")?,
                eps: value(r, "optim", "eps")?,
                weight_decay: value(r, "optim", "weight_decay")?,
            },
            moons: MoonsSection {
                heads: value(r, "moons", "heads")?,
                init_scale: value(r, "moons", "init_scale")?,
                seq_len: value(r, "moons", "seq_len")?,
                train: TrainKnobs::read(r, "moons")?,
                eval_triple,
                eval_sequences: value(r, "moons", "eval_sequences")?,
                horizon: value(r, "moons", "horizon")?,
                t_max: value(r, "moons", "t_max")?,
                checkpoint: r.get("moons", "checkpoint").unwrap_or("").to_string(),
            },
            induction: InductionSection {
                vocab: value(r, "induction", "vocab")?,
                len: value(r, "induction", "len")?,
                triggers: value(r, "induction", "triggers")?,
                train_samples: value(r, "induction", "train_samples")?,
                test_samples: value(r, "induction", "test_samples")?,
                depths: list(r, "induction", "depths")?,
                train: TrainKnobs::read(r, "induction")?,
            },
            icl: IclSection {
                states: range(r, "icl", "states")?,
                alphabet: value(r, "icl", "alphabet")?,
                edges: range(r, "icl", "edges")?,
                strings: range(r, "icl", "strings")?,
                string_len: range(r, "icl", "string_len")?,
                train_sequences: value(r, "icl", "train_sequences")?,
                train_pfas: value(r, "icl", "train_pfas")?,
                val_sequences: value(r, "icl", "val_sequences")?,
                test_sequences: value(r, "icl", "test_sequences")?,
                iid_sequences: value(r, "icl", "iid_sequences")?,
                train: TrainKnobs::read(r, "icl")?,
                checkpoint: r.get("icl", "checkpoint").unwrap_or("").to_string(),
            },
            sweep: SweepSection {
                families,
                blocks: list(r, "sweep", "blocks")?,
                d_model: list(r, "sweep", "d_model")?,
                peak_lr: list(r, "sweep", "peak_lr")?,
                budget: value(r, "sweep", "budget")?,
            },
            gradcheck: GradcheckSection {
                coords: value(r, "gradcheck", "coords")?,
                step: value(r, "gradcheck", "step")?,
                tol: value(r, "gradcheck", "tol")?,
                d_model: value(r, "gradcheck", "d_model")?,
                seq_len: value(r, "gradcheck", "seq_len")?,
                moons_len: value(r, "gradcheck", "moons_len")?,
            },
            profile: ProfileSection {
                lambdas: list(r, "profile", "lambdas")?,
                d_in: value(r, "profile", "d_in")?,
                d_k: value(r, "profile", "d_k")?,
                beta: value(r, "profile", "beta")?,
                rho: value(r, "profile", "rho")?,
                len: value(r, "profile", "len")?,
                sequences: value(r, "profile", "sequences")?,
                checkpoint: r.get("profile", "checkpoint").unwrap_or("").to_string(),
                layer: value(r, "profile", "layer")?,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Defaults, then `text` (a config or manifest), then `overrides`
    /// (`section.key=value`). Unknown keys fail.
    pub fn load(text: Option<&str>, overrides: &[String]) -> CliResult<ExperimentConfig> {
        let mut merged = ExperimentConfig::default().to_record();
        if let Some(text) = text {
            let file = Record::parse(text).map_err(|e| CliError::config(e.to_string()))?;
            let is_manifest = file.section("manifest").is_some();
            for s in file.sections() {
                if is_manifest && MANIFEST_SECTIONS.contains(&s.name.as_str()) {
                    continue;
                }
                for (k, v) in &s.entries {
                    apply(&mut merged, &s.name, k, v)?;
                }
            }
        }
        for o in overrides {
            let (path, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("override {o:?} is not key=value")))?;
            let (section, key) = path
                .trim()
                .split_once('.')
                .ok_or_else(|| CliError::config(format!("override key {path:?} is not section.key")))?;
            apply(&mut merged, section, key, v.trim())?;
        }
        ExperimentConfig::from_record(&merged)
    }

    fn validate(&self) -> CliResult<()> {
        let m = &self.model;
        check(m.blocks >= 1, "model.blocks must be >= 1")?;
        check((0.0..1.0).contains(&m.dropout), "model.dropout must lie in [0, 1)")?;
        check(matches!(self.moons.heads, 1 | 3), "moons.heads must be 1 or 3")?;
        check(self.moons.init_scale > 0.0, "moons.init_scale must be > 0")?;
        check(self.moons.seq_len >= 3, "moons.seq_len must be >= 3")?;
        check(self.moons.eval_sequences >= 1, "moons.eval_sequences must be >= 1")?;
        check(self.moons.horizon >= 1, "moons.horizon must be >= 1")?;
        check(
            self.moons.eval_triple.iter().all(|&p| p >= 1),
            "moons.eval_triple periods must be >= 1",
        )?;
        let ind = &self.induction;
        check(!ind.depths.is_empty(), "induction.depths is empty")?;
        check(ind.depths.iter().all(|&d| d >= 1), "induction.depths must be >= 1")?;
        check(
            ind.train_samples >= 1 && ind.test_samples >= 1,
            "induction sample counts must be >= 1",
        )?;
        self.induction_config()
            .validate()
            .map_err(|e| CliError::config(format!("[induction] {}", detail(&e))))?;
        let icl = &self.icl;
        check(icl.alphabet >= 2, "icl.alphabet must be >= 2")?;
        check(icl.edges.1 <= icl.alphabet, "icl.edges_max exceeds the alphabet")?;
        check(
            icl.train_pfas >= 1 && icl.train_sequences >= 1,
            "icl training set is empty",
        )?;
        check(
            icl.val_sequences >= 1 && icl.test_sequences >= 1 && icl.iid_sequences >= 1,
            "icl evaluation sets must be nonempty",
        )?;
        let sw = &self.sweep;
        check(!sw.families.is_empty(), "sweep.families is empty")?;
        check(
            !sw.blocks.is_empty() && !sw.d_model.is_empty() && !sw.peak_lr.is_empty(),
            "sweep grid axes must be nonempty",
        )?;
        check(sw.peak_lr.iter().all(|&v| v > 0.0), "sweep.peak_lr values must be > 0")?;
        let g = &self.gradcheck;
        check(g.coords >= 1, "gradcheck.coords must be >= 1")?;
        check(
            g.step > 0.0 && g.tol > 0.0,
            "gradcheck.step and gradcheck.tol must be > 0",
        )?;
        check(g.seq_len >= 2, "gradcheck.seq_len must be >= 2")?;
        check(g.moons_len >= 3, "gradcheck.moons_len must be >= 3")?;
        check(
            g.d_model.is_multiple_of(2),
            "gradcheck.d_model must be even (two heads)",
        )?;
        let p = &self.profile;
        check(!p.lambdas.is_empty(), "profile.lambdas is empty")?;
        check(
            p.lambdas.iter().all(|l| (0.0..1.0).contains(l)),
            "profile.lambdas must lie in [0, 1)",
        )?;
        check(
            p.len >= 2 && p.sequences >= 1,
            "profile needs len >= 2 and sequences >= 1",
        )?;
        check((0.0..1.0).contains(&p.rho.abs()), "profile.rho must lie in (-1, 1)")?;
        self.lm_config(self.icl.alphabet + 1, 1)
            .validate()
            .map_err(|e| CliError::config(format!("[model] {}", detail(&e))))?;
        Ok(())
    }

    /// Model architecture for `vocab` tokens and sequences up to `max_len`.
    pub fn lm_config(&self, vocab: usize, max_len: usize) -> LmConfig {
        let m = &self.model;
        LmConfig {
            vocab,
            d_model: m.d_model,
            n_blocks: m.blocks,
            n_heads: m.heads,
            max_len,
            slots: m.slots,
            persistent_leaky: m.persistent_leaky,
            beta_init: m.beta_init,
            lambda_phi_init: m.lambda_phi_init,
            lambda_psi_init: m.lambda_psi_init,
            dropout: m.dropout,
        }
    }

    pub fn induction_config(&self) -> InductionConfig {
        InductionConfig {
            vocab: self.induction.vocab,
            len: self.induction.len,
            triggers: self.induction.triggers,
        }
    }

    pub fn pfa_config(&self) -> PfaConfig {
        PfaConfig {
            states: self.icl.states.0..=self.icl.states.1,
            alphabet: self.icl.alphabet,
            edges_per_state: self.icl.edges.0..=self.icl.edges.1,
            ..PfaConfig::default()
        }
    }

    pub fn icl_config(&self) -> IclConfig {
        IclConfig {
            n_strings: self.icl.strings.0..=self.icl.strings.1,
            string_len: self.icl.string_len.0..=self.icl.string_len.1,
        }
    }
}

fn apply(merged: &mut Record, section: &str, key: &str, v: &str) -> CliResult<()> {
    if merged.get(section, key).is_none() {
        return Err(CliError::config(format!("unknown config key {}", dotted(section, key))));
    }
    if v.contains(['\n', '\r']) {
        return Err(CliError::config(format!(
            "value for {} spans lines",
            dotted(section, key)
        )));
    }
    merged.set(section, key, v);
    Ok(())
}
