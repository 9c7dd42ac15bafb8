use mosaic_core::datasets::{gen_moon_sequence_len, lcm, random_phases, MoonPool, MoonSequence, Split};
use mosaic_core::evaluation::{moons_error_curve, ErrorCurve, MoonForecaster};
use mosaic_core::networks::{build_moons_model_scaled, checkpoint, complex_rows, MoonsModel};
use mosaic_core::numerics::{Tape, Var};
use mosaic_core::rng;
use mosaic_core::training::{moons_sequence_loss, train, TrainConfig, TrainReport, MOONS_CLIP};

use super::{load_into, loss_csv, meta_get, meta_string, read_checkpoint, RunOutput, Seeds};
use crate::config::{ExperimentConfig, Kind};
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;

/// Sequences scored after training to fill the report's validation entry.
const VALIDATION_SEQUENCES: usize = 4;

/// Mean error in each window between consecutive transition boundaries.
///
/// Windows are half-open `(lo, hi]` and start after `T = 1`, whose memory
/// is empty. `pre` covers `T < p1`, `post` covers `T > p3`.
#[derive(Clone, Debug, PartialEq)]
pub struct Transitions {
    pub periods: [usize; 3],
    pub lcm: usize,
    pub t_max: usize,
    /// Means over `(1,p1]`, `(p1,p2]`, `(p2,p3]`, `(p3,lcm]`, `(lcm,t_max]`;
    /// `None` for empty windows.
    pub windows: [Option<f64>; 5],
    pub pre: Option<f64>,
    pub post: Option<f64>,
}

impl Transitions {
    pub fn from_curve(curve: &ErrorCurve, t_max: usize) -> Transitions {
        let mut p = curve.periods.map(|v| v as usize);
        p.sort_unstable();
        let l = curve.lcm as usize;
        let bounds = [1, p[0], p[1], p[2], l, t_max];
        let windows = std::array::from_fn(|i| curve.window_mean(bounds[i], bounds[i + 1]));
        Transitions {
            periods: p,
            lcm: l,
            t_max,
            windows,
            pre: curve.window_mean(1, p[0].saturating_sub(1)),
            post: curve.window_mean(p[2], t_max),
        }
    }

    /// Ratio of window `i + 1` to window `i`: the drop across boundary
    /// `p1`, `p2`, `p3` or `lcm` for `i = 0..4`.
    pub fn ratio(&self, i: usize) -> Option<f64> {
        Some(self.windows[i + 1]? / self.windows[i]?)
    }

    pub fn post_over_pre(&self) -> Option<f64> {
        Some(self.post? / self.pre?)
    }

    fn record(&self, m: &mut RunManifest) {
        const NAMES: [&str; 5] = ["start_p1", "p1_p2", "p2_p3", "p3_lcm", "lcm_end"];
        for (name, w) in NAMES.iter().zip(&self.windows) {
            if let Some(w) = w {
                m.metric(format!("window.{name}"), *w);
            }
        }
        for (i, b) in ["p1", "p2", "p3", "lcm"].iter().enumerate() {
            if let Some(r) = self.ratio(i) {
                m.metric(format!("drop.{b}"), r);
            }
        }
        if let Some(v) = self.pre {
            m.metric("mean_before_p1", v);
        }
        if let Some(v) = self.post {
            m.metric("mean_after_p3", v);
        }
        if let Some(v) = self.post_over_pre() {
            m.metric("after_p3_over_before_p1", v);
        }
    }
}

/// Largest context on the error curve.
pub fn curve_t_max(cfg: &ExperimentConfig) -> usize {
    let t = cfg.moons.eval_triple;
    if cfg.moons.t_max > 0 {
        return cfg.moons.t_max;
    }
    let p3 = *t.iter().max().unwrap() as usize;
    (2 * lcm(&t) as usize).max(3 * p3)
}

/// Evaluation sequences sharing the configured triple, long enough for
/// every rollout.
pub fn eval_sequences(cfg: &ExperimentConfig, seed: u64) -> CliResult<Vec<MoonSequence>> {
    let len = curve_t_max(cfg) + cfg.moons.horizon;
    let mut r = rng::stream(seed, "moons-eval");
    (0..cfg.moons.eval_sequences)
        .map(|_| {
            let sys = random_phases(cfg.moons.eval_triple, &mut r)
                .map_err(|e| CliError::config(format!("moons.eval_triple: {e}")))?;
            Ok(gen_moon_sequence_len(&sys, len))
        })
        .collect()
}

pub fn error_curve<F: MoonForecaster + ?Sized>(cfg: &ExperimentConfig, f: &F, seed: u64) -> CliResult<ErrorCurve> {
    let seqs = eval_sequences(cfg, seed)?;
    Ok(moons_error_curve(f, &seqs, 1..=curve_t_max(cfg), cfg.moons.horizon)?)
}

/// Mean loss of `model` over a batch drawn from `pool`.
fn batch_loss(
    m: &MoonsModel,
    tape: &mut Tape,
    vars: &[Var],
    pool: &MoonPool,
    r: &mut rng::Rng,
    batch: usize,
    len: usize,
) -> mosaic_core::Result<Var> {
    let mut total: Option<Var> = None;
    for _ in 0..batch {
        let seq = gen_moon_sequence_len(&pool.draw(r)?, len);
        let x = complex_rows(&seq.observations)?;
        let l = moons_sequence_loss(tape, m, vars, &x, MOONS_CLIP)?;
        total = Some(match total {
            Some(t) => tape.add(t, l),
            None => l,
        });
    }
    let total = total.expect("batch >= 1");
    Ok(tape.scale(total, 1.0 / batch as f64))
}

pub fn train_moons_model(cfg: &ExperimentConfig, seeds: &Seeds) -> CliResult<(MoonsModel, TrainReport)> {
    let mc = &cfg.moons;
    let mut model = build_moons_model_scaled(mc.heads, seeds.init, mc.init_scale)?;
    let pool = MoonPool::standard(Split::Train);
    let val_pool = MoonPool::standard(Split::Validation);
    let tc = TrainConfig {
        iterations: mc.train.iterations,
        schedule: mc.train.schedule(),
        adam: cfg.optim.clone(),
        eval_every: 0,
    };
    let report = train(
        &mut model,
        &tc,
        |m, tape, vars, i| {
            let mut r = rng::stream(seeds.batches, &format!("batch-{i}"));
            batch_loss(m, tape, vars, &pool, &mut r, mc.train.batch, mc.seq_len)
        },
        |m| {
            let mut tape = Tape::new();
            let vars = m.params.bind_frozen(&mut tape);
            let mut r = rng::stream(seeds.eval, "moons-validation");
            let l = batch_loss(m, &mut tape, &vars, &val_pool, &mut r, VALIDATION_SEQUENCES, mc.seq_len)?;
            Ok(tape.value(l).item())
        },
    )?;
    Ok((model, report))
}

pub struct MoonsRun {
    pub model: MoonsModel,
    pub report: Option<TrainReport>,
    pub curve: ErrorCurve,
    pub transitions: Transitions,
    pub output: RunOutput,
}

fn describe_pools(m: &mut RunManifest, cfg: &ExperimentConfig) {
    m.pool("moons_train", MoonPool::standard(Split::Train).describe());
    m.pool("moons_validation", MoonPool::standard(Split::Validation).describe());
    let t = cfg.moons.eval_triple;
    let held_out = !MoonPool::standard(Split::Train).contains(&t);
    m.pool(
        "moons_eval_triple",
        format!("{} {} {} (held out: {held_out})", t[0], t[1], t[2]),
    );
}

fn finish(
    command: &str,
    cfg: &ExperimentConfig,
    seeds: &Seeds,
    model: MoonsModel,
    report: Option<TrainReport>,
) -> CliResult<MoonsRun> {
    let curve = error_curve(cfg, &model, seeds.eval)?;
    let transitions = Transitions::from_curve(&curve, curve_t_max(cfg));
    let mut m = RunManifest::new(command, Some(Kind::Moons), cfg);
    seeds.record(&mut m);
    describe_pools(&mut m, cfg);
    m.metric("heads", model.n_heads as f64);
    transitions.record(&mut m);
    let mut out = RunOutput::new(m);
    if let Some(rep) = &report {
        if let Some(l) = rep.final_loss() {
            out.manifest.metric("final_loss", l);
        }
        if let Some(v) = rep.final_validation() {
            out.manifest.metric("validation_loss", v);
        }
        out.manifest.timing("train_secs", rep.wall_clock_secs);
        out.csv("train_loss.csv", loss_csv(rep));
        let meta = meta_string(&[("kind", "moons".into()), ("heads", model.n_heads.to_string())]);
        out.binary("checkpoint.bin", "checkpoint", checkpoint::encode(&meta, &model.params));
    }
    out.csv("error_curve.csv", curve.to_csv());
    Ok(MoonsRun {
        model,
        report,
        curve,
        transitions,
        output: out,
    })
}

/// Trains a moons model on the training pool and measures its error curve
/// on the evaluation triple.
pub fn moons_train(cfg: &ExperimentConfig) -> CliResult<MoonsRun> {
    let seeds = Seeds::new(cfg.run.seed);
    let (model, report) = train_moons_model(cfg, &seeds)?;
    finish("moons-train", cfg, &seeds, model, Some(report))
}

/// Error curve of a saved model, or of the identity solution when
/// `moons.checkpoint = identity` (head count from `moons.heads`).
pub fn moons_eval(cfg: &ExperimentConfig) -> CliResult<MoonsRun> {
    let seeds = Seeds::new(cfg.run.seed);
    let path = cfg.moons.checkpoint.as_str();
    let model = if path == "identity" {
        MoonsModel::identity(cfg.moons.heads)?
    } else {
        let ck = read_checkpoint(path)?;
        if meta_get(&ck.meta, "kind") != Some("moons") {
            return Err(CliError::config(format!("checkpoint {path} is not a moons model")));
        }
        let heads: usize = meta_get(&ck.meta, "heads")
            .and_then(|h| h.parse().ok())
            .ok_or_else(|| CliError::config(format!("checkpoint {path} does not record a head count")))?;
        let mut model = MoonsModel::identity(heads)?;
        load_into(&mut model.params, &ck.params, path)?;
        model
    };
    finish("moons-eval", cfg, &seeds, model, None)
}
