use std::time::Instant;

use super::optim::{adamw_step, AdamConfig, OptimizerState};
use super::schedule::{lr_at, ScheduleSpec};
use crate::error::{Error, Result};
use crate::networks::{Parameters, Trainable};
use crate::numerics::{grad_check_coords, GradCheck, Tape, Var};
use crate::record::{fmt_f64, parse_list, Record};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub schedule: ScheduleSpec,
    pub adam: AdamConfig,
    /// Validate every this many iterations (and after the last); 0 only
    /// validates at the end.
    pub eval_every: usize,
}

/// Outcome of a training run.
///
/// Serialized as a record with a `[report]` section:
/// `iterations`, `final_loss`, `losses` (space-separated),
/// `validation` (`iteration:loss` pairs) and `wall_clock_secs`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    pub validation: Vec<(usize, f64)>,
    pub wall_clock_secs: f64,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }

    pub fn final_validation(&self) -> Option<f64> {
        self.validation.last().map(|v| v.1)
    }

    pub fn write_to(&self, r: &mut Record, section: &str) {
        r.set(section, "iterations", self.losses.len());
        if let Some(l) = self.final_loss() {
            r.set(section, "final_loss", fmt_f64(l));
        }
        let losses: Vec<String> = self.losses.iter().map(|&l| fmt_f64(l)).collect();
        r.set(section, "losses", losses.join(" "));
        let val: Vec<String> = self
            .validation
            .iter()
            .map(|(i, l)| format!("{i}:{}", fmt_f64(*l)))
            .collect();
        r.set(section, "validation", val.join(" "));
        r.set(section, "wall_clock_secs", fmt_f64(self.wall_clock_secs));
    }

    pub fn to_record(&self) -> Record {
        let mut r = Record::new();
        self.write_to(&mut r, "report");
        r
    }

    pub fn from_record(r: &Record, section: &str) -> Result<TrainReport> {
        let raw = |k: &str| {
            r.get(section, k)
                .ok_or_else(|| Error::parse(format!("report is missing {k}")))
        };
        let losses: Vec<f64> = parse_list(raw("losses")?)?;
        let mut validation = Vec::new();
        for item in raw("validation")?.split_whitespace() {
            let (i, l) = item
                .split_once(':')
                .ok_or_else(|| Error::parse(format!("bad validation entry {item:?}")))?;
            let i = i
                .parse()
                .map_err(|_| Error::parse(format!("bad validation entry {item:?}")))?;
            let l = l
                .parse()
                .map_err(|_| Error::parse(format!("bad validation entry {item:?}")))?;
            validation.push((i, l));
        }
        let iterations: usize = r.parse_value(section, "iterations")?;
        if iterations != losses.len() {
            return Err(Error::parse("iteration count disagrees with the loss list"));
        }
        Ok(TrainReport {
            losses,
            validation,
            wall_clock_secs: r.parse_value(section, "wall_clock_secs")?,
        })
    }
}

/// Gradient-descent training with AdamW on a scheduled learning rate.
///
/// `loss` records the objective for iteration `i` on a fresh tape whose
/// first variables are the model parameters; batches are chosen by the
/// caller from `i`, which keeps runs deterministic. `validate` is called
/// on the current model. A non-finite loss or gradient stops training with
/// [`Error::Divergence`]; the model then holds the last finite parameters.
pub fn train<M, L, V>(model: &mut M, cfg: &TrainConfig, mut loss: L, mut validate: V) -> Result<TrainReport>
where
    M: Trainable,
    L: FnMut(&M, &mut Tape, &[Var], usize) -> Result<Var>,
    V: FnMut(&M) -> Result<f64>,
{
    cfg.schedule.validate()?;
    let clock = Instant::now();
    let mut state = OptimizerState::new(model.parameters(), cfg.adam.clone());
    let mut report = TrainReport::default();
    for i in 0..cfg.iterations {
        let mut tape = Tape::new();
        let vars = model.parameters().bind(&mut tape);
        let out = loss(model, &mut tape, &vars, i)?;
        let value = tape.value(out).item();
        if !value.is_finite() {
            return Err(Error::Divergence {
                iteration: i,
                detail: format!("loss became {value}"),
            });
        }
        let grads = tape.backward(out)?;
        let g: Vec<_> = vars.iter().map(|&v| grads.wrt(v)).collect();
        let backup: Parameters = model.parameters().clone();
        adamw_step(model.parameters_mut(), &g, &mut state, lr_at(&cfg.schedule, i + 1)).map_err(|e| match e {
            Error::Divergence { detail, .. } => Error::Divergence { iteration: i, detail },
            other => other,
        })?;
        model.project();
        if model.parameters().iter().any(|p| !p.value.is_finite()) {
            model.parameters_mut().load(&backup)?;
            return Err(Error::Divergence {
                iteration: i,
                detail: "parameters became non-finite".into(),
            });
        }
        report.losses.push(value);
        let last = i + 1 == cfg.iterations;
        if last || (cfg.eval_every > 0 && (i + 1) % cfg.eval_every == 0) {
            report.validation.push((i + 1, validate(model)?));
        }
    }
    if cfg.iterations == 0 {
        report.validation.push((0, validate(model)?));
    }
    report.wall_clock_secs = clock.elapsed().as_secs_f64();
    Ok(report)
}

/// Compares the gradient of `objective` at the model's parameters with
/// central differences on the flat coordinates `coords`.
pub fn check_model_gradient<M, F>(model: &M, mut objective: F, coords: &[usize], step: f64) -> Result<GradCheck>
where
    M: Trainable + Clone,
    F: FnMut(&M, &mut Tape, &[Var]) -> Result<Var>,
{
    let point = model.parameters().flatten();
    let mut probe = model.clone();
    grad_check_coords(
        |x| {
            probe.parameters_mut().set_flat(x)?;
            let mut tape = Tape::new();
            let vars = probe.parameters().bind(&mut tape);
            let out = objective(&probe, &mut tape, &vars)?;
            let grads = tape.backward(out)?;
            let flat = vars.iter().flat_map(|&v| grads.wrt(v).into_data()).collect();
            Ok((tape.value(out).item(), flat))
        },
        &point,
        coords,
        step,
    )
}
