use std::fmt::Write as _;
use std::ops::RangeInclusive;

use num_complex::Complex64;

use crate::datasets::MoonSequence;
use crate::error::{ensure, Result};
use crate::networks::MoonsModel;
use crate::numerics::ComplexVector;
use crate::record::fmt_f64;

/// Steps predicted ahead when scoring a context length.
pub const HORIZON: usize = 25;

type Obs = [Complex64; 3];

fn obs(x: &ComplexVector) -> Obs {
    [x.get(0), x.get(1), x.get(2)]
}

/// Something that forecasts moons observations from a context.
pub trait MoonForecaster {
    /// For each context length `T` in `contexts`, the forecasts of
    /// `x_{T+1}..x_{T+horizon}` given `x_1..x_T` of `seq`.
    fn forecasts(&self, seq: &MoonSequence, contexts: &RangeInclusive<usize>, horizon: usize) -> Result<Vec<Vec<Obs>>>;
}

/// Autoregressive forecast from a model: each prediction is fed back as
/// the next observation. Runs in one pass over the sequence by rewinding
/// the model's memories after every rollout.
impl MoonForecaster for MoonsModel {
    fn forecasts(&self, seq: &MoonSequence, contexts: &RangeInclusive<usize>, horizon: usize) -> Result<Vec<Vec<Obs>>> {
        let mut stream = self.stream();
        let mut out = Vec::new();
        for t in 1..=*contexts.end() {
            let z = stream.step(&obs(&seq.observations[t - 1]))?;
            if !contexts.contains(&t) {
                continue;
            }
            let mark = stream.mark();
            let mut preds = vec![z];
            while preds.len() < horizon {
                let next = stream.step(preds.last().unwrap())?;
                preds.push(next);
            }
            stream.rewind(&mark);
            out.push(preds);
        }
        Ok(out)
    }
}

/// Forecasts the last observed value for every future step.
#[derive(Clone, Copy, Debug, Default)]
pub struct RepeatLast;

impl MoonForecaster for RepeatLast {
    fn forecasts(&self, seq: &MoonSequence, contexts: &RangeInclusive<usize>, horizon: usize) -> Result<Vec<Vec<Obs>>> {
        Ok(contexts
            .clone()
            .map(|t| vec![obs(&seq.observations[t - 1]); horizon])
            .collect())
    }
}

/// Forecasts the true continuation.
#[derive(Clone, Copy, Debug, Default)]
pub struct PeriodicOracle;

impl MoonForecaster for PeriodicOracle {
    fn forecasts(&self, seq: &MoonSequence, contexts: &RangeInclusive<usize>, horizon: usize) -> Result<Vec<Vec<Obs>>> {
        Ok(contexts
            .clone()
            .map(|t| (1..=horizon).map(|h| obs(&seq.observations[t + h - 1])).collect())
            .collect())
    }
}

/// Autoregressive forecast of `horizon` steps after `context`.
pub fn rollout(model: &MoonsModel, context: &[ComplexVector], horizon: usize) -> Result<Vec<ComplexVector>> {
    ensure!(horizon >= 1, "horizon must be >= 1");
    ensure!(!context.is_empty(), "empty context");
    ensure!(context.iter().all(|x| x.len() == 3), "moons observations are 3-dim");
    let mut stream = model.stream();
    let mut z = [Complex64::new(0.0, 0.0); 3];
    for x in context {
        z = stream.step(&obs(x))?;
    }
    let mut out = vec![z];
    while out.len() < horizon {
        z = stream.step(&z)?;
        out.push(z);
    }
    Ok(out.iter().map(|o| ComplexVector::from_values(o)).collect())
}

/// Mean forecast error per context length.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorCurve {
    /// `(T, error)` in increasing `T`.
    pub points: Vec<(usize, f64)>,
    pub periods: [u64; 3],
    pub lcm: u64,
}

impl ErrorCurve {
    pub fn at(&self, t: usize) -> Option<f64> {
        self.points.iter().find(|p| p.0 == t).map(|p| p.1)
    }

    /// Mean error over context lengths in `(lo, hi]`.
    pub fn window_mean(&self, lo: usize, hi: usize) -> Option<f64> {
        let vals: Vec<f64> = self
            .points
            .iter()
            .filter(|p| p.0 > lo && p.0 <= hi)
            .map(|p| p.1)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// `context_length,mean_error` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("context_length,mean_error\n");
        for (t, e) in &self.points {
            let _ = writeln!(s, "{t},{}", fmt_f64(*e));
        }
        s
    }
}

/// Error curve over `contexts` averaged across `sequences`, which must
/// share one period triple.
///
/// The error at `T` is the mean over the `horizon` forecast steps of
/// `sum_k |xhat_{T+h,k} - x_{T+h,k}|`.
pub fn moons_error_curve<F: MoonForecaster + ?Sized>(
    forecaster: &F,
    sequences: &[MoonSequence],
    contexts: RangeInclusive<usize>,
    horizon: usize,
) -> Result<ErrorCurve> {
    ensure!(!sequences.is_empty(), "no sequences");
    ensure!(horizon >= 1, "horizon must be >= 1");
    ensure!(
        *contexts.start() >= 1 && !contexts.is_empty(),
        "context lengths start at 1"
    );
    let periods = sequences[0].system.periods;
    ensure!(
        sequences.iter().all(|s| s.system.periods == periods),
        "sequences must share one period triple"
    );
    let len = sequences.iter().map(|s| s.observations.len()).min().unwrap();
    ensure!(
        contexts.end() + horizon <= len,
        "context {} plus horizon {horizon} exceeds sequence length {len}",
        contexts.end()
    );
    let n_t = contexts.clone().count();
    let mut sums = vec![0.0; n_t];
    for seq in sequences {
        let fc = forecaster.forecasts(seq, &contexts, horizon)?;
        ensure!(
            fc.len() == n_t,
            "forecaster returned {} contexts, expected {n_t}",
            fc.len()
        );
        for (i, (t, preds)) in contexts.clone().zip(&fc).enumerate() {
            let mut e = 0.0;
            for (h, p) in preds.iter().enumerate() {
                let truth = &seq.observations[t + h];
                e += (0..3).map(|k| (p[k] - truth.get(k)).norm()).sum::<f64>();
            }
            sums[i] += e / horizon as f64;
        }
    }
    let n = sequences.len() as f64;
    Ok(ErrorCurve {
        points: contexts.zip(sums).map(|(t, s)| (t, s / n)).collect(),
        periods,
        lcm: crate::datasets::lcm(&periods),
    })
}
