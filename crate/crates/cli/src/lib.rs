//! Experiment runner: configs, manifests and one driver per subcommand.

pub mod config;
pub mod error;
pub mod experiments;
pub mod manifest;

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use config::{ExperimentConfig, Kind};
use error::{CliError, CliResult};
use experiments::RunOutput;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Command {
    Gradcheck,
    MoonsTrain,
    MoonsEval,
    Induction,
    IclTrain,
    IclEval,
    Sweep,
    AttnProfile,
    Compare { a: PathBuf, b: PathBuf },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Gradcheck => "gradcheck",
            Command::MoonsTrain => "moons-train",
            Command::MoonsEval => "moons-eval",
            Command::Induction => "induction",
            Command::IclTrain => "icl-train",
            Command::IclEval => "icl-eval",
            Command::Sweep => "sweep",
            Command::AttnProfile => "attn-profile",
            Command::Compare { .. } => "compare",
        }
    }

    /// Experiment kind a config must declare (if it declares one) to be
    /// run by this subcommand.
    pub fn kind(&self) -> Option<Kind> {
        match self {
            Command::Gradcheck => Some(Kind::Gradcheck),
            Command::MoonsTrain | Command::MoonsEval => Some(Kind::Moons),
            Command::Induction => Some(Kind::Induction),
            Command::IclTrain | Command::IclEval | Command::Sweep => Some(Kind::Icl),
            Command::AttnProfile => Some(Kind::AttnProfile),
            Command::Compare { .. } => None,
        }
    }
}

impl FromStr for Command {
    type Err = CliError;

    /// Subcommands without arguments; `compare` needs its two paths.
    fn from_str(s: &str) -> CliResult<Command> {
        Ok(match s {
            "gradcheck" => Command::Gradcheck,
            "moons-train" => Command::MoonsTrain,
            "moons-eval" => Command::MoonsEval,
            "induction" => Command::Induction,
            "icl-train" => Command::IclTrain,
            "icl-eval" => Command::IclEval,
            "sweep" => Command::Sweep,
            "attn-profile" => Command::AttnProfile,
            other => return Err(CliError::config(format!("unknown subcommand {other:?}"))),
        })
    }
}

/// A finished run: files to write and a short report for stdout.
#[derive(Debug)]
pub struct Outcome {
    pub output: RunOutput,
    pub report: String,
}

fn metrics_report(out: &RunOutput) -> String {
    let mut s = String::new();
    for (k, v) in &out.manifest.metrics {
        let _ = writeln!(s, "{k} = {}", mosaic_core::record::fmt_f64(*v));
    }
    s
}

/// Runs `command` under `cfg`. Nothing touches the disk except reading
/// checkpoints and compared manifests.
pub fn run(command: &Command, cfg: &ExperimentConfig) -> CliResult<Outcome> {
    if let (Some(want), Some(have)) = (command.kind(), cfg.run.kind) {
        if want != have {
            return Err(CliError::config(format!(
                "config declares run.kind = {have} but {} runs {want}",
                command.name()
            )));
        }
    }
    use experiments::*;
    let output = match command {
        Command::Gradcheck => gradcheck::gradcheck(cfg)?.output,
        Command::MoonsTrain => moons::moons_train(cfg)?.output,
        Command::MoonsEval => moons::moons_eval(cfg)?.output,
        Command::Induction => induction::induction(cfg)?.output,
        Command::IclTrain => icl::icl_train(cfg)?.output,
        Command::IclEval => icl::icl_eval_run(cfg)?.output,
        Command::Sweep => sweep::sweep(cfg)?.output,
        Command::AttnProfile => profile::attn_profile(cfg)?.output,
        Command::Compare { a, b } => {
            let c = compare::compare(cfg, a, b)?;
            let report = c.table();
            return Ok(Outcome {
                output: c.output,
                report,
            });
        }
    };
    let report = metrics_report(&output);
    Ok(Outcome { output, report })
}
