use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mosaic_cli::config::ExperimentConfig;
use mosaic_cli::error::{CliError, CliResult};
use mosaic_cli::{run, Command};

#[derive(Parser)]
#[command(name = "mosaic", version, about = "Memory mosaic experiments")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Args, Clone)]
struct Common {
    /// Config file or a previous run's manifest.txt.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed; overrides run.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: runs/<subcommand>].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Config override, `section.key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Sub {
    /// Check analytic gradients against finite differences.
    Gradcheck(Common),
    /// Train a moons forecaster and measure its error curve.
    MoonsTrain(Common),
    /// Error curve of a saved or identity moons forecaster.
    MoonsEval(Common),
    /// Induction-head accuracy at each configured depth.
    Induction(Common),
    /// Train a language model on automaton sequences.
    IclTrain(Common),
    /// Score a saved language model on held-out automata.
    IclEval(Common),
    /// Grid search both families at matched parameter counts.
    Sweep(Common),
    /// Attention weight by relative position.
    AttnProfile(Common),
    /// Metric deltas between two runs (manifests or run directories).
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn execute(sub: Sub) -> CliResult<Option<CliError>> {
    let (command, common) = match sub {
        Sub::Gradcheck(c) => (Command::Gradcheck, c),
        Sub::MoonsTrain(c) => (Command::MoonsTrain, c),
        Sub::MoonsEval(c) => (Command::MoonsEval, c),
        Sub::Induction(c) => (Command::Induction, c),
        Sub::IclTrain(c) => (Command::IclTrain, c),
        Sub::IclEval(c) => (Command::IclEval, c),
        Sub::Sweep(c) => (Command::Sweep, c),
        Sub::AttnProfile(c) => (Command::AttnProfile, c),
        Sub::Compare { a, b, common } => (Command::Compare { a, b }, common),
    };
    let text = match &common.config {
        Some(p) => Some(
            std::fs::read_to_string(p).map_err(|e| CliError::config(format!("cannot read {}: {e}", p.display())))?,
        ),
        None => None,
    };
    let mut sets = common.sets.clone();
    if let Some(s) = common.seed {
        sets.push(format!("run.seed={s}"));
    }
    let cfg = ExperimentConfig::load(text.as_deref(), &sets)?;
    let out_dir = common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(command.name()));
    let outcome = run(&command, &cfg)?;
    outcome.output.write(&out_dir)?;
    print!("{}", outcome.report);
    println!("wrote {}", out_dir.display());
    Ok(outcome.output.failure)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let err = match execute(cli.command) {
        Ok(None) => return ExitCode::SUCCESS,
        Ok(Some(e)) | Err(e) => e,
    };
    eprintln!("error: {err}");
    ExitCode::from(err.exit_code() as u8)
}
