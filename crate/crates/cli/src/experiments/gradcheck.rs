use std::fmt::Write as _;

use mosaic_core::datasets::{gen_moon_sequence_len, MoonPool, Split};
use mosaic_core::networks::{build_lm, build_moons_model_scaled, complex_rows, Family, LmConfig, SlotSizing};
use mosaic_core::numerics::GradCheck;
use mosaic_core::record::fmt_f64;
use mosaic_core::rng;
use mosaic_core::training::{check_model_gradient, moons_sequence_loss};
use rand::seq::index::sample;
use rand::Rng as _;

use super::{RunOutput, Seeds};
use crate::config::{ExperimentConfig, Kind};
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;

pub const GRADCHECK_SCHEMA: &str = "model,parameters,coordinates,max_rel_error,worst_coordinate";

/// Init scale of the checked moons models, larger than the training init.
/// Their loss is checked unclipped.
const MOONS_CHECK_SCALE: f64 = 0.2;
const CHECK_VOCAB: usize = 11;
const CHECK_SLOTS: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheck {
    pub name: String,
    pub parameters: usize,
    pub result: GradCheck,
}

pub struct GradcheckRun {
    pub checks: Vec<ModelCheck>,
    pub output: RunOutput,
}

fn coords(seed: u64, name: &str, n: usize, k: usize) -> Vec<usize> {
    let mut v = sample(&mut rng::stream(seed, &format!("coords-{name}")), n, k.min(n)).into_vec();
    v.sort_unstable();
    v
}

/// Compares analytic and central-difference gradients for every model
/// family on randomly chosen parameter coordinates.
pub fn gradcheck(cfg: &ExperimentConfig) -> CliResult<GradcheckRun> {
    let g = &cfg.gradcheck;
    let seeds = Seeds::new(cfg.run.seed);
    let mut checks = Vec::new();

    let pool = MoonPool::standard(Split::Train);
    let sys = pool.draw(&mut rng::stream(seeds.data, "gradcheck-moons"))?;
    let x = complex_rows(&gen_moon_sequence_len(&sys, g.moons_len).observations)?;
    for heads in [1, 3] {
        let name = format!("moons-{heads}head");
        let m = build_moons_model_scaled(heads, seeds.init, MOONS_CHECK_SCALE)?;
        let n = m.params.count();
        let result = check_model_gradient(
            &m,
            |m, tape, vars| moons_sequence_loss(tape, m, vars, &x, f64::MAX),
            &coords(seeds.eval, &name, n, g.coords),
            g.step,
        )?;
        checks.push(ModelCheck {
            name,
            parameters: n,
            result,
        });
    }

    let mut r = rng::stream(seeds.data, "gradcheck-tokens");
    let tokens: Vec<usize> = (0..g.seq_len).map(|_| r.random_range(0..CHECK_VOCAB)).collect();
    let targets: Vec<Option<usize>> = tokens[1..].iter().map(|&t| Some(t)).chain([None]).collect();
    for family in [Family::Mosaic, Family::Transformer] {
        for blocks in [1, 2] {
            let name = format!("{}-{blocks}block", family.name());
            let lm = LmConfig {
                vocab: CHECK_VOCAB,
                d_model: g.d_model,
                n_blocks: blocks,
                n_heads: 2,
                max_len: g.seq_len,
                slots: SlotSizing::Fixed(CHECK_SLOTS),
                persistent_leaky: blocks == 2,
                ..LmConfig::default()
            };
            let m = build_lm(family, &lm, seeds.init)?;
            let n = m.params.count();
            let result = check_model_gradient(
                &m,
                |m, tape, vars| {
                    let tr = m.forward(tape, vars, &tokens, None)?;
                    tape.cross_entropy(tr.logits, &targets)
                },
                &coords(seeds.eval, &name, n, g.coords),
                g.step,
            )?;
            checks.push(ModelCheck {
                name,
                parameters: n,
                result,
            });
        }
    }

    let mut m = RunManifest::new("gradcheck", Some(Kind::Gradcheck), cfg);
    seeds.record(&mut m);
    let mut table = format!("{GRADCHECK_SCHEMA}\n");
    let mut worst: f64 = 0.0;
    for c in &checks {
        let e = c.result.max_rel_error;
        worst = worst.max(e);
        m.metric(format!("max_rel_error.{}", c.name), e);
        let _ = writeln!(
            table,
            "{},{},{},{},{}",
            c.name,
            c.parameters,
            c.result.coordinates_checked,
            fmt_f64(e),
            c.result.worst_coordinate
        );
    }
    m.metric("max_rel_error", worst);
    let mut out = RunOutput::new(m);
    out.csv("gradcheck.csv", table);
    let failed: Vec<&str> = checks
        .iter()
        .filter(|c| !c.result.passes(g.tol))
        .map(|c| c.name.as_str())
        .collect();
    if !failed.is_empty() {
        out.failure = Some(CliError::contract(format!(
            "gradient check above {} for {}",
            g.tol,
            failed.join(", ")
        )));
    }
    Ok(GradcheckRun { checks, output: out })
}
