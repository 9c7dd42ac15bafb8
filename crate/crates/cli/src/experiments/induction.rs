use std::fmt::Write as _;

use mosaic_core::datasets::{gen_induction_set, InductionSample};
use mosaic_core::evaluation::induction_eval;
use mosaic_core::networks::{build_lm, checkpoint, count_parameters, Family, Parameters, SequenceModel};
use mosaic_core::numerics::Var;
use mosaic_core::record::fmt_f64;
use mosaic_core::rng;
use mosaic_core::training::{train, TrainConfig, TrainReport};
use rand::Rng as _;

use super::{loss_csv, meta_string, RunOutput, Seeds};
use crate::config::{ExperimentConfig, Kind};
use crate::error::CliResult;
use crate::manifest::RunManifest;

pub const INDUCTION_SCHEMA: &str = "family,blocks,params,final_loss,validation_accuracy,test_accuracy";

/// Held-out samples scored at the end of training.
const VALIDATION_SAMPLES: usize = 200;

pub struct InductionData {
    pub train: Vec<InductionSample>,
    pub validation: Vec<InductionSample>,
    pub test: Vec<InductionSample>,
}

pub fn induction_data(cfg: &ExperimentConfig, seed: u64) -> CliResult<InductionData> {
    let ic = cfg.induction_config();
    Ok(InductionData {
        train: gen_induction_set(seed, "induction-train", &ic, cfg.induction.train_samples)?,
        validation: gen_induction_set(seed, "induction-validation", &ic, VALIDATION_SAMPLES)?,
        test: gen_induction_set(seed, "induction-test", &ic, cfg.induction.test_samples)?,
    })
}

/// One trained depth.
pub struct DepthResult {
    pub blocks: usize,
    pub model: SequenceModel,
    pub report: TrainReport,
    pub test_accuracy: f64,
}

/// Trains a `family` model with `blocks` blocks on the training samples,
/// with the loss on query positions only.
pub fn train_depth(
    cfg: &ExperimentConfig,
    family: Family,
    blocks: usize,
    data: &InductionData,
    seeds: &Seeds,
) -> CliResult<DepthResult> {
    let mut lm = cfg.lm_config(cfg.induction.vocab, cfg.induction.len);
    lm.n_blocks = blocks;
    let mut model = build_lm(family, &lm, seeds.init)?;
    let knobs = &cfg.induction.train;
    let tc = TrainConfig {
        iterations: knobs.iterations,
        schedule: knobs.schedule(),
        adam: cfg.optim.clone(),
        eval_every: 0,
    };
    let dropout = lm.dropout > 0.0;
    let report = train(
        &mut model,
        &tc,
        |m, tape, vars, i| {
            let mut r = rng::stream(seeds.batches, &format!("batch-{i}"));
            let mut total: Option<Var> = None;
            for _ in 0..knobs.batch {
                let s = &data.train[r.random_range(0..data.train.len())];
                let trace = m.forward(tape, vars, &s.tokens, dropout.then_some(&mut r))?;
                let l = tape.cross_entropy(trace.logits, &s.targets())?;
                total = Some(match total {
                    Some(t) => tape.add(t, l),
                    None => l,
                });
            }
            Ok(tape.scale(total.expect("batch >= 1"), 1.0 / knobs.batch as f64))
        },
        |m| induction_eval(m, &data.validation),
    )?;
    let test_accuracy = induction_eval(&model, &data.test)?;
    Ok(DepthResult {
        blocks,
        model,
        report,
        test_accuracy,
    })
}

pub struct InductionRun {
    pub depths: Vec<DepthResult>,
    pub output: RunOutput,
}

/// Trains `run.family` at every depth in `induction.depths` and reports
/// query accuracy per depth.
pub fn induction(cfg: &ExperimentConfig) -> CliResult<InductionRun> {
    let seeds = Seeds::new(cfg.run.seed);
    let family = cfg.run.family;
    let data = induction_data(cfg, seeds.data)?;
    let mut depths = Vec::new();
    for &b in &cfg.induction.depths {
        depths.push(train_depth(cfg, family, b, &data, &seeds)?);
    }

    let mut m = RunManifest::new("induction", Some(Kind::Induction), cfg);
    seeds.record(&mut m);
    m.pool(
        "induction",
        format!(
            "vocab {} length {} triggers {}; {} train, {} validation, {} test samples",
            cfg.induction.vocab,
            cfg.induction.len,
            cfg.induction.triggers,
            data.train.len(),
            data.validation.len(),
            data.test.len()
        ),
    );
    let mut table = format!("{INDUCTION_SCHEMA}\n");
    let mut losses = String::from("blocks,iteration,loss\n");
    let mut params = Parameters::new();
    for d in &depths {
        let b = d.blocks;
        let final_loss = d.report.final_loss().unwrap_or(f64::NAN);
        let val = d.report.final_validation().unwrap_or(f64::NAN);
        m.metric(format!("accuracy.blocks{b}"), d.test_accuracy);
        m.metric(format!("validation_accuracy.blocks{b}"), val);
        m.metric(format!("final_loss.blocks{b}"), final_loss);
        m.metric(format!("params.blocks{b}"), count_parameters(&d.model) as f64);
        m.timing(&format!("train_secs.blocks{b}"), d.report.wall_clock_secs);
        let _ = writeln!(
            table,
            "{},{b},{},{},{},{}",
            family.name(),
            count_parameters(&d.model),
            fmt_f64(final_loss),
            fmt_f64(val),
            fmt_f64(d.test_accuracy)
        );
        for line in loss_csv(&d.report).lines().skip(1) {
            let _ = writeln!(losses, "{b},{line}");
        }
        for p in d.model.params.iter() {
            params.push(format!("blocks{b}.{}", p.path), p.value.clone(), p.decay);
        }
    }
    let mut out = RunOutput::new(m);
    out.csv("induction.csv", table);
    out.csv("train_loss.csv", losses);
    let depth_list: Vec<String> = depths.iter().map(|d| d.blocks.to_string()).collect();
    let meta = meta_string(&[
        ("kind", "induction".into()),
        ("family", family.name().into()),
        ("depths", depth_list.join(",")),
    ]);
    out.binary("checkpoint.bin", "checkpoint", checkpoint::encode(&meta, &params));
    Ok(InductionRun { depths, output: out })
}
