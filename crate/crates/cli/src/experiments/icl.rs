use std::fmt::Write as _;

use mosaic_core::datasets::{gen_pfa_pool, sample_icl_sequence_with, IclSequence, PfaSpec, PfaSplit};
use mosaic_core::evaluation::{icl_eval, IclScore};
use mosaic_core::networks::{build_lm, checkpoint, count_parameters, Family, SequenceModel};
use mosaic_core::numerics::Var;
use mosaic_core::record::fmt_f64;
use mosaic_core::rng;
use mosaic_core::training::{train, TrainConfig, TrainReport};
use rand::Rng as _;

use super::{load_into, loss_csv, meta_get, meta_string, read_checkpoint, RunOutput, Seeds};
use crate::config::{ExperimentConfig, Kind, TrainKnobs};
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;

pub const SCORES_SCHEMA: &str = "split,accuracy,tvd,items";

/// Sequences tagged with the index of their automaton.
pub type Items = Vec<(usize, IclSequence)>;

/// Automata and sequences of one ICL benchmark instance.
pub struct IclData {
    pub train_pfas: Vec<PfaSpec>,
    /// Held-out automata: validation first, then test.
    pub heldout_pfas: Vec<PfaSpec>,
    pub train: Items,
    /// Indices into `heldout_pfas`.
    pub validation: Items,
    pub test: Items,
    /// Fresh sequences from the training automata.
    pub iid: Items,
}

impl IclData {
    pub fn heldout<'a>(&'a self, items: &'a Items) -> Vec<(&'a PfaSpec, &'a IclSequence)> {
        items.iter().map(|(j, s)| (&self.heldout_pfas[*j], s)).collect()
    }

    pub fn in_distribution(&self) -> Vec<(&PfaSpec, &IclSequence)> {
        self.iid.iter().map(|(j, s)| (&self.train_pfas[*j], s)).collect()
    }
}

pub fn icl_data(cfg: &ExperimentConfig, seed: u64) -> CliResult<IclData> {
    let c = &cfg.icl;
    let pc = cfg.pfa_config();
    let ic = cfg.icl_config();
    let train_pfas = gen_pfa_pool(seed, PfaSplit::Train, c.train_pfas, &pc)?;
    let heldout_pfas = gen_pfa_pool(seed, PfaSplit::Test, c.val_sequences + c.test_sequences, &pc)?;
    if let Some(p) = heldout_pfas.iter().position(|p| train_pfas.contains(p)) {
        return Err(CliError::contract(format!(
            "held-out automaton {p} also appears in the training pool"
        )));
    }
    let sample = |pfa: &PfaSpec, label: String| -> CliResult<IclSequence> {
        Ok(sample_icl_sequence_with(pfa, &mut rng::stream(seed, &label), &ic)?)
    };
    let n = train_pfas.len();
    let train = (0..c.train_sequences)
        .map(|i| Ok((i % n, sample(&train_pfas[i % n], format!("icl-train-{i}"))?)))
        .collect::<CliResult<_>>()?;
    let iid = (0..c.iid_sequences)
        .map(|i| Ok((i % n, sample(&train_pfas[i % n], format!("icl-iid-{i}"))?)))
        .collect::<CliResult<_>>()?;
    let validation = (0..c.val_sequences)
        .map(|i| Ok((i, sample(&heldout_pfas[i], format!("icl-validation-{i}"))?)))
        .collect::<CliResult<_>>()?;
    let test = (0..c.test_sequences)
        .map(|i| {
            let j = c.val_sequences + i;
            Ok((j, sample(&heldout_pfas[j], format!("icl-test-{i}"))?))
        })
        .collect::<CliResult<_>>()?;
    Ok(IclData {
        train_pfas,
        heldout_pfas,
        train,
        validation,
        test,
        iid,
    })
}

pub fn describe_data(m: &mut RunManifest, cfg: &ExperimentConfig, data: &IclData) {
    let c = &cfg.icl;
    m.pool(
        "icl_automata",
        format!(
            "{} training and {} held-out automata; states {}-{}, alphabet {}, edges {}-{}",
            data.train_pfas.len(),
            data.heldout_pfas.len(),
            c.states.0,
            c.states.1,
            c.alphabet,
            c.edges.0,
            c.edges.1
        ),
    );
    m.pool(
        "icl_sequences",
        format!(
            "{} train, {} validation, {} test, {} iid; {}-{} strings of length {}-{}",
            data.train.len(),
            data.validation.len(),
            data.test.len(),
            data.iid.len(),
            c.strings.0,
            c.strings.1,
            c.string_len.0,
            c.string_len.1
        ),
    );
}

/// Scores of one model on the three evaluation sets.
#[derive(Clone, Debug, PartialEq)]
pub struct IclScores {
    pub validation: IclScore,
    pub test: IclScore,
    pub iid: IclScore,
}

impl IclScores {
    pub fn compute(model: &SequenceModel, data: &IclData) -> CliResult<IclScores> {
        Ok(IclScores {
            validation: icl_eval(model, &data.heldout(&data.validation))?,
            test: icl_eval(model, &data.heldout(&data.test))?,
            iid: icl_eval(model, &data.in_distribution())?,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{SCORES_SCHEMA}\n");
        for (name, sc) in [
            ("validation", &self.validation),
            ("test", &self.test),
            ("iid", &self.iid),
        ] {
            let _ = writeln!(s, "{name},{},{},{}", fmt_f64(sc.accuracy), fmt_f64(sc.tvd), sc.items);
        }
        s
    }

    pub fn record(&self, m: &mut RunManifest, prefix: &str) {
        for (name, sc) in [
            ("validation", &self.validation),
            ("test", &self.test),
            ("iid", &self.iid),
        ] {
            m.metric(format!("{prefix}{name}_accuracy"), sc.accuracy);
            m.metric(format!("{prefix}{name}_tvd"), sc.tvd);
        }
    }
}

/// Model shape for the ICL task.
pub fn icl_model(cfg: &ExperimentConfig, family: Family) -> CliResult<SequenceModel> {
    let lm = cfg.lm_config(cfg.icl.alphabet + 1, cfg.icl_config().max_tokens());
    Ok(build_lm(family, &lm, Seeds::new(cfg.run.seed).init)?)
}

/// Next-token training on every position of the training sequences.
pub fn train_icl_model(
    model: &mut SequenceModel,
    cfg: &ExperimentConfig,
    knobs: &TrainKnobs,
    data: &IclData,
    seeds: &Seeds,
) -> CliResult<TrainReport> {
    let tc = TrainConfig {
        iterations: knobs.iterations,
        schedule: knobs.schedule(),
        adam: cfg.optim.clone(),
        eval_every: 0,
    };
    let dropout = model.config.dropout > 0.0;
    let validation = data.heldout(&data.validation);
    Ok(train(
        model,
        &tc,
        |m, tape, vars, i| {
            let mut r = rng::stream(seeds.batches, &format!("batch-{i}"));
            let mut total: Option<Var> = None;
            for _ in 0..knobs.batch {
                let s = &data.train[r.random_range(0..data.train.len())].1;
                let n = s.tokens.len();
                let targets: Vec<Option<usize>> = s.tokens[1..].iter().map(|&t| Some(t)).collect();
                let trace = m.forward(tape, vars, &s.tokens[..n - 1], dropout.then_some(&mut r))?;
                let l = tape.cross_entropy(trace.logits, &targets)?;
                total = Some(match total {
                    Some(t) => tape.add(t, l),
                    None => l,
                });
            }
            Ok(tape.scale(total.expect("batch >= 1"), 1.0 / knobs.batch as f64))
        },
        |m| Ok(icl_eval(m, &validation)?.accuracy),
    )?)
}

pub struct IclRun {
    pub model: SequenceModel,
    pub report: Option<TrainReport>,
    pub scores: IclScores,
    pub output: RunOutput,
}

fn model_meta(model: &SequenceModel) -> String {
    meta_string(&[("kind", "icl".into()), ("family", model.family.name().into())])
}

/// Trains `run.family` on the ICL training sequences and scores it on
/// held-out and training automata.
pub fn icl_train(cfg: &ExperimentConfig) -> CliResult<IclRun> {
    let seeds = Seeds::new(cfg.run.seed);
    let data = icl_data(cfg, seeds.data)?;
    let mut model = icl_model(cfg, cfg.run.family)?;
    let report = train_icl_model(&mut model, cfg, &cfg.icl.train, &data, &seeds)?;
    let scores = IclScores::compute(&model, &data)?;

    let mut m = RunManifest::new("icl-train", Some(Kind::Icl), cfg);
    seeds.record(&mut m);
    describe_data(&mut m, cfg, &data);
    m.metric("params", count_parameters(&model) as f64);
    if let Some(l) = report.final_loss() {
        m.metric("final_loss", l);
    }
    scores.record(&mut m, "");
    m.timing("train_secs", report.wall_clock_secs);
    let mut out = RunOutput::new(m);
    out.csv("train_loss.csv", loss_csv(&report));
    out.csv("icl_scores.csv", scores.to_csv());
    out.binary(
        "checkpoint.bin",
        "checkpoint",
        checkpoint::encode(&model_meta(&model), &model.params),
    );
    Ok(IclRun {
        model,
        report: Some(report),
        scores,
        output: out,
    })
}

/// Scores a saved ICL model (`icl.checkpoint`) built with the configured
/// architecture.
pub fn icl_eval_run(cfg: &ExperimentConfig) -> CliResult<IclRun> {
    let seeds = Seeds::new(cfg.run.seed);
    let path = cfg.icl.checkpoint.as_str();
    let ck = read_checkpoint(path)?;
    if meta_get(&ck.meta, "kind") != Some("icl") {
        return Err(CliError::config(format!("checkpoint {path} is not an ICL model")));
    }
    let family: Family = meta_get(&ck.meta, "family")
        .ok_or_else(|| CliError::config(format!("checkpoint {path} does not record a family")))?
        .parse()?;
    let data = icl_data(cfg, seeds.data)?;
    let mut model = icl_model(cfg, family)?;
    load_into(&mut model.params, &ck.params, path)?;
    let scores = IclScores::compute(&model, &data)?;

    let mut m = RunManifest::new("icl-eval", Some(Kind::Icl), cfg);
    seeds.record(&mut m);
    describe_data(&mut m, cfg, &data);
    m.metric("params", count_parameters(&model) as f64);
    scores.record(&mut m, "");
    let mut out = RunOutput::new(m);
    out.csv("icl_scores.csv", scores.to_csv());
    Ok(IclRun {
        model,
        report: None,
        scores,
        output: out,
    })
}
