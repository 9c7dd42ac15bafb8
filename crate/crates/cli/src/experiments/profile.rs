use std::fmt::Write as _;

use mosaic_core::datasets::gen_induction_set;
use mosaic_core::evaluation::{attention_profile, bandwidth, unit_attention_profile, AttentionProfile};
use mosaic_core::memory_units::ContextualUnitParams;
use mosaic_core::networks::{build_lm, Family, Parameters, SequenceModel};
use mosaic_core::numerics::Tensor;
use mosaic_core::record::fmt_f64;
use mosaic_core::rng;
use rand::Rng as _;
use rand_distr::StandardNormal;

use super::icl::icl_data;
use super::{load_into, meta_get, read_checkpoint, RunOutput, Seeds};
use crate::config::{ExperimentConfig, Kind};
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;

pub const BANDWIDTH_SCHEMA: &str = "lambda_phi,bandwidth";

fn gaussian(r: &mut rng::Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| scale * r.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::matrix(rows, cols, data).expect("shape matches data")
}

/// `[len, d]` Gaussian AR(1) sequence with lag-one correlation `rho` and
/// unit marginal variance.
pub fn ar1_sequence(r: &mut rng::Rng, len: usize, d: usize, rho: f64) -> Tensor {
    let noise = gaussian(r, len, d, 1.0);
    let innov = (1.0 - rho * rho).sqrt();
    let mut x = Tensor::zeros(&[len, d]);
    x.row_mut(0).copy_from_slice(noise.row(0));
    for t in 1..len {
        let prev = x.row(t - 1).to_vec();
        for (j, v) in x.row_mut(t).iter_mut().enumerate() {
            *v = rho * prev[j] + innov * noise.get2(t, j);
        }
    }
    x
}

/// One contextual unit with seeded Gaussian projections and the
/// configured bandwidth.
pub fn profile_unit(cfg: &ExperimentConfig, seed: u64, lambda_phi: f64) -> ContextualUnitParams {
    let p = &cfg.profile;
    let mut r = rng::stream(seed, "profile-unit");
    let scale = 1.0 / (p.d_in as f64).sqrt();
    ContextualUnitParams {
        w_phi: gaussian(&mut r, p.d_k, p.d_in, scale),
        w_psi: gaussian(&mut r, p.d_k, p.d_in, scale),
        lambda_phi,
        lambda_psi: 1.0,
        beta: p.beta,
    }
}

pub fn profile_inputs(cfg: &ExperimentConfig, seed: u64) -> Vec<Tensor> {
    let p = &cfg.profile;
    let mut r = rng::stream(seed, "profile-inputs");
    (0..p.sequences)
        .map(|_| ar1_sequence(&mut r, p.len, p.d_in, p.rho))
        .collect()
}

pub struct ProfileRun {
    /// `(lambda_phi, profile, bandwidth)` in configured order; a single
    /// entry with `lambda_phi = NaN` for a checkpoint profile.
    pub profiles: Vec<(f64, AttentionProfile, usize)>,
    pub output: RunOutput,
}

impl ProfileRun {
    /// Whether bandwidth never shrinks as `lambda_phi` grows.
    pub fn bandwidth_monotone(&self) -> bool {
        let mut v: Vec<(f64, usize)> = self.profiles.iter().map(|(l, _, b)| (*l, *b)).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v.windows(2).all(|w| w[0].1 <= w[1].1)
    }
}

/// Last-position attention profiles. Without `profile.checkpoint`: one
/// seeded contextual unit on AR(1) inputs, once per `lambda_phi` in
/// `profile.lambdas`, with weights and inputs held fixed. With it: block
/// `profile.layer` of a trained sequence model on its own task's data.
pub fn attn_profile(cfg: &ExperimentConfig) -> CliResult<ProfileRun> {
    let seeds = Seeds::new(cfg.run.seed);
    let mut m = RunManifest::new("attn-profile", Some(Kind::AttnProfile), cfg);
    seeds.record(&mut m);
    if !cfg.profile.checkpoint.is_empty() {
        return checkpoint_profile(cfg, &seeds, m);
    }
    let p = &cfg.profile;
    m.pool(
        "profile_inputs",
        format!(
            "{} AR(1) sequences, length {}, width {}, rho {}",
            p.sequences, p.len, p.d_in, p.rho
        ),
    );
    let inputs = profile_inputs(cfg, seeds.data);
    let mut profiles = Vec::new();
    for &l in &p.lambdas {
        let unit = profile_unit(cfg, seeds.init, l);
        let prof = unit_attention_profile(&unit, &inputs)?;
        let bw = bandwidth(&prof.mean);
        profiles.push((l, prof, bw));
    }
    let mut table = format!("{BANDWIDTH_SCHEMA}\n");
    let mut out_files = Vec::new();
    for (i, (l, prof, bw)) in profiles.iter().enumerate() {
        let _ = writeln!(table, "{},{bw}", fmt_f64(*l));
        m.metric(format!("bandwidth.lambda{i}"), *bw as f64);
        out_files.push((format!("attention_profile_lambda{i}.csv"), prof.to_csv()));
    }
    let mut out = RunOutput::new(m);
    for (name, body) in out_files {
        out.csv(&name, body);
    }
    out.csv("bandwidth.csv", table);
    let mut run = ProfileRun { profiles, output: out };
    let mono = run.bandwidth_monotone();
    run.output
        .manifest
        .metric("bandwidth_monotone", if mono { 1.0 } else { 0.0 });
    Ok(run)
}

fn strip_prefix(params: &Parameters, prefix: &str) -> Parameters {
    let mut out = Parameters::new();
    for p in params.iter() {
        if let Some(rest) = p.path.strip_prefix(prefix) {
            out.push(rest.to_string(), p.value.clone(), p.decay);
        }
    }
    out
}

fn checkpoint_profile(cfg: &ExperimentConfig, seeds: &Seeds, mut m: RunManifest) -> CliResult<ProfileRun> {
    let path = cfg.profile.checkpoint.as_str();
    let ck = read_checkpoint(path)?;
    let family: Family = meta_get(&ck.meta, "family")
        .ok_or_else(|| CliError::config(format!("checkpoint {path} is not a sequence model")))?
        .parse()?;
    let len = cfg.profile.len;
    let (model, sequences): (SequenceModel, Vec<Vec<usize>>) = match meta_get(&ck.meta, "kind") {
        Some("icl") => {
            let model = {
                let mut model = super::icl::icl_model(cfg, family)?;
                load_into(&mut model.params, &ck.params, path)?;
                model
            };
            let data = icl_data(cfg, seeds.data)?;
            let seqs: Vec<Vec<usize>> = data
                .test
                .iter()
                .filter(|(_, s)| s.tokens.len() >= len)
                .take(cfg.profile.sequences)
                .map(|(_, s)| s.tokens[..len].to_vec())
                .collect();
            (model, seqs)
        }
        Some("induction") => {
            let depths = meta_get(&ck.meta, "depths").unwrap_or("");
            let blocks: usize = depths.parse().map_err(|_| {
                CliError::config(format!(
                    "checkpoint {path} holds depths {depths:?}; profile one depth at a time"
                ))
            })?;
            let mut lm = cfg.lm_config(cfg.induction.vocab, cfg.induction.len);
            lm.n_blocks = blocks;
            let mut model = build_lm(family, &lm, 0)?;
            load_into(
                &mut model.params,
                &strip_prefix(&ck.params, &format!("blocks{blocks}.")),
                path,
            )?;
            let ic = cfg.induction_config();
            let seqs = gen_induction_set(seeds.data, "induction-test", &ic, cfg.profile.sequences)?
                .into_iter()
                .map(|s| s.tokens[..len.min(s.tokens.len())].to_vec())
                .collect();
            (model, seqs)
        }
        _ => return Err(CliError::config(format!("checkpoint {path} is not a sequence model"))),
    };
    if sequences.is_empty() {
        return Err(CliError::config(format!(
            "no evaluation sequence reaches profile.len = {len}"
        )));
    }
    if cfg.profile.layer >= model.config.n_blocks {
        return Err(CliError::config(format!(
            "profile.layer {} out of range for {} blocks",
            cfg.profile.layer, model.config.n_blocks
        )));
    }
    let prof = attention_profile(&model, &sequences, cfg.profile.layer)?;
    let bw = bandwidth(&prof.mean);
    m.pool(
        "profile_inputs",
        format!("{} sequences of length {len}", sequences.len()),
    );
    m.metric("bandwidth", bw as f64);
    let mut out = RunOutput::new(m);
    out.csv("attention_profile.csv", prof.to_csv());
    Ok(ProfileRun {
        profiles: vec![(f64::NAN, prof, bw)],
        output: out,
    })
}
