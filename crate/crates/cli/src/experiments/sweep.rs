use std::fmt::Write as _;

use mosaic_core::networks::{build_lm, count_parameters, Family};
use mosaic_core::record::fmt_f64;

use super::icl::{describe_data, icl_data, icl_model, train_icl_model, IclData, IclScores};
use super::{RunOutput, Seeds};
use crate::config::{ExperimentConfig, Kind};
use crate::error::{detail, CliError, CliResult};
use crate::manifest::RunManifest;

pub const SWEEP_SCHEMA: &str =
    "family,point,blocks,d_model,peak_lr,params,validation_accuracy,test_accuracy,test_tvd,iid_accuracy";

/// Largest relative parameter-count gap allowed between the two families
/// at one grid point.
pub const PARITY_TOLERANCE: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridPoint {
    pub blocks: usize,
    pub d_model: usize,
    pub peak_lr: f64,
}

/// Grid points in lexicographic order of `(blocks, d_model, peak_lr)`.
pub fn grid(cfg: &ExperimentConfig) -> Vec<GridPoint> {
    let sorted = |v: &[usize]| {
        let mut v = v.to_vec();
        v.sort_unstable();
        v.dedup();
        v
    };
    let mut lrs = cfg.sweep.peak_lr.clone();
    lrs.sort_by(f64::total_cmp);
    lrs.dedup();
    let mut out = Vec::new();
    for &blocks in &sorted(&cfg.sweep.blocks) {
        for &d_model in &sorted(&cfg.sweep.d_model) {
            for &peak_lr in &lrs {
                out.push(GridPoint {
                    blocks,
                    d_model,
                    peak_lr,
                });
            }
        }
    }
    out
}

/// `cfg` with the point's knobs applied for `family`.
pub fn point_config(cfg: &ExperimentConfig, family: Family, p: &GridPoint) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.run.family = family;
    c.model.blocks = p.blocks;
    c.model.d_model = p.d_model;
    c.icl.train.peak_lr = p.peak_lr;
    c
}

/// Relative parameter gap between mosaic and transformer at one point.
pub fn parity_gap(cfg: &ExperimentConfig, p: &GridPoint) -> CliResult<(usize, usize, f64)> {
    let count = |f: Family| -> CliResult<usize> {
        let c = point_config(cfg, f, p);
        let lm = c.lm_config(c.icl.alphabet + 1, c.icl_config().max_tokens());
        Ok(count_parameters(&build_lm(f, &lm, 0)?))
    };
    let (m, t) = (count(Family::Mosaic)?, count(Family::Transformer)?);
    Ok((m, t, (m as f64 - t as f64).abs() / t as f64))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointResult {
    pub family: Family,
    pub index: usize,
    pub point: GridPoint,
    pub params: usize,
    pub scores: IclScores,
}

pub struct SweepRun {
    pub results: Vec<PointResult>,
    /// Selected result per family, in `sweep.families` order.
    pub selected: Vec<PointResult>,
    pub max_parity_gap: f64,
    pub output: RunOutput,
}

/// Highest validation accuracy; ties go to the lexicographically first
/// grid point.
pub fn select(results: &[PointResult]) -> Option<&PointResult> {
    results.iter().fold(None, |best: Option<&PointResult>, r| match best {
        Some(b) if b.scores.validation.accuracy >= r.scores.validation.accuracy => Some(b),
        _ => Some(r),
    })
}

fn check_points(cfg: &ExperimentConfig, points: &[GridPoint]) -> CliResult<()> {
    let runs = points.len() * cfg.sweep.families.len();
    if runs > cfg.sweep.budget {
        return Err(CliError::config(format!(
            "sweep needs {runs} training runs but sweep.budget is {}",
            cfg.sweep.budget
        )));
    }
    for p in points {
        for &f in &cfg.sweep.families {
            let c = point_config(cfg, f, p);
            c.lm_config(c.icl.alphabet + 1, 1)
                .validate()
                .map_err(|e| CliError::config(format!("grid point {p:?}: {}", detail(&e))))?;
            c.icl
                .train
                .schedule()
                .validate()
                .map_err(|e| CliError::config(format!("grid point {p:?}: {}", detail(&e))))?;
        }
    }
    Ok(())
}

/// Trains every family at every grid point on one shared dataset, selects
/// per family by validation accuracy and reports the selected test score.
pub fn sweep(cfg: &ExperimentConfig) -> CliResult<SweepRun> {
    let points = grid(cfg);
    check_points(cfg, &points)?;
    let mut max_gap: f64 = 0.0;
    let mut gaps = Vec::new();
    for p in &points {
        let gap = parity_gap(cfg, p)?;
        max_gap = max_gap.max(gap.2);
        gaps.push(gap);
    }
    if max_gap > PARITY_TOLERANCE {
        return Err(CliError::contract(format!(
            "parameter parity gap {max_gap:.4} exceeds {PARITY_TOLERANCE}"
        )));
    }
    let seeds = Seeds::new(cfg.run.seed);
    let data = icl_data(cfg, seeds.data)?;

    let mut m = RunManifest::new("sweep", Some(Kind::Icl), cfg);
    seeds.record(&mut m);
    describe_data(&mut m, cfg, &data);
    let mut out = RunOutput::new(m);
    let mut results = Vec::new();
    for &family in &cfg.sweep.families {
        for (index, p) in points.iter().enumerate() {
            let (r, point_out) = run_point(cfg, family, index, p, &data, &seeds)?;
            let dir = format!("points/{}-{index}", family.name());
            for (name, schema) in &point_out.manifest.artifacts {
                out.manifest.artifact(&format!("{dir}/{name}"), schema);
            }
            out.manifest.artifact(&format!("{dir}/manifest.txt"), "manifest");
            for (name, bytes) in point_out.files {
                out.files.push((format!("{dir}/{name}"), bytes));
            }
            out.files.push((
                format!("{dir}/manifest.txt"),
                point_out.manifest.to_string().into_bytes(),
            ));
            results.push(r);
        }
    }

    let mut table = format!("{SWEEP_SCHEMA}\n");
    for r in &results {
        let _ = writeln!(
            table,
            "{},{},{},{},{},{},{},{},{},{}",
            r.family.name(),
            r.index,
            r.point.blocks,
            r.point.d_model,
            fmt_f64(r.point.peak_lr),
            r.params,
            fmt_f64(r.scores.validation.accuracy),
            fmt_f64(r.scores.test.accuracy),
            fmt_f64(r.scores.test.tvd),
            fmt_f64(r.scores.iid.accuracy)
        );
    }
    let mut selected = Vec::new();
    for &family in &cfg.sweep.families {
        let of_family: Vec<PointResult> = results.iter().filter(|r| r.family == family).cloned().collect();
        let best = select(&of_family).expect("nonempty grid").clone();
        let f = family.name();
        out.manifest.metric(format!("{f}.selected_point"), best.index as f64);
        out.manifest.metric(format!("{f}.params"), best.params as f64);
        best.scores.record(&mut out.manifest, &format!("{f}."));
        selected.push(best);
    }
    for (i, (mc, tc, gap)) in gaps.iter().enumerate() {
        out.manifest
            .metric(format!("parity.point{i}.mosaic_params"), *mc as f64);
        out.manifest
            .metric(format!("parity.point{i}.transformer_params"), *tc as f64);
        out.manifest.metric(format!("parity.point{i}.gap"), *gap);
    }
    out.manifest.metric("parity.max_gap", max_gap);
    out.csv("sweep.csv", table);
    Ok(SweepRun {
        results,
        selected,
        max_parity_gap: max_gap,
        output: out,
    })
}

fn run_point(
    cfg: &ExperimentConfig,
    family: Family,
    index: usize,
    p: &GridPoint,
    data: &IclData,
    seeds: &Seeds,
) -> CliResult<(PointResult, RunOutput)> {
    let pc = point_config(cfg, family, p);
    let mut model = icl_model(&pc, family)?;
    let report = train_icl_model(&mut model, &pc, &pc.icl.train, data, seeds)?;
    let scores = IclScores::compute(&model, data)?;
    let params = count_parameters(&model);

    let mut m = RunManifest::new("sweep-point", Some(Kind::Icl), &pc);
    seeds.record(&mut m);
    m.metric("point", index as f64);
    m.metric("params", params as f64);
    if let Some(l) = report.final_loss() {
        m.metric("final_loss", l);
    }
    scores.record(&mut m, "");
    m.timing("train_secs", report.wall_clock_secs);
    let mut out = RunOutput::new(m);
    out.csv("icl_scores.csv", scores.to_csv());
    Ok((
        PointResult {
            family,
            index,
            point: *p,
            params,
            scores,
        },
        out,
    ))
}
