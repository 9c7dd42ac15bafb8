use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mosaic_core::record::fmt_f64;

use super::RunOutput;
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;

pub const COMPARE_SCHEMA: &str = "metric,a,b,delta";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricDelta {
    pub metric: String,
    pub a: f64,
    pub b: f64,
}

impl MetricDelta {
    pub fn delta(&self) -> f64 {
        self.b - self.a
    }
}

pub struct CompareRun {
    pub rows: Vec<MetricDelta>,
    pub output: RunOutput,
}

impl CompareRun {
    /// Aligned text table for the terminal.
    pub fn table(&self) -> String {
        let w = self.rows.iter().map(|r| r.metric.len()).max().unwrap_or(6).max(6);
        let mut s = format!("{:<w$}  {:>14}  {:>14}  {:>14}\n", "metric", "a", "b", "delta");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<w$}  {:>14.6e}  {:>14.6e}  {:>14.6e}",
                r.metric,
                r.a,
                r.b,
                r.delta()
            );
        }
        s
    }
}

/// `path` itself, or `path/manifest.txt` for a run directory.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("manifest.txt")
    } else {
        path.to_path_buf()
    }
}

pub fn read_manifest(path: &Path) -> CliResult<RunManifest> {
    let p = manifest_path(path);
    let text =
        std::fs::read_to_string(&p).map_err(|e| CliError::config(format!("cannot read {}: {e}", p.display())))?;
    RunManifest::parse(&text).map_err(|e| CliError::config(format!("{}: {e}", p.display())))
}

/// Metric-by-metric deltas `b - a`. Both manifests must come from the same
/// experiment kind and report the same metric keys.
pub fn compare_manifests(a: &RunManifest, b: &RunManifest) -> CliResult<Vec<MetricDelta>> {
    if a.kind != b.kind {
        return Err(CliError::contract(format!(
            "cannot compare runs of different kinds ({} and {})",
            a.kind.map_or("none", |k| k.name()),
            b.kind.map_or("none", |k| k.name())
        )));
    }
    let only = |x: &RunManifest, y: &RunManifest| -> Vec<String> {
        x.metrics
            .iter()
            .filter(|(k, _)| y.get_metric(k).is_none())
            .map(|(k, _)| k.clone())
            .collect()
    };
    let (only_a, only_b) = (only(a, b), only(b, a));
    if !only_a.is_empty() || !only_b.is_empty() {
        let mut msg = String::from("metric keys differ;");
        if !only_a.is_empty() {
            let _ = write!(msg, " missing from b: {}", only_a.join(", "));
        }
        if !only_b.is_empty() {
            let _ = write!(msg, " missing from a: {}", only_b.join(", "));
        }
        return Err(CliError::contract(msg));
    }
    Ok(a.metrics
        .iter()
        .map(|(k, va)| MetricDelta {
            metric: k.clone(),
            a: *va,
            b: b.get_metric(k).expect("keys checked"),
        })
        .collect())
}

pub fn compare(cfg: &ExperimentConfig, a: &Path, b: &Path) -> CliResult<CompareRun> {
    let (ma, mb) = (read_manifest(a)?, read_manifest(b)?);
    let rows = compare_manifests(&ma, &mb)?;
    let mut m = RunManifest::new("compare", ma.kind, cfg);
    m.pool("a", manifest_path(a).display().to_string());
    m.pool("b", manifest_path(b).display().to_string());
    let mut csv = format!("{COMPARE_SCHEMA}\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            r.metric,
            fmt_f64(r.a),
            fmt_f64(r.b),
            fmt_f64(r.delta())
        );
    }
    let worst = rows.iter().map(|r| r.delta().abs()).fold(0.0, f64::max);
    m.metric("max_abs_delta", worst);
    let mut out = RunOutput::new(m);
    out.csv("compare.csv", csv);
    Ok(CompareRun { rows, output: out })
}
