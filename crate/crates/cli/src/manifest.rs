//! Run manifests: the resolved config plus seeds, dataset pools, metric
//! summaries and the artifacts a run wrote.

use mosaic_core::record::{fmt_f64, Record};

use crate::config::{ExperimentConfig, Kind, MANIFEST_SECTIONS};
use crate::error::{CliError, CliResult};

pub const MANIFEST_FORMAT: u32 = 1;
pub const CSV_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub kind: Option<Kind>,
    pub config: Record,
    pub seeds: Vec<(String, u64)>,
    pub pools: Vec<(String, String)>,
    pub metrics: Vec<(String, f64)>,
    /// File name relative to the output directory, and its schema.
    pub artifacts: Vec<(String, String)>,
    /// Wall-clock seconds; informative only, never compared.
    pub timing: Vec<(String, f64)>,
}

impl RunManifest {
    pub fn new(command: &str, kind: Option<Kind>, cfg: &ExperimentConfig) -> Self {
        RunManifest {
            command: command.to_string(),
            kind,
            config: cfg.to_record(),
            seeds: Vec::new(),
            pools: Vec::new(),
            metrics: Vec::new(),
            artifacts: Vec::new(),
            timing: Vec::new(),
        }
    }

    pub fn seed(&mut self, label: &str, seed: u64) {
        self.seeds.push((label.to_string(), seed));
    }

    pub fn pool(&mut self, key: &str, description: impl Into<String>) {
        self.pools.push((key.to_string(), description.into()));
    }

    pub fn metric(&mut self, key: impl Into<String>, value: f64) {
        self.metrics.push((key.into(), value));
    }

    pub fn artifact(&mut self, file: &str, schema: &str) {
        self.artifacts.push((file.to_string(), schema.to_string()));
    }

    pub fn timing(&mut self, key: &str, secs: f64) {
        self.timing.push((key.to_string(), secs));
    }

    pub fn get_metric(&self, key: &str) -> Option<f64> {
        self.metrics.iter().find(|(k, _)| k == key).map(|&(_, v)| v)
    }

    pub fn to_record(&self) -> Record {
        let mut r = Record::new();
        r.set("manifest", "format", MANIFEST_FORMAT);
        r.set("manifest", "code_version", env!("CARGO_PKG_VERSION"));
        r.set("manifest", "command", &self.command);
        r.set("manifest", "kind", self.kind.map_or("none", Kind::name));
        r.set("manifest", "csv_schema_version", CSV_SCHEMA_VERSION);
        for s in self.config.sections() {
            for (k, v) in &s.entries {
                r.set(&s.name, k, v);
            }
        }
        for (k, v) in &self.seeds {
            r.set("seeds", k, v);
        }
        for (k, v) in &self.pools {
            r.set("pools", k, v);
        }
        for (k, v) in &self.metrics {
            r.set("metrics", k, fmt_f64(*v));
        }
        for (k, v) in &self.artifacts {
            r.set("artifacts", k, v);
        }
        for (k, v) in &self.timing {
            r.set("timing", k, fmt_f64(*v));
        }
        r
    }

    pub fn parse(text: &str) -> CliResult<RunManifest> {
        let r = Record::parse(text).map_err(|e| CliError::config(format!("manifest: {e}")))?;
        let head = r
            .section("manifest")
            .ok_or_else(|| CliError::config("not a manifest (no [manifest] section)"))?;
        let format: u32 = r
            .parse_value("manifest", "format")
            .map_err(|e| CliError::config(format!("manifest: {e}")))?;
        if format != MANIFEST_FORMAT {
            return Err(CliError::config(format!("unsupported manifest format {format}")));
        }
        let kind = match head.get("kind") {
            None | Some("none") => None,
            Some(k) => Some(k.parse()?),
        };
        let mut config = Record::new();
        for s in r.sections() {
            if !MANIFEST_SECTIONS.contains(&s.name.as_str()) {
                for (k, v) in &s.entries {
                    config.set(&s.name, k, v);
                }
            }
        }
        let pairs =
            |name: &str| -> Vec<(String, String)> { r.section(name).map(|s| s.entries.clone()).unwrap_or_default() };
        let numbers = |name: &str| -> CliResult<Vec<(String, f64)>> {
            pairs(name)
                .into_iter()
                .map(|(k, v)| {
                    v.parse()
                        .map(|x| (k.clone(), x))
                        .map_err(|_| CliError::config(format!("manifest: {name}.{k} = {v:?} is not a number")))
                })
                .collect()
        };
        let seeds = pairs("seeds")
            .into_iter()
            .map(|(k, v)| {
                v.parse()
                    .map(|x| (k.clone(), x))
                    .map_err(|_| CliError::config(format!("manifest: seeds.{k} = {v:?} is not a seed")))
            })
            .collect::<CliResult<_>>()?;
        Ok(RunManifest {
            command: head.get("command").unwrap_or("").to_string(),
            kind,
            config,
            seeds,
            pools: pairs("pools"),
            metrics: numbers("metrics")?,
            artifacts: pairs("artifacts"),
            timing: numbers("timing")?,
        })
    }
}

impl std::fmt::Display for RunManifest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.to_record().fmt(f)
    }
}
