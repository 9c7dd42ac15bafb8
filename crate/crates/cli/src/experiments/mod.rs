//! Experiment drivers. Each returns its typed results together with a
//! [`RunOutput`]: the manifest and the files to place in the output
//! directory.

use std::fmt::Write as _;
use std::path::Path;

use mosaic_core::networks::{checkpoint, Parameters};
use mosaic_core::record::fmt_f64;
use mosaic_core::rng;
use mosaic_core::training::TrainReport;

use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;

pub mod compare;
pub mod gradcheck;
pub mod icl;
pub mod induction;
pub mod moons;
pub mod profile;
pub mod sweep;

pub const TRAIN_LOSS_SCHEMA: &str = "iteration,loss";

/// Everything a run writes.
#[derive(Debug)]
pub struct RunOutput {
    pub manifest: RunManifest,
    pub files: Vec<(String, Vec<u8>)>,
    /// Set when the run completed but a checked property failed; the files
    /// are still written.
    pub failure: Option<CliError>,
}

impl RunOutput {
    pub fn new(manifest: RunManifest) -> Self {
        RunOutput {
            manifest,
            files: Vec::new(),
            failure: None,
        }
    }

    /// Adds a CSV file and records its schema (the header line).
    pub fn csv(&mut self, name: &str, body: String) {
        let schema = body.lines().next().unwrap_or("").to_string();
        self.manifest.artifact(name, &schema);
        self.files.push((name.to_string(), body.into_bytes()));
    }

    pub fn binary(&mut self, name: &str, kind: &str, bytes: Vec<u8>) {
        self.manifest.artifact(name, kind);
        self.files.push((name.to_string(), bytes));
    }

    pub fn file(&self, name: &str) -> Option<&[u8]> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, b)| b.as_slice())
    }

    /// Writes every file and `manifest.txt` under `dir`.
    pub fn write(&self, dir: &Path) -> CliResult<()> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::config(format!("cannot create output directory {}: {e}", dir.display())))?;
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)
                    .map_err(|e| CliError::config(format!("cannot create {}: {e}", parent.display())))?;
            }
            std::fs::write(&path, bytes)
                .map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))?;
        }
        let path = dir.join("manifest.txt");
        std::fs::write(&path, self.manifest.to_string())
            .map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))
    }
}

/// Seeds fanned out from the run's root seed by purpose label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Seeds {
    pub root: u64,
    pub data: u64,
    pub init: u64,
    pub batches: u64,
    pub eval: u64,
}

impl Seeds {
    pub fn new(root: u64) -> Seeds {
        Seeds {
            root,
            data: rng::derive_seed(root, "data"),
            init: rng::derive_seed(root, "init"),
            batches: rng::derive_seed(root, "batches"),
            eval: rng::derive_seed(root, "eval"),
        }
    }

    pub fn record(&self, m: &mut RunManifest) {
        m.seed("root", self.root);
        m.seed("data", self.data);
        m.seed("init", self.init);
        m.seed("batches", self.batches);
        m.seed("eval", self.eval);
    }
}

/// `iteration,loss` rows, iterations counted from 1.
pub fn loss_csv(report: &TrainReport) -> String {
    let mut s = format!("{TRAIN_LOSS_SCHEMA}\n");
    for (i, l) in report.losses.iter().enumerate() {
        let _ = writeln!(s, "{},{}", i + 1, fmt_f64(*l));
    }
    s
}

/// Checkpoint metadata: `key=value` pairs separated by `;`.
pub fn meta_string(pairs: &[(&str, String)]) -> String {
    pairs
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(";")
}

pub fn meta_get<'a>(meta: &'a str, key: &str) -> Option<&'a str> {
    meta.split(';')
        .find_map(|kv| kv.split_once('=').filter(|(k, _)| *k == key).map(|(_, v)| v))
}

/// Reads a checkpoint file, mapping failures to config errors since the
/// path comes from the config.
pub fn read_checkpoint(path: &str) -> CliResult<checkpoint::Checkpoint> {
    if path.is_empty() {
        return Err(CliError::config("no checkpoint path configured"));
    }
    let bytes = std::fs::read(path).map_err(|e| CliError::config(format!("cannot read checkpoint {path}: {e}")))?;
    checkpoint::decode(&bytes).map_err(|e| CliError::config(format!("checkpoint {path}: {e}")))
}

/// Copies checkpoint values into `target`, whose layout must match.
pub fn load_into(target: &mut Parameters, source: &Parameters, path: &str) -> CliResult<()> {
    target
        .load(source)
        .map_err(|e| CliError::config(format!("checkpoint {path} does not fit the configured model: {e}")))
}
