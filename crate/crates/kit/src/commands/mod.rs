//! Subcommand implementations.

mod ablate;
mod eval;
mod gen_data;
mod refine;
mod report;
mod sample;
mod train;

pub use ablate::cmd_ablate;
pub use eval::cmd_eval;
pub use gen_data::cmd_gen_data;
pub use refine::cmd_refine;
pub use report::cmd_report;
pub use sample::cmd_sample;
pub use train::cmd_train;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sare_core::data::{read_sample, AssemblySample};
use sare_core::par;

use crate::config::RunConfig;
use crate::error::{KitError, Result};

pub const DATASET_MANIFEST_VERSION: &str = "1";

/// Top-level dataset index written by `gen-data`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetManifest {
    pub fn path(data_dir: &Path) -> PathBuf {
        data_dir.join("dataset.json")
    }

    pub fn write(&self, data_dir: &Path) -> Result<()> {
        let path = Self::path(data_dir);
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| KitError::runtime(format!("serialize dataset manifest: {e}")))?;
        fs::write(&path, text)
            .map_err(|e| KitError::runtime(format!("write {}: {e}", path.display())))?;
        Ok(())
    }

    pub fn read(data_dir: &Path) -> Result<DatasetManifest> {
        let path = Self::path(data_dir);
        let text = fs::read_to_string(&path).map_err(|e| {
            KitError::usage(format!("missing dataset manifest {}: {e}", path.display()))
        })?;
        let manifest: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| KitError::runtime(format!("parse {}: {e}", path.display())))?;
        if manifest.format_version != DATASET_MANIFEST_VERSION {
            return Err(KitError::runtime(format!(
                "dataset manifest version {} (expected {DATASET_MANIFEST_VERSION})",
                manifest.format_version
            )));
        }
        Ok(manifest)
    }

    pub fn split(&self, name: &str) -> Result<&[String]> {
        match name {
            "train" => Ok(&self.train),
            "test" => Ok(&self.test),
            other => Err(KitError::usage(format!("unknown split `{other}`"))),
        }
    }
}

/// Load a split's samples in manifest order.
pub fn load_split(data_dir: &Path, split: &str) -> Result<Vec<AssemblySample>> {
    let manifest = DatasetManifest::read(data_dir)?;
    let ids = manifest.split(split)?;
    let split_dir = data_dir.join(split);
    let loaded = par::map_items(ids.to_vec(), |id| {
        read_sample(&split_dir.join(&id)).map_err(|e| (id, e))
    });
    let mut samples = Vec::with_capacity(loaded.len());
    for item in loaded {
        match item {
            Ok(s) => samples.push(s),
            Err((id, e)) => {
                return Err(KitError::runtime(format!("object {id}: {e}")));
            }
        }
    }
    Ok(samples)
}

/// Per-command provenance record written next to each command's outputs.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub crate_version: String,
    pub dataset_format: String,
    pub prediction_format: String,
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            config_hash: config.hash(),
            seed: config.seed,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            dataset_format: DATASET_MANIFEST_VERSION.to_string(),
            prediction_format: sare_core::sampler::PREDICTION_FORMAT_VERSION.to_string(),
        }
    }

    pub fn write(&self, out_dir: &Path) -> Result<()> {
        fs::create_dir_all(out_dir)
            .map_err(|e| KitError::runtime(format!("create {}: {e}", out_dir.display())))?;
        let path = out_dir.join("run.json");
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| KitError::runtime(format!("serialize run manifest: {e}")))?;
        fs::write(&path, text)
            .map_err(|e| KitError::runtime(format!("write {}: {e}", path.display())))?;
        Ok(())
    }
}

/// Enforce config-hash agreement between artifacts unless forced.
pub fn check_hash(expected: &str, found: &str, what: &str, force: bool) -> Result<()> {
    if expected != found {
        let msg =
            format!("{what} was produced under config {found}, current config is {expected}");
        if force {
            log::warn!("{msg} (--force)");
        } else {
            return Err(KitError::runtime(format!("{msg}; pass --force to override")));
        }
    }
    Ok(())
}
