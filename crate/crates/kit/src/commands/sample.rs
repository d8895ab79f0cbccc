//! `sample`: run the generation pass over the test split and write per-object
//! prediction files.

use std::path::Path;

use sare_core::flow::load_checkpoint;
use sare_core::par;
use sare_core::sampler::{sample_object, write_prediction, SampleSeeds};

use crate::commands::{check_hash, load_split, RunManifest};
use crate::config::RunConfig;
use crate::error::{KitError, Result};

pub fn cmd_sample(
    config: &RunConfig,
    data_dir: &Path,
    checkpoint: &Path,
    out_dir: &Path,
    force: bool,
) -> Result<()> {
    if !checkpoint.exists() {
        return Err(KitError::usage(format!(
            "checkpoint not found: {}",
            checkpoint.display()
        )));
    }
    let (params, ckpt_hash, _) = load_checkpoint(checkpoint)?;
    check_hash(&config.hash(), &ckpt_hash, "checkpoint", force)?;

    let samples = load_split(data_dir, "test")?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| KitError::runtime(format!("create {}: {e}", out_dir.display())))?;
    log::info!(
        "sampling {} objects with {} steps",
        samples.len(),
        config.sample.steps
    );

    let steps = config.sample.steps;
    let queries = config.train.queries;
    let hash = config.hash();
    let master = config.seed;
    let outcomes: Vec<Result<()>> = par::map_indexed(&samples, |idx, sample| {
        let seeds = SampleSeeds::derive(master, idx as u64);
        let result = sample_object(&params, sample, queries, steps, &seeds)
            .map_err(|e| KitError::runtime(format!("object {}: {e}", sample.object_id)))?;
        write_prediction(out_dir, &result, &seeds, steps, &hash, "gen")
            .map_err(|e| KitError::runtime(format!("object {}: {e}", sample.object_id)))?;
        Ok(())
    });
    for o in outcomes {
        o?;
    }
    RunManifest::new("sample", config).write(out_dir)?;
    Ok(())
}
