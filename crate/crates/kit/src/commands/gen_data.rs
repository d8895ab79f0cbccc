//! `gen-data`: deterministic dataset generation.

use std::path::Path;

use sare_core::data::{augment, fracture_object_with, write_sample, GenConfig, Shape};
use sare_core::par;
use sare_core::seed::{self, domain};

use crate::commands::{DatasetManifest, RunManifest};
use crate::config::RunConfig;
use crate::error::{KitError, Result};

struct Job {
    split: &'static str,
    shape: Shape,
    k: usize,
    ordinal: usize,
    object_id: String,
    gen_seed: u64,
    aug_seed: u64,
}

pub fn cmd_gen_data(config: &RunConfig, out_dir: &Path) -> Result<()> {
    // All validation happens before the first write.
    config.validate()?;
    let shapes = config.shapes();
    let gen_config = GenConfig {
        points_per_object: config.dataset.points_per_object,
        eps_fracture: config.dataset.eps_fracture,
        eps_adjacency: config.dataset.eps_adjacency,
        min_fragment_points: config.dataset.min_fragment_points,
        max_retries: 50,
    };

    let mut jobs = Vec::new();
    for (split, split_tag) in [("train", 1u64), ("test", 2u64)] {
        let mut ordinal = 0usize;
        for bin in &config.dataset.k_bins {
            let count = if split == "train" { bin.train } else { bin.test };
            for i in 0..count {
                let shape = shapes[(ordinal + i) % shapes.len()];
                let object_id = format!("{split}-{:04}-{}-k{}", ordinal + i, shape.name(), bin.k);
                jobs.push(Job {
                    split,
                    shape,
                    k: bin.k,
                    ordinal: ordinal + i,
                    object_id,
                    gen_seed: seed::subseed(
                        config.seed,
                        &[domain::GEN, split_tag, bin.k as u64, (ordinal + i) as u64],
                    ),
                    aug_seed: seed::subseed(
                        config.seed,
                        &[domain::AUGMENT, split_tag, bin.k as u64, (ordinal + i) as u64],
                    ),
                });
            }
            ordinal += count;
        }
    }

    log::info!("generating {} objects into {}", jobs.len(), out_dir.display());
    let augment_inputs = config.dataset.augment_inputs;
    let results: Vec<Result<(String, &'static str)>> = par::map_items(jobs, |job| {
        let mut sample = fracture_object_with(job.shape, job.k, job.gen_seed, &gen_config)
            .map_err(|e| KitError::runtime(format!("object {}: {e}", job.object_id)))?;
        sample.object_id = job.object_id.clone();
        if augment_inputs {
            // Stored input poses carry seeded random rotations (anchor fixed),
            // so evaluation measures genuine rotation recovery.
            sample = augment(&sample, job.aug_seed);
        }
        let split_dir = out_dir.join(job.split);
        std::fs::create_dir_all(&split_dir)
            .map_err(|e| KitError::runtime(format!("create {}: {e}", split_dir.display())))?;
        write_sample(&split_dir, &sample)
            .map_err(|e| KitError::runtime(format!("object {}: {e}", job.object_id)))?;
        let _ = job.ordinal;
        Ok((job.object_id, job.split))
    });

    let mut train = Vec::new();
    let mut test = Vec::new();
    for r in results {
        let (id, split) = r?;
        if split == "train" {
            train.push(id);
        } else {
            test.push(id);
        }
    }

    DatasetManifest {
        format_version: super::DATASET_MANIFEST_VERSION.to_string(),
        config_hash: config.hash(),
        seed: config.seed,
        train,
        test,
    }
    .write(out_dir)?;
    RunManifest::new("gen-data", config).write(out_dir)?;
    Ok(())
}
