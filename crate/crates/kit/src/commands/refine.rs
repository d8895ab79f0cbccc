//! `refine`: geometry-verified conditional resampling of first-pass
//! predictions.

use std::path::Path;

use sare_core::flow::load_checkpoint;
use sare_core::par;
use sare_core::refine::{refine_pipeline, write_refine_report, FirstPass, RefineMode};
use sare_core::sampler::{read_prediction, write_prediction};
use sare_core::seed::{self, domain};

use crate::commands::{check_hash, load_split, RunManifest};
use crate::config::RunConfig;
use crate::error::{KitError, Result};

pub fn cmd_refine(
    config: &RunConfig,
    data_dir: &Path,
    checkpoint: &Path,
    pred_dir: &Path,
    out_dir: &Path,
    mode_override: Option<&str>,
    alpha_override: Option<f64>,
    force: bool,
) -> Result<()> {
    let mode = match mode_override {
        Some(name) => RefineMode::parse(name).map_err(|e| KitError::usage(e.to_string()))?,
        None => config.refine.mode()?,
    };
    let mut refine_config = config.refine.to_config();
    if let Some(alpha) = alpha_override {
        refine_config.blend_alpha = alpha;
    }
    refine_config
        .validate()
        .map_err(|e| KitError::usage(e.to_string()))?;
    if !pred_dir.exists() {
        return Err(KitError::usage(format!(
            "prediction directory not found: {}",
            pred_dir.display()
        )));
    }
    let (params, ckpt_hash, _) = load_checkpoint(checkpoint)?;
    check_hash(&config.hash(), &ckpt_hash, "checkpoint", force)?;

    let samples = load_split(data_dir, "test")?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| KitError::runtime(format!("create {}: {e}", out_dir.display())))?;
    log::info!("refining {} objects in {} mode", samples.len(), mode.name());

    let hash = config.hash();
    let master = config.seed;
    let outcomes: Vec<Result<()>> = par::map_indexed(&samples, |idx, sample| {
        let object = &sample.object_id;
        let wrap = |e: sare_core::Error| KitError::runtime(format!("object {object}: {e}"));
        let pred = read_prediction(pred_dir, object).map_err(wrap)?;
        check_hash(&hash, &pred.config_hash, &format!("prediction {object}"), force)?;
        let first = FirstPass {
            x_ref: pred.x0_hat.clone(),
            transforms: pred.transforms.clone(),
            a_scores: if pred.has_adjacency {
                pred.a_scores.clone()
            } else {
                ndarray::Array2::zeros((0, 0))
            },
            f_probs: pred.f_probs.clone(),
            seeds: pred.seeds,
            steps: pred.steps,
        };
        let refine_seed = seed::subseed(master, &[domain::REFINE, idx as u64]);
        let outcome = refine_pipeline(
            &params,
            sample,
            &first,
            &refine_config,
            mode,
            refine_seed,
            Some(&sample.adjacency),
        )
        .map_err(wrap)?;
        write_prediction(out_dir, &outcome.result, &pred.seeds, pred.steps, &hash, mode.name())
            .map_err(wrap)?;
        write_refine_report(out_dir, &outcome.report).map_err(wrap)?;
        Ok(())
    });
    for o in outcomes {
        o?;
    }
    RunManifest::new("refine", config).write(out_dir)?;
    Ok(())
}
