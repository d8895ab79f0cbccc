//! `eval`: score predictions against ground truth, optionally paired with a
//! refined run for before/after deltas.

use std::path::Path;

use sare_core::cond::sample_queries;
use sare_core::data::AssemblySample;
use sare_core::metrics::{binned_report, evaluate_object, write_metrics_csv, write_summary, ObjectMetrics};
use sare_core::par;
use sare_core::sampler::{read_prediction, PredictionFile};
use sare_core::seed::{self, domain};

use crate::commands::{check_hash, load_split, RunManifest};
use crate::config::RunConfig;
use crate::error::{KitError, Result};

pub fn cmd_eval(
    config: &RunConfig,
    data_dir: &Path,
    pred_dir: &Path,
    refined_dir: Option<&Path>,
    out_dir: &Path,
    force: bool,
) -> Result<()> {
    if !pred_dir.exists() {
        return Err(KitError::usage(format!(
            "prediction directory not found: {}",
            pred_dir.display()
        )));
    }
    if let Some(dir) = refined_dir {
        if !dir.exists() {
            return Err(KitError::usage(format!(
                "refined directory not found: {}",
                dir.display()
            )));
        }
    }
    let samples = load_split(data_dir, "test")?;
    let master = config.seed;
    let edge_threshold = config.refine.edge_threshold;
    let fracture_threshold = config.refine.fracture_threshold;

    let evaluate_dir = |dir: &Path| -> Result<Vec<ObjectMetrics>> {
        let rows: Vec<Result<(ObjectMetrics, String)>> =
            par::map_indexed(&samples, |idx, sample| {
                let object = &sample.object_id;
                let wrap = |e: sare_core::Error| KitError::runtime(format!("object {object}: {e}"));
                let pred = read_prediction(dir, object).map_err(wrap)?;
                let metrics = evaluate_prediction(
                    sample,
                    &pred,
                    edge_threshold,
                    fracture_threshold,
                    seed::subseed(master, &[domain::BASELINE, idx as u64]),
                )?;
                Ok((metrics, pred.config_hash))
            });
        let mut out = Vec::with_capacity(rows.len());
        let mut hash: Option<String> = None;
        for row in rows {
            let (metrics, row_hash) = row?;
            match &hash {
                None => hash = Some(row_hash),
                Some(h) => check_hash(h, &row_hash, "prediction set", force)?,
            }
            out.push(metrics);
        }
        Ok(out)
    };

    let gen = evaluate_dir(pred_dir)?;
    let refined = refined_dir.map(evaluate_dir).transpose()?;
    if let (Some(refined_rows), Some(first_gen)) = (&refined, gen.first()) {
        // Pairing across stages also requires matching config hashes.
        let gen_pred = read_prediction(pred_dir, &first_gen.object_id)
            .map_err(|e| KitError::runtime(e.to_string()))?;
        if let Some(first_refined) = refined_rows.first() {
            let ref_pred = read_prediction(refined_dir.unwrap(), &first_refined.object_id)
                .map_err(|e| KitError::runtime(e.to_string()))?;
            check_hash(&gen_pred.config_hash, &ref_pred.config_hash, "refined pairing", force)?;
        }
    }

    std::fs::create_dir_all(out_dir)
        .map_err(|e| KitError::runtime(format!("create {}: {e}", out_dir.display())))?;
    write_metrics_csv(&out_dir.join("metrics.csv"), &gen, refined.as_deref())?;
    let report = binned_report(&gen, refined.as_deref())?;
    write_summary(&out_dir.join("summary.json"), &report, &config.echo())?;
    RunManifest::new("eval", config).write(out_dir)?;
    log::info!(
        "evaluated {} objects: mean PA {:.4}, baseline PA {:.4}",
        report.objects,
        report.mean_pa,
        report.mean_baseline_pa
    );
    Ok(())
}

/// Score one prediction file against its sample.
pub fn evaluate_prediction(
    sample: &AssemblySample,
    pred: &PredictionFile,
    edge_threshold: f64,
    fracture_threshold: f64,
    baseline_seed: u64,
) -> Result<ObjectMetrics> {
    let object = &sample.object_id;
    let wrap = |e: sare_core::Error| KitError::runtime(format!("object {object}: {e}"));
    // Re-derive the query set to map token-level fracture predictions onto
    // ground-truth labels.
    let fracture = if pred.has_fracture {
        let qs = sample_queries(sample, pred.budgets.iter().sum(), pred.seeds.query_seed)
            .map_err(wrap)?;
        Some(qs.gather_fracture_labels(sample))
    } else {
        None
    };
    evaluate_object(
        sample,
        &pred.transforms,
        pred.has_adjacency.then_some(&pred.a_scores),
        fracture
            .as_ref()
            .map(|labels| (pred.f_probs.as_slice(), labels.as_slice(), fracture_threshold)),
        pred.anchor_id,
        edge_threshold,
        baseline_seed,
    )
    .map_err(wrap)
}
