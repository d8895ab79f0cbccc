//! `ablate`: sweep structural-head configurations, attachment layers and
//! refinement variants; one metrics row per configuration.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use sare_core::flow::{train, ModelParams};
use sare_core::par;
use sare_core::refine::{refine_pipeline, FirstPass, RefineMode};
use sare_core::sampler::{sample_object, SampleResult, SampleSeeds};
use sare_core::seed::{self, domain};

use crate::commands::eval::evaluate_prediction;
use crate::commands::{load_split, RunManifest};
use crate::config::{HeadMode, RunConfig};
use crate::error::{KitError, Result};

#[derive(Debug, Clone, Serialize)]
struct AblateRow {
    heads: String,
    attach_layer: usize,
    refine_mode: Option<String>,
    refine_alpha: Option<f64>,
    pa: f64,
    cd: f64,
    rmse_rot_deg: f64,
    rmse_trans: f64,
    /// Absent ("--") when the corresponding head is off.
    fracture_precision: Option<f64>,
    adj_precision: Option<f64>,
    /// Refine rows: PA change versus their base row, percentage points.
    delta_pa_pp: Option<f64>,
}

pub fn cmd_ablate(config: &RunConfig, data_dir: &Path, out_dir: &Path) -> Result<()> {
    let spec = &config.ablate;
    if spec.heads.is_empty() && spec.attach_layers.is_empty() && spec.refine.is_empty() {
        return Err(KitError::usage(
            "ablate sweep is empty: set [ablate] heads / attach_layers / refine",
        ));
    }
    let heads: Vec<HeadMode> = if spec.heads.is_empty() {
        vec![HeadMode { fracture: true, adjacency: true }]
    } else {
        spec.heads
            .iter()
            .map(|h| HeadMode::parse(h))
            .collect::<Result<_>>()?
    };
    let layers: Vec<usize> = if spec.attach_layers.is_empty() {
        vec![config.model.attach_layer]
    } else {
        spec.attach_layers.clone()
    };

    let train_split = load_split(data_dir, "train")?;
    let test_split = load_split(data_dir, "test")?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| KitError::runtime(format!("create {}: {e}", out_dir.display())))?;

    let mut train_config = config.train.clone();
    if let Some(epochs) = spec.epochs {
        train_config.epochs = epochs;
    }

    let mut rows: Vec<AblateRow> = Vec::new();
    let mut base: Option<(f64, Vec<SampleResult>)> = None;
    let base_heads = heads[0];
    let base_layer = layers[0];

    for &head_mode in &heads {
        for &layer in &layers {
            log::info!("ablation row: heads={} l_s={layer}", head_mode.label());
            let mut model_cfg = config.model.clone();
            model_cfg.fracture_head = head_mode.fracture;
            model_cfg.adjacency_head = head_mode.adjacency;
            model_cfg.attach_layer = layer;
            // Detached heads contribute nothing to the objective.
            let mut tc = train_config.clone();
            if !head_mode.fracture {
                tc.lambda_fracture = 0.0;
            }
            if !head_mode.adjacency {
                tc.lambda_adjacency = 0.0;
            }

            let mut params = ModelParams::init(&model_cfg, config.seed)?;
            train(&mut params, &train_split, &tc, config.seed)?;

            let results: Vec<Result<SampleResult>> = par::map_indexed(&test_split, |idx, sample| {
                let seeds = SampleSeeds::derive(config.seed, idx as u64);
                sample_object(&params, sample, tc.queries, config.sample.steps, &seeds)
                    .map_err(|e| KitError::runtime(format!("object {}: {e}", sample.object_id)))
            });
            let mut sample_results = Vec::with_capacity(results.len());
            for r in results {
                sample_results.push(r?);
            }
            let row = evaluate_row(
                config,
                &test_split,
                &sample_results,
                head_mode,
                layer,
                None,
                None,
                None,
            )?;
            if head_mode == base_heads && layer == base_layer {
                base = Some((row.pa, sample_results));
            } else {
                drop(sample_results);
            }
            rows.push(row);
        }
    }

    // Refinement variants run against the base row's predictions.
    if !spec.refine.is_empty() {
        let (base_pa, base_results) =
            base.as_ref().expect("base row is always the first sweep entry");
        let mut model_cfg = config.model.clone();
        model_cfg.fracture_head = base_heads.fracture;
        model_cfg.adjacency_head = base_heads.adjacency;
        model_cfg.attach_layer = base_layer;
        let mut params = ModelParams::init(&model_cfg, config.seed)?;
        let mut tc = train_config.clone();
        if !base_heads.fracture {
            tc.lambda_fracture = 0.0;
        }
        if !base_heads.adjacency {
            tc.lambda_adjacency = 0.0;
        }
        train(&mut params, &train_split, &tc, config.seed)?;

        for variant in &spec.refine {
            let mode = RefineMode::parse(&variant.mode).map_err(|e| KitError::usage(e.to_string()))?;
            let mut refine_config = config.refine.to_config();
            if let Some(alpha) = variant.alpha {
                refine_config.blend_alpha = alpha;
            }
            log::info!(
                "ablation refine row: mode={} alpha={}",
                mode.name(),
                refine_config.blend_alpha
            );
            let refined: Vec<Result<SampleResult>> =
                par::map_indexed(&test_split, |idx, sample| {
                    let seeds = SampleSeeds::derive(config.seed, idx as u64);
                    let first = FirstPass::from_result(&base_results[idx], &seeds, config.sample.steps);
                    let refine_seed = seed::subseed(config.seed, &[domain::REFINE, idx as u64]);
                    refine_pipeline(
                        &params,
                        sample,
                        &first,
                        &refine_config,
                        mode,
                        refine_seed,
                        Some(&sample.adjacency),
                    )
                    .map(|o| o.result)
                    .map_err(|e| KitError::runtime(format!("object {}: {e}", sample.object_id)))
                });
            let mut refined_results = Vec::with_capacity(refined.len());
            for r in refined {
                refined_results.push(r?);
            }
            let row = evaluate_row(
                config,
                &test_split,
                &refined_results,
                base_heads,
                base_layer,
                Some(mode.name().to_string()),
                Some(refine_config.blend_alpha),
                Some(*base_pa),
            )?;
            rows.push(row);
        }
    }

    write_rows(out_dir, &rows)?;
    RunManifest::new("ablate", config).write(out_dir)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn evaluate_row(
    config: &RunConfig,
    test_split: &[sare_core::data::AssemblySample],
    results: &[SampleResult],
    head_mode: HeadMode,
    layer: usize,
    refine_mode: Option<String>,
    refine_alpha: Option<f64>,
    base_pa: Option<f64>,
) -> Result<AblateRow> {
    let mut metrics = Vec::with_capacity(results.len());
    for (idx, (sample, result)) in test_split.iter().zip(results).enumerate() {
        // Evaluate through the same path as cmd_eval (via an in-memory
        // prediction view).
        let seeds = SampleSeeds::derive(config.seed, idx as u64);
        let pred = sare_core::sampler::PredictionFile {
            object_id: result.object_id.clone(),
            config_hash: config.hash(),
            seeds,
            steps: config.sample.steps,
            anchor_id: result.query_set.anchor_id,
            budgets: result.query_set.budgets.clone(),
            transforms: result.transforms.clone(),
            degenerate: result.degenerate.clone(),
            a_scores: if result.a_scores.nrows() == sample.k() {
                result.a_scores.clone()
            } else {
                ndarray::Array2::zeros((0, 0))
            },
            x0_hat: result.x0_hat.clone(),
            f_probs: result.f_probs.clone(),
            noise_endpoint: result.noise_endpoint.clone(),
            has_adjacency: result.a_scores.nrows() == sample.k(),
            has_fracture: !result.f_probs.is_empty(),
            stage: "ablate".to_string(),
        };
        metrics.push(evaluate_prediction(
            sample,
            &pred,
            config.refine.edge_threshold,
            config.refine.fracture_threshold,
            seed::subseed(config.seed, &[domain::BASELINE, idx as u64]),
        )?);
    }
    let n = metrics.len() as f64;
    let pa = metrics.iter().map(|m| m.part_accuracy).sum::<f64>() / n;
    let adj: Vec<f64> = metrics.iter().filter_map(|m| m.adj_precision).collect();
    let frac: Vec<f64> = metrics.iter().filter_map(|m| m.fracture_precision).collect();
    Ok(AblateRow {
        heads: head_mode.label().to_string(),
        attach_layer: layer,
        refine_mode,
        refine_alpha,
        pa,
        cd: metrics.iter().map(|m| m.object_cd).sum::<f64>() / n,
        rmse_rot_deg: metrics.iter().map(|m| m.rmse_rot_deg).sum::<f64>() / n,
        rmse_trans: metrics.iter().map(|m| m.rmse_trans).sum::<f64>() / n,
        fracture_precision: (head_mode.fracture && !frac.is_empty())
            .then(|| frac.iter().sum::<f64>() / frac.len() as f64),
        adj_precision: (head_mode.adjacency && !adj.is_empty())
            .then(|| adj.iter().sum::<f64>() / adj.len() as f64),
        delta_pa_pp: base_pa.map(|b| (pa - b) * 100.0),
    })
}

fn write_rows(out_dir: &Path, rows: &[AblateRow]) -> Result<()> {
    let json_path = out_dir.join("ablate.json");
    let text = serde_json::to_string_pretty(rows)
        .map_err(|e| KitError::runtime(format!("serialize ablation rows: {e}")))?;
    std::fs::write(&json_path, text)
        .map_err(|e| KitError::runtime(format!("write {}: {e}", json_path.display())))?;

    let mut csv = String::from(
        "heads,attach_layer,refine_mode,refine_alpha,pa,cd,rmse_rot_deg,rmse_trans,fracture_precision,adj_precision,delta_pa_pp\n",
    );
    let opt = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.heads,
            r.attach_layer,
            r.refine_mode.clone().unwrap_or_default(),
            opt(&r.refine_alpha),
            r.pa,
            r.cd,
            r.rmse_rot_deg,
            r.rmse_trans,
            opt(&r.fracture_precision),
            opt(&r.adj_precision),
            opt(&r.delta_pa_pp),
        )
        .expect("string write");
    }
    let csv_path = out_dir.join("ablate.csv");
    std::fs::write(&csv_path, csv)
        .map_err(|e| KitError::runtime(format!("write {}: {e}", csv_path.display())))
}
