//! Per-object prediction files: JSON manifest plus a binary blob holding the
//! generated points, fracture probabilities and the noise endpoint.

use std::fs;
use std::io::Read;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::RigidTransform;
use crate::sampler::{SampleResult, SampleSeeds};

pub const PREDICTION_FORMAT_VERSION: &str = "1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: String,
    object_id: String,
    config_hash: String,
    seeds: SampleSeeds,
    steps: usize,
    k: usize,
    m: usize,
    anchor_id: usize,
    budgets: Vec<usize>,
    transforms: Vec<TransformRecord>,
    degenerate: Vec<bool>,
    /// Row-major K×K symmetric scores.
    a_scores: Vec<Vec<f64>>,
    /// Whether the producing model had each structural head.
    has_adjacency: bool,
    has_fracture: bool,
    /// Refine-mode annotation ("gen" for a first pass).
    stage: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformRecord {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

/// Everything needed downstream of a generation pass.
pub struct PredictionFile {
    pub object_id: String,
    pub config_hash: String,
    pub seeds: SampleSeeds,
    pub steps: usize,
    pub anchor_id: usize,
    pub budgets: Vec<usize>,
    pub transforms: Vec<RigidTransform>,
    pub degenerate: Vec<bool>,
    pub a_scores: Array2<f64>,
    pub x0_hat: Array2<f64>,
    pub f_probs: Vec<f64>,
    pub noise_endpoint: Array2<f64>,
    pub has_adjacency: bool,
    pub has_fracture: bool,
    pub stage: String,
}

pub fn write_prediction(
    dir: &Path,
    result: &SampleResult,
    seeds: &SampleSeeds,
    steps: usize,
    config_hash: &str,
    stage: &str,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let m = result.x0_hat.nrows();
    let k = result.transforms.len();
    let manifest = Manifest {
        format_version: PREDICTION_FORMAT_VERSION.to_string(),
        object_id: result.object_id.clone(),
        config_hash: config_hash.to_string(),
        seeds: *seeds,
        steps,
        k,
        m,
        anchor_id: result.query_set.anchor_id,
        budgets: result.query_set.budgets.clone(),
        transforms: result
            .transforms
            .iter()
            .map(|t| {
                let mut rotation = [[0.0; 3]; 3];
                for r in 0..3 {
                    for c in 0..3 {
                        rotation[r][c] = t.rotation[(r, c)];
                    }
                }
                TransformRecord {
                    rotation,
                    translation: [t.translation.x, t.translation.y, t.translation.z],
                }
            })
            .collect(),
        degenerate: result.degenerate.clone(),
        a_scores: (0..k)
            .map(|i| (0..k).map(|j| score_at(&result.a_scores, i, j)).collect())
            .collect(),
        has_adjacency: result.a_scores.nrows() == k && k > 0,
        has_fracture: !result.f_probs.is_empty(),
        stage: stage.to_string(),
    };

    let json_path = dir.join(format!("{}.json", result.object_id));
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Json { path: json_path.display().to_string(), source: e })?;
    fs::write(&json_path, text).map_err(|e| Error::io(json_path.display().to_string(), e))?;

    let mut blob = Vec::with_capacity(m * (12 + 4 + 12));
    for r in 0..m {
        for c in 0..3 {
            blob.extend_from_slice(&(result.x0_hat[(r, c)] as f32).to_le_bytes());
        }
    }
    for r in 0..m {
        let p = result.f_probs.get(r).copied().unwrap_or(0.0);
        blob.extend_from_slice(&(p as f32).to_le_bytes());
    }
    for r in 0..m {
        for c in 0..3 {
            blob.extend_from_slice(&(result.noise_endpoint[(r, c)] as f32).to_le_bytes());
        }
    }
    let bin_path = dir.join(format!("{}.bin", result.object_id));
    fs::write(&bin_path, blob).map_err(|e| Error::io(bin_path.display().to_string(), e))?;
    Ok(())
}

fn score_at(scores: &Array2<f64>, i: usize, j: usize) -> f64 {
    if scores.nrows() > i && scores.ncols() > j {
        scores[(i, j)]
    } else {
        0.0
    }
}

pub fn read_prediction(dir: &Path, object_id: &str) -> Result<PredictionFile> {
    let json_path = dir.join(format!("{object_id}.json"));
    let text = fs::read_to_string(&json_path)
        .map_err(|e| Error::io(json_path.display().to_string(), e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::SchemaViolation {
        path: json_path.display().to_string(),
        reason: e.to_string(),
    })?;
    if manifest.format_version != PREDICTION_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            path: json_path.display().to_string(),
            found: manifest.format_version,
            expected: PREDICTION_FORMAT_VERSION.to_string(),
        });
    }
    let k = manifest.k;
    let m = manifest.m;
    if manifest.budgets.len() != k
        || manifest.transforms.len() != k
        || manifest.degenerate.len() != k
        || manifest.a_scores.len() != k
        || manifest.budgets.iter().sum::<usize>() != m
    {
        return Err(Error::SchemaViolation {
            path: json_path.display().to_string(),
            reason: "sizes disagree".to_string(),
        });
    }

    let bin_path = dir.join(format!("{object_id}.bin"));
    let display = bin_path.display().to_string();
    let mut bytes = Vec::new();
    fs::File::open(&bin_path)
        .map_err(|e| Error::io(display.clone(), e))?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(display.clone(), e))?;
    let expected = m * 12 + m * 4 + m * 12;
    if bytes.len() < expected {
        let section = if bytes.len() < m * 12 {
            "points"
        } else if bytes.len() < m * 16 {
            "fracture probabilities"
        } else {
            "noise endpoint"
        };
        return Err(Error::Truncated {
            path: display,
            section: section.to_string(),
        });
    }
    let f32_at = |offset: usize| -> f64 {
        f32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap()) as f64
    };
    let mut x0_hat = Array2::zeros((m, 3));
    for r in 0..m {
        for c in 0..3 {
            x0_hat[(r, c)] = f32_at((r * 3 + c) * 4);
        }
    }
    let mut f_probs = Vec::with_capacity(m);
    for r in 0..m {
        f_probs.push(f32_at(m * 12 + r * 4));
    }
    let mut noise = Array2::zeros((m, 3));
    for r in 0..m {
        for c in 0..3 {
            noise[(r, c)] = f32_at(m * 16 + (r * 3 + c) * 4);
        }
    }

    let mut a_scores = Array2::zeros((k, k));
    for i in 0..k {
        if manifest.a_scores[i].len() != k {
            return Err(Error::SchemaViolation {
                path: json_path.display().to_string(),
                reason: "ragged score matrix".to_string(),
            });
        }
        for j in 0..k {
            a_scores[(i, j)] = manifest.a_scores[i][j];
        }
    }

    let transforms = manifest
        .transforms
        .iter()
        .map(|t| {
            let r = &t.rotation;
            RigidTransform::new(
                Matrix3::new(
                    r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1],
                    r[2][2],
                ),
                Vector3::new(t.translation[0], t.translation[1], t.translation[2]),
            )
        })
        .collect();

    Ok(PredictionFile {
        object_id: manifest.object_id,
        config_hash: manifest.config_hash,
        seeds: manifest.seeds,
        steps: manifest.steps,
        anchor_id: manifest.anchor_id,
        budgets: manifest.budgets,
        transforms,
        degenerate: manifest.degenerate,
        a_scores,
        x0_hat,
        f_probs,
        noise_endpoint: noise,
        has_adjacency: manifest.has_adjacency,
        has_fracture: manifest.has_fracture,
        stage: manifest.stage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{fracture_object_with, GenConfig, Shape};
    use crate::flow::{ModelConfig, ModelParams};
    use crate::sampler::sample_object;

    #[test]
    fn prediction_round_trip() {
        let gen = GenConfig {
            points_per_object: 600,
            min_fragment_points: 48,
            ..GenConfig::default()
        };
        let sample = fracture_object_with(Shape::Cube, 2, 17, &gen).unwrap();
        let config = ModelConfig {
            width: 16,
            blocks: 1,
            heads: 2,
            attach_layer: 1,
            head_hidden: 8,
            neighbors: 8,
            ..ModelConfig::default()
        };
        let params = ModelParams::init(&config, 2).unwrap();
        let seeds = SampleSeeds::derive(1, 0);
        let result = sample_object(&params, &sample, 48, 4, &seeds).unwrap();

        let dir = tempfile::tempdir().unwrap();
        write_prediction(dir.path(), &result, &seeds, 4, "deadbeef", "gen").unwrap();
        let read = read_prediction(dir.path(), &result.object_id).unwrap();
        assert_eq!(read.config_hash, "deadbeef");
        assert_eq!(read.steps, 4);
        assert_eq!(read.budgets, result.query_set.budgets);
        for (a, b) in read.f_probs.iter().zip(&result.f_probs) {
            assert_eq!(*a, (*b as f32) as f64);
        }
        for (ta, tb) in read.transforms.iter().zip(&result.transforms) {
            assert_eq!(ta.translation, tb.translation);
        }
        assert_eq!(read.stage, "gen");
    }

    #[test]
    fn truncated_blob_is_reported() {
        let gen = GenConfig {
            points_per_object: 600,
            min_fragment_points: 48,
            ..GenConfig::default()
        };
        let sample = fracture_object_with(Shape::Cube, 2, 18, &gen).unwrap();
        let config = ModelConfig {
            width: 16,
            blocks: 1,
            heads: 2,
            attach_layer: 1,
            head_hidden: 8,
            neighbors: 8,
            ..ModelConfig::default()
        };
        let params = ModelParams::init(&config, 2).unwrap();
        let seeds = SampleSeeds::derive(1, 0);
        let result = sample_object(&params, &sample, 48, 2, &seeds).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_prediction(dir.path(), &result, &seeds, 2, "", "gen").unwrap();
        let bin = dir.path().join(format!("{}.bin", result.object_id));
        let bytes = fs::read(&bin).unwrap();
        fs::write(&bin, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            read_prediction(dir.path(), &result.object_id),
            Err(Error::Truncated { .. })
        ));
    }
}
