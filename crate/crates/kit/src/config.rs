//! Run configuration: one TOML (or JSON) file, schema-validated with unknown
//! keys rejected, plus seed overrides (env `SARE_KIT_SEED`, then flags).
//! The effective config is hashed and echoed into every output.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sare_core::data::Shape;
use sare_core::flow::{ModelConfig, TrainConfig};
use sare_core::refine::{RefineConfig, RefineMode};

use crate::error::{KitError, Result};

pub const SEED_ENV_VAR: &str = "SARE_KIT_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sample: SampleConfig,
    pub refine: RefineSettings,
    pub ablate: AblateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            sample: SampleConfig::default(),
            refine: RefineSettings::default(),
            ablate: AblateConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub shapes: Vec<String>,
    pub points_per_object: usize,
    pub eps_fracture: f64,
    pub eps_adjacency: f64,
    pub min_fragment_points: usize,
    /// Requested fragment-count histogram per split.
    pub k_bins: Vec<KBin>,
    /// Store each sample with seeded random input rotations (anchor fixed).
    pub augment_inputs: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KBin {
    pub k: usize,
    pub train: usize,
    pub test: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            shapes: Shape::ALL.iter().map(|s| s.name().to_string()).collect(),
            points_per_object: 20_000,
            eps_fracture: sare_core::data::EPS_FRACTURE,
            eps_adjacency: sare_core::data::EPS_ADJACENCY,
            min_fragment_points: 64,
            k_bins: (2..=6).map(|k| KBin { k, train: 40, test: 10 }).collect(),
            augment_inputs: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleConfig {
    pub steps: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig { steps: 50 }
    }
}

/// Refinement settings: mode plus thresholds (flattened for friendly TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineSettings {
    pub mode: String,
    pub edge_threshold: f64,
    pub overlap_ratio_max: f64,
    pub voxel_resolution: u32,
    pub coverage_tolerance: u32,
    pub coverage_fraction: f64,
    pub min_component_size: usize,
    pub blend_alpha: f64,
    pub resample_repeats: usize,
    pub fracture_threshold: f64,
    pub bbox_inflation: f64,
}

impl Default for RefineSettings {
    fn default() -> Self {
        let c = RefineConfig::default();
        RefineSettings {
            mode: "repaint".to_string(),
            edge_threshold: c.edge_threshold,
            overlap_ratio_max: c.overlap_ratio_max,
            voxel_resolution: c.voxel_resolution,
            coverage_tolerance: c.coverage_tolerance,
            coverage_fraction: c.coverage_fraction,
            min_component_size: c.min_component_size,
            blend_alpha: c.blend_alpha,
            resample_repeats: c.resample_repeats,
            fracture_threshold: c.fracture_threshold,
            bbox_inflation: c.bbox_inflation,
        }
    }
}

impl RefineSettings {
    pub fn to_config(&self) -> RefineConfig {
        RefineConfig {
            edge_threshold: self.edge_threshold,
            overlap_ratio_max: self.overlap_ratio_max,
            voxel_resolution: self.voxel_resolution,
            coverage_tolerance: self.coverage_tolerance,
            coverage_fraction: self.coverage_fraction,
            min_component_size: self.min_component_size,
            blend_alpha: self.blend_alpha,
            resample_repeats: self.resample_repeats,
            fracture_threshold: self.fracture_threshold,
            bbox_inflation: self.bbox_inflation,
        }
    }

    pub fn mode(&self) -> Result<RefineMode> {
        RefineMode::parse(&self.mode).map_err(|e| KitError::usage(e.to_string()))
    }
}

/// Ablation sweep axes (empty = ablate not configured).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateConfig {
    /// Head configurations: both, none, fracture-only, adjacency-only.
    pub heads: Vec<String>,
    /// Structural attachment layers ℓ_s to sweep.
    pub attach_layers: Vec<usize>,
    /// Refinement variants applied to the base configuration's predictions.
    pub refine: Vec<AblateRefine>,
    /// Optional training-epoch override for sweep rows.
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateRefine {
    pub mode: String,
    #[serde(default)]
    pub alpha: Option<f64>,
}

/// Head configuration of one ablation row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadMode {
    pub fracture: bool,
    pub adjacency: bool,
}

impl HeadMode {
    pub fn parse(name: &str) -> Result<HeadMode> {
        match name {
            "both" => Ok(HeadMode { fracture: true, adjacency: true }),
            "none" => Ok(HeadMode { fracture: false, adjacency: false }),
            "fracture-only" => Ok(HeadMode { fracture: true, adjacency: false }),
            "adjacency-only" => Ok(HeadMode { fracture: false, adjacency: true }),
            other => Err(KitError::usage(format!(
                "unknown head mode `{other}` (expected both|none|fracture-only|adjacency-only)"
            ))),
        }
    }

    pub fn label(&self) -> &'static str {
        match (self.fracture, self.adjacency) {
            (true, true) => "both",
            (false, false) => "none",
            (true, false) => "fracture-only",
            (false, true) => "adjacency-only",
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            KitError::usage(format!("cannot read config {}: {e}", path.display()))
        })?;
        let config: RunConfig = if path.extension().map(|e| e == "json").unwrap_or(false) {
            serde_json::from_str(&text)
                .map_err(|e| KitError::usage(format!("config {}: {e}", path.display())))?
        } else {
            toml::from_str(&text)
                .map_err(|e| KitError::usage(format!("config {}: {e}", path.display())))?
        };
        config.validate()?;
        Ok(config)
    }

    /// Apply the seed precedence: config < `SARE_KIT_SEED` < `--seed`.
    pub fn apply_seed_overrides(&mut self, flag: Option<u64>) -> Result<()> {
        if let Ok(text) = std::env::var(SEED_ENV_VAR) {
            let parsed: u64 = text.parse().map_err(|_| {
                KitError::usage(format!("{SEED_ENV_VAR}={text} is not a valid seed"))
            })?;
            self.seed = parsed;
        }
        if let Some(seed) = flag {
            self.seed = seed;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.shapes.is_empty() {
            return Err(KitError::usage("dataset.shapes is empty"));
        }
        for name in &self.dataset.shapes {
            Shape::parse(name).map_err(|e| KitError::usage(e.to_string()))?;
        }
        if self.dataset.k_bins.is_empty() {
            return Err(KitError::usage("dataset.k_bins is empty"));
        }
        for bin in &self.dataset.k_bins {
            if !(sare_core::data::K_MIN..=sare_core::data::K_MAX).contains(&bin.k) {
                return Err(KitError::usage(format!(
                    "k_bins entry k={} outside [{}, {}]",
                    bin.k,
                    sare_core::data::K_MIN,
                    sare_core::data::K_MAX
                )));
            }
        }
        if self.dataset.points_per_object < 10 * self.dataset.min_fragment_points {
            return Err(KitError::usage(
                "points_per_object too small for the fragment floor",
            ));
        }
        self.model
            .validate()
            .map_err(|e| KitError::usage(e.to_string()))?;
        if self.sample.steps == 0 {
            return Err(KitError::usage("sample.steps must be at least 1"));
        }
        self.refine
            .to_config()
            .validate()
            .map_err(|e| KitError::usage(e.to_string()))?;
        self.refine.mode()?;
        for h in &self.ablate.heads {
            HeadMode::parse(h)?;
        }
        for l in &self.ablate.attach_layers {
            if !(1..=self.model.blocks).contains(l) {
                return Err(KitError::usage(format!(
                    "ablate attach layer {l} outside [1, {}]",
                    self.model.blocks
                )));
            }
        }
        for r in &self.ablate.refine {
            RefineMode::parse(&r.mode).map_err(|e| KitError::usage(e.to_string()))?;
            if let Some(a) = r.alpha {
                if !(0.0..=1.0).contains(&a) {
                    return Err(KitError::usage(format!("ablate refine alpha {a} outside [0,1]")));
                }
            }
        }
        Ok(())
    }

    /// Short hash of the effective configuration (canonical JSON).
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        hex_prefix(&digest, 16)
    }

    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn shapes(&self) -> Vec<Shape> {
        self.dataset
            .shapes
            .iter()
            .map(|s| Shape::parse(s).expect("validated"))
            .collect()
    }
}

fn hex_prefix(digest: &[u8], chars: usize) -> String {
    let mut out = String::with_capacity(chars);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
        if out.len() >= chars {
            break;
        }
    }
    out.truncate(chars);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_hash_is_stable() {
        let config = RunConfig::default();
        config.validate().unwrap();
        assert_eq!(config.hash(), config.hash());
        assert_eq!(config.hash().len(), 16);
        let mut other = config.clone();
        other.seed = 43;
        assert_ne!(config.hash(), other.hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<RunConfig>("surprise = 1").unwrap_err();
        assert!(err.to_string().contains("surprise"));
        let err = toml::from_str::<RunConfig>("[dataset]\nshapez = []").unwrap_err();
        assert!(err.to_string().contains("shapez"));
    }

    #[test]
    fn toml_round_trip() {
        let config = RunConfig::default();
        let text = toml::to_string(&config).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(config, back);
    }

    #[test]
    fn bad_values_fail_validation() {
        let mut config = RunConfig::default();
        config.dataset.k_bins = vec![KBin { k: 1, train: 1, test: 1 }];
        assert!(config.validate().is_err());

        let mut config = RunConfig::default();
        config.dataset.shapes = vec!["tesseract".to_string()];
        assert!(config.validate().is_err());

        let mut config = RunConfig::default();
        config.refine.mode = "hope".to_string();
        assert!(config.validate().is_err());
    }

    #[test]
    fn head_modes_parse() {
        assert_eq!(HeadMode::parse("both").unwrap().label(), "both");
        assert_eq!(HeadMode::parse("none").unwrap().label(), "none");
        assert!(HeadMode::parse("all").is_err());
    }
}
