//! Checkpoint format: JSON config header + little-endian f32 parameter blob
//! + SHA-256 integrity checksum.
//!
//! Layout: magic `SAREckpt`, u32 header length, header JSON, parameter blob,
//! 32-byte checksum of everything before it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::flow::{ModelConfig, ModelParams};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"SAREckpt";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    param_count: usize,
    /// Producing run's config hash, free-form (empty when not tracked).
    config_hash: String,
    seed: u64,
}

pub fn save_checkpoint(
    path: &Path,
    params: &ModelParams,
    config_hash: &str,
    seed: u64,
) -> Result<()> {
    let display = path.display().to_string();
    let header = Header {
        format_version: CHECKPOINT_FORMAT_VERSION,
        config: params.config.clone(),
        param_count: params.param_count(),
        config_hash: config_hash.to_string(),
        seed,
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::Json { path: display.clone(), source: e })?;

    let flat = params.flatten();
    let mut bytes = Vec::with_capacity(16 + header_json.len() + flat.len() * 4 + 32);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for v in &flat {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let digest = Sha256::digest(&bytes);
    bytes.extend_from_slice(&digest);
    fs::write(path, bytes).map_err(|e| Error::io(display, e))?;
    Ok(())
}

/// Load a checkpoint; returns the parameters plus the recorded config hash
/// and seed.
pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, String, u64)> {
    let display = path.display().to_string();
    let bytes = fs::read(path).map_err(|e| Error::io(display.clone(), e))?;
    let truncated = |section: &str| Error::Truncated {
        path: display.clone(),
        section: section.to_string(),
    };

    if bytes.len() < 12 {
        return Err(truncated("magic"));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::SchemaViolation {
            path: display,
            reason: "bad magic".to_string(),
        });
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + header_len {
        return Err(truncated("header"));
    }
    let header: Header =
        serde_json::from_slice(&bytes[12..12 + header_len]).map_err(|e| Error::SchemaViolation {
            path: display.clone(),
            reason: e.to_string(),
        })?;
    if header.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            path: display,
            found: header.format_version.to_string(),
            expected: CHECKPOINT_FORMAT_VERSION.to_string(),
        });
    }

    let blob_start = 12 + header_len;
    let blob_len = header.param_count * 4;
    if bytes.len() < blob_start + blob_len + 32 {
        return Err(truncated("parameter blob"));
    }
    let checksum_start = blob_start + blob_len;
    let digest = Sha256::digest(&bytes[..checksum_start]);
    if digest.as_slice() != &bytes[checksum_start..checksum_start + 32] {
        return Err(Error::SchemaViolation {
            path: display,
            reason: "checksum mismatch".to_string(),
        });
    }

    let mut params = ModelParams::init(&header.config, 0)?;
    if params.param_count() != header.param_count {
        return Err(Error::SchemaViolation {
            path: display,
            reason: format!(
                "config implies {} parameters, header says {}",
                params.param_count(),
                header.param_count
            ),
        });
    }
    let mut flat = Vec::with_capacity(header.param_count);
    for chunk in bytes[blob_start..checksum_start].chunks_exact(4) {
        flat.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
    }
    params.unflatten(&flat)?;
    Ok((params, header.config_hash, header.seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::ModelConfig;

    fn tiny_params() -> ModelParams {
        let config = ModelConfig {
            width: 16,
            blocks: 2,
            heads: 2,
            attach_layer: 1,
            head_hidden: 8,
            ..ModelConfig::default()
        };
        ModelParams::init(&config, 21).unwrap()
    }

    #[test]
    fn round_trip_within_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let params = tiny_params();
        save_checkpoint(&path, &params, "abc123", 42).unwrap();
        let (loaded, hash, seed) = load_checkpoint(&path).unwrap();
        assert_eq!(hash, "abc123");
        assert_eq!(seed, 42);
        for (a, b) in params.flatten().iter().zip(loaded.flatten()) {
            assert_eq!((*a as f32) as f64, b);
        }
    }

    #[test]
    fn corruption_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &tiny_params(), "", 0).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::SchemaViolation { .. })
        ));
    }

    #[test]
    fn truncation_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &tiny_params(), "", 0).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 40]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Truncated { .. })));
    }
}
