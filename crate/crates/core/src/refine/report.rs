//! Refinement report: what was verified, kept, and stabilized.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::refine::{EdgeReport, RefineConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefineReport {
    pub object_id: String,
    pub mode: String,
    pub config: RefineConfig,
    /// Candidate edge count before verification.
    pub candidates: usize,
    pub edges: Vec<EdgeReport>,
    /// Stabilized components (fragment ids).
    pub components: Vec<Vec<usize>>,
    pub mask_tokens: usize,
    pub total_tokens: usize,
}

impl RefineReport {
    pub fn kept_edges(&self) -> Vec<(usize, usize)> {
        self.edges.iter().filter(|e| e.kept).map(|e| (e.i, e.j)).collect()
    }
}

pub fn write_refine_report(dir: &Path, report: &RefineReport) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let path = dir.join(format!("{}.refine.json", report.object_id));
    let text = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Json { path: path.display().to_string(), source: e })?;
    fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))
}
