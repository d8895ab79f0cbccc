//! Aggregation into binned reports, `metrics.csv` and `summary.json`.
//!
//! CSV rows are one object each, in input order, with a fixed column set;
//! identical inputs produce byte-identical output.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ObjectMetrics;

/// Column order of `metrics.csv`.
pub const CSV_COLUMNS: [&str; 20] = [
    "object_id",
    "k",
    "pa",
    "cd",
    "rmse_rot_deg",
    "rmse_trans",
    "adj_precision",
    "adj_recall",
    "adj_f1",
    "adj_empty_prediction",
    "induced_precision",
    "induced_recall",
    "induced_f1",
    "fracture_precision",
    "baseline_pa",
    "all_edges_precision",
    "refined_pa",
    "refined_rmse_rot_deg",
    "refined_cd",
    "delta_pa_pp",
];

/// Fragment-count bin upper bounds (inclusive); objects above the last bound
/// land in an overflow bin.
pub const DEFAULT_K_BIN_UPPER: [usize; 5] = [2, 3, 4, 6, 10];

/// Part-accuracy bins as percentages, mirroring the refinement analysis:
/// 0–50, 50–60, 60–70, 70–80, 80–90, 90–95, then the easy remainder.
pub const PA_BIN_EDGES_PCT: [f64; 7] = [0.0, 50.0, 60.0, 70.0, 80.0, 90.0, 95.0];

/// The hard subset is first-pass PA at or below this (fraction).
pub const HARD_SUBSET_PA: f64 = 0.95;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinAggregate {
    pub label: String,
    pub count: usize,
    pub mean_pa: f64,
    pub mean_rmse_rot_deg: f64,
    pub mean_cd: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_refined_pa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_pa_pp: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub objects: usize,
    pub mean_pa: f64,
    pub mean_cd: f64,
    pub mean_rmse_rot_deg: f64,
    pub mean_rmse_trans: f64,
    /// Mean over objects that carry predicted adjacency.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_adj_precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_adj_recall: Option<f64>,
    pub mean_induced_recall: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_fracture_precision: Option<f64>,
    pub mean_baseline_pa: f64,
    pub mean_all_edges_precision: f64,
    pub k_bins: Vec<BinAggregate>,
    pub pa_bins: Vec<BinAggregate>,
    /// First-pass PA ≤ 95% subset.
    pub hard_subset: Option<BinAggregate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_refined_pa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overall_delta_pa_pp: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn aggregate(label: String, rows: &[(&ObjectMetrics, Option<&ObjectMetrics>)]) -> BinAggregate {
    let count = rows.len();
    let mean_pa = mean(rows.iter().map(|(g, _)| g.part_accuracy));
    let mean_rmse = mean(rows.iter().map(|(g, _)| g.rmse_rot_deg));
    let mean_cd = mean(rows.iter().map(|(g, _)| g.object_cd));
    let refined: Vec<f64> = rows
        .iter()
        .filter_map(|(_, r)| r.map(|m| m.part_accuracy))
        .collect();
    let (mean_refined_pa, delta_pa_pp) = if refined.len() == count && count > 0 {
        let mr = mean(refined.iter().copied());
        (Some(mr), Some((mr - mean_pa) * 100.0))
    } else {
        (None, None)
    };
    BinAggregate {
        label,
        count,
        mean_pa,
        mean_rmse_rot_deg: mean_rmse,
        mean_cd,
        mean_refined_pa,
        delta_pa_pp,
    }
}

/// Bin per-object results by fragment count and by first-pass PA. `refined`
/// rows pair by object id (all-or-nothing per bin for deltas). Empty bins are
/// omitted rather than reported as zero.
pub fn binned_report(
    gen: &[ObjectMetrics],
    refined: Option<&[ObjectMetrics]>,
) -> Result<MetricsReport> {
    if gen.is_empty() {
        return Err(Error::invalid("no objects to report"));
    }
    let paired: Vec<(&ObjectMetrics, Option<&ObjectMetrics>)> = gen
        .iter()
        .map(|g| {
            let r = refined.and_then(|rs| rs.iter().find(|r| r.object_id == g.object_id));
            (g, r)
        })
        .collect();

    // Fragment-count bins (valid samples always have k >= 2).
    let mut k_bins = Vec::new();
    let mut last_lower = 1usize;
    for &upper in &DEFAULT_K_BIN_UPPER {
        let rows: Vec<_> = paired
            .iter()
            .filter(|(g, _)| g.k > last_lower && g.k <= upper)
            .cloned()
            .collect();
        if !rows.is_empty() {
            let label = if upper == last_lower + 1 {
                format!("k={upper}")
            } else {
                format!("k={}-{}", last_lower + 1, upper)
            };
            k_bins.push(aggregate(label, &rows));
        }
        last_lower = upper;
    }
    let overflow: Vec<_> = paired.iter().filter(|(g, _)| g.k > last_lower).cloned().collect();
    if !overflow.is_empty() {
        k_bins.push(aggregate(format!("k>{last_lower}"), &overflow));
    }

    // PA bins over the first-pass PA.
    let mut pa_bins = Vec::new();
    for w in 0..PA_BIN_EDGES_PCT.len() - 1 {
        let lo = PA_BIN_EDGES_PCT[w];
        let hi = PA_BIN_EDGES_PCT[w + 1];
        let last = w + 2 == PA_BIN_EDGES_PCT.len();
        let rows: Vec<_> = paired
            .iter()
            .filter(|(g, _)| {
                let pct = g.part_accuracy * 100.0;
                // The topmost explicit bin is closed so PA = 95 stays hard.
                pct >= lo && (pct < hi || (last && pct <= hi))
            })
            .cloned()
            .collect();
        if !rows.is_empty() {
            pa_bins.push(aggregate(format!("{}-{}", lo as u32, hi as u32), &rows));
        }
    }
    let easy: Vec<_> = paired
        .iter()
        .filter(|(g, _)| g.part_accuracy * 100.0 > 95.0)
        .cloned()
        .collect();
    if !easy.is_empty() {
        pa_bins.push(aggregate("95-100".to_string(), &easy));
    }

    let hard_rows: Vec<_> = paired
        .iter()
        .filter(|(g, _)| g.part_accuracy <= HARD_SUBSET_PA)
        .cloned()
        .collect();
    let hard_subset = if hard_rows.is_empty() {
        None
    } else {
        Some(aggregate(format!("pa<={:.0}", HARD_SUBSET_PA * 100.0), &hard_rows))
    };

    let adj_rows: Vec<f64> = gen.iter().filter_map(|g| g.adj_precision).collect();
    let frac_rows: Vec<f64> = gen.iter().filter_map(|g| g.fracture_precision).collect();
    let adj_recall_rows: Vec<f64> = gen.iter().filter_map(|g| g.adj_recall).collect();
    let mean_refined_pa = refined.map(|rs| mean(rs.iter().map(|m| m.part_accuracy)));
    let mean_pa = mean(gen.iter().map(|g| g.part_accuracy));

    Ok(MetricsReport {
        objects: gen.len(),
        mean_pa,
        mean_cd: mean(gen.iter().map(|g| g.object_cd)),
        mean_rmse_rot_deg: mean(gen.iter().map(|g| g.rmse_rot_deg)),
        mean_rmse_trans: mean(gen.iter().map(|g| g.rmse_trans)),
        mean_adj_precision: (!adj_rows.is_empty()).then(|| mean(adj_rows.iter().copied())),
        mean_adj_recall: (!adj_recall_rows.is_empty())
            .then(|| mean(adj_recall_rows.iter().copied())),
        mean_induced_recall: mean(gen.iter().map(|g| g.induced_recall)),
        mean_fracture_precision: (!frac_rows.is_empty()).then(|| mean(frac_rows.iter().copied())),
        mean_baseline_pa: mean(gen.iter().map(|g| g.baseline_pa)),
        mean_all_edges_precision: mean(gen.iter().map(|g| g.all_edges_precision)),
        k_bins,
        pa_bins,
        hard_subset,
        mean_refined_pa,
        overall_delta_pa_pp: mean_refined_pa.map(|r| (r - mean_pa) * 100.0),
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write one row per object (gen metrics plus refined columns when paired)
/// in the documented column order.
pub fn write_metrics_csv(
    path: &Path,
    gen: &[ObjectMetrics],
    refined: Option<&[ObjectMetrics]>,
) -> Result<()> {
    let mut out = String::new();
    out.push_str(&CSV_COLUMNS.join(","));
    out.push('\n');
    for g in gen {
        let r = refined.and_then(|rs| rs.iter().find(|r| r.object_id == g.object_id));
        let fields = [
            g.object_id.clone(),
            g.k.to_string(),
            g.part_accuracy.to_string(),
            g.object_cd.to_string(),
            g.rmse_rot_deg.to_string(),
            g.rmse_trans.to_string(),
            fmt_opt(g.adj_precision),
            fmt_opt(g.adj_recall),
            fmt_opt(g.adj_f1),
            (g.adj_empty_prediction as u8).to_string(),
            g.induced_precision.to_string(),
            g.induced_recall.to_string(),
            g.induced_f1.to_string(),
            fmt_opt(g.fracture_precision),
            g.baseline_pa.to_string(),
            g.all_edges_precision.to_string(),
            fmt_opt(r.map(|m| m.part_accuracy)),
            fmt_opt(r.map(|m| m.rmse_rot_deg)),
            fmt_opt(r.map(|m| m.object_cd)),
            fmt_opt(r.map(|m| (m.part_accuracy - g.part_accuracy) * 100.0)),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Summary JSON with the binned aggregates plus a config echo.
pub fn write_summary(
    path: &Path,
    report: &MetricsReport,
    config_echo: &serde_json::Value,
) -> Result<()> {
    let doc = serde_json::json!({
        "summary": report,
        "config": config_echo,
    });
    let text = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::Json { path: path.display().to_string(), source: e })?;
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}
