//! `report`: render summary/ablation artifacts as plain-text tables.

use std::path::Path;

use sare_core::metrics::MetricsReport;

use crate::error::{KitError, Result};

pub fn cmd_report(summary: &Path, ablate: Option<&Path>) -> Result<()> {
    let text = std::fs::read_to_string(summary)
        .map_err(|e| KitError::usage(format!("cannot read {}: {e}", summary.display())))?;
    let doc: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| KitError::runtime(format!("parse {}: {e}", summary.display())))?;
    let report: MetricsReport = serde_json::from_value(
        doc.get("summary")
            .cloned()
            .ok_or_else(|| KitError::runtime("summary.json has no `summary` key".to_string()))?,
    )
    .map_err(|e| KitError::runtime(format!("parse summary: {e}")))?;

    println!("objects: {}", report.objects);
    println!(
        "overall: PA {:.4}  CD {:.6}  RMSE(R) {:.3} deg  RMSE(T) {:.5}",
        report.mean_pa, report.mean_cd, report.mean_rmse_rot_deg, report.mean_rmse_trans
    );
    println!(
        "baselines: random-pose PA {:.4}  all-edges precision {:.4}",
        report.mean_baseline_pa, report.mean_all_edges_precision
    );
    if let Some(p) = report.mean_adj_precision {
        println!("adjacency precision {:.4}", p);
    }
    if let Some(p) = report.mean_fracture_precision {
        println!("fracture precision {:.4}", p);
    }
    if let Some(r) = report.mean_refined_pa {
        println!(
            "refined: PA {:.4} (delta {:+.2} pp)",
            r,
            report.overall_delta_pa_pp.unwrap_or(0.0)
        );
    }

    println!("\nby fragment count:");
    println!("{:<10} {:>6} {:>8} {:>12} {:>10}", "bin", "count", "PA", "RMSE(R)", "dPA pp");
    for bin in &report.k_bins {
        println!(
            "{:<10} {:>6} {:>8.4} {:>12.3} {:>10}",
            bin.label,
            bin.count,
            bin.mean_pa,
            bin.mean_rmse_rot_deg,
            bin.delta_pa_pp.map(|d| format!("{d:+.2}")).unwrap_or_default()
        );
    }

    println!("\nby first-pass PA:");
    println!("{:<10} {:>6} {:>8} {:>10} {:>10}", "bin %", "count", "PA", "refined", "dPA pp");
    for bin in &report.pa_bins {
        println!(
            "{:<10} {:>6} {:>8.4} {:>10} {:>10}",
            bin.label,
            bin.count,
            bin.mean_pa,
            bin.mean_refined_pa.map(|p| format!("{p:.4}")).unwrap_or_default(),
            bin.delta_pa_pp.map(|d| format!("{d:+.2}")).unwrap_or_default()
        );
    }
    if let Some(hard) = &report.hard_subset {
        println!(
            "\nhard subset ({}): {} objects, PA {:.4}{}",
            hard.label,
            hard.count,
            hard.mean_pa,
            hard.delta_pa_pp
                .map(|d| format!(", refined delta {d:+.2} pp"))
                .unwrap_or_default()
        );
    }

    if let Some(path) = ablate {
        let text = std::fs::read_to_string(path)
            .map_err(|e| KitError::usage(format!("cannot read {}: {e}", path.display())))?;
        println!("\nablation rows:\n{text}");
    }
    Ok(())
}
