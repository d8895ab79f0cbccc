//! Geometric verification of candidate contact edges.
//!
//! A pair is rejected when its voxel overlap ratio exceeds the
//! interpenetration threshold, and retained only when the two fragments'
//! fracture voxels cover each other within a small voxel tolerance, in both
//! directions.

use std::collections::HashSet;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geom::{voxelize, Aabb, PointCloud, VoxelSet};
use crate::par;
use crate::refine::RefineConfig;

/// Outcome of verifying one candidate edge.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeReport {
    pub i: usize,
    pub j: usize,
    pub score: f64,
    /// Voxel overlap ratio r = |S_i ∩ S_j| / min(|S_i|, |S_j|).
    pub overlap_ratio: f64,
    /// Fraction of i's fracture voxels near j's, and vice versa.
    pub coverage_ij: f64,
    pub coverage_ji: f64,
    pub kept: bool,
    pub reason: String,
}

/// Verify candidate edges over world-frame clouds. `fracture_points[i]` are
/// fragment i's predicted fracture locations in the same frame.
pub fn verify_edges(
    clouds: &[PointCloud],
    fracture_points: &[Vec<Vector3<f64>>],
    candidates: &[(usize, usize, f64)],
    config: &RefineConfig,
) -> (Vec<(usize, usize)>, Vec<EdgeReport>) {
    let k = clouds.len();
    debug_assert_eq!(fracture_points.len(), k);
    let bbox = Aabb::of_points(clouds.iter().flat_map(|c| c.points.iter()))
        .unwrap_or_else(|| Aabb::new(Vector3::repeat(-1.0), Vector3::repeat(1.0)))
        .inflated(config.bbox_inflation);
    let resolution = config.voxel_resolution;

    let surface: Vec<VoxelSet> = par::map_indexed(clouds, |_, c| voxelize(c, resolution, &bbox));
    let fracture: Vec<HashSet<[u32; 3]>> = par::map_indexed(fracture_points, |_, pts| {
        pts.iter()
            .map(|p| crate::geom::voxel_index(p, resolution, &bbox))
            .collect()
    });

    let reports: Vec<EdgeReport> = par::map_indexed(candidates, |_, &(i, j, score)| {
        let overlap_ratio = surface[i].overlap_ratio(&surface[j]);
        if overlap_ratio > config.overlap_ratio_max {
            return EdgeReport {
                i,
                j,
                score,
                overlap_ratio,
                coverage_ij: 0.0,
                coverage_ji: 0.0,
                kept: false,
                reason: "interpenetration".to_string(),
            };
        }
        if fracture[i].is_empty() || fracture[j].is_empty() {
            log::debug!("edge ({i},{j}): empty fracture voxel set, cannot verify");
            return EdgeReport {
                i,
                j,
                score,
                overlap_ratio,
                coverage_ij: 0.0,
                coverage_ji: 0.0,
                kept: false,
                reason: "empty fracture set".to_string(),
            };
        }
        let coverage_ij = coverage(&fracture[i], &fracture[j], config.coverage_tolerance);
        let coverage_ji = coverage(&fracture[j], &fracture[i], config.coverage_tolerance);
        let kept = coverage_ij >= config.coverage_fraction && coverage_ji >= config.coverage_fraction;
        EdgeReport {
            i,
            j,
            score,
            overlap_ratio,
            coverage_ij,
            coverage_ji,
            kept,
            reason: if kept { "verified" } else { "insufficient coverage" }.to_string(),
        }
    });

    let kept = reports
        .iter()
        .filter(|r| r.kept)
        .map(|r| (r.i, r.j))
        .collect();
    (kept, reports)
}

/// Fraction of voxels in `from` that have a voxel of `to` within Chebyshev
/// distance `tolerance`.
fn coverage(from: &HashSet<[u32; 3]>, to: &HashSet<[u32; 3]>, tolerance: u32) -> f64 {
    if from.is_empty() {
        return 0.0;
    }
    let tol = tolerance as i64;
    let close = from
        .iter()
        .filter(|&&cell| {
            let [x, y, z] = cell;
            for dx in -tol..=tol {
                for dy in -tol..=tol {
                    for dz in -tol..=tol {
                        let probe = [
                            (x as i64 + dx) as u32,
                            (y as i64 + dy) as u32,
                            (z as i64 + dz) as u32,
                        ];
                        if (x as i64 + dx) >= 0
                            && (y as i64 + dy) >= 0
                            && (z as i64 + dz) >= 0
                            && to.contains(&probe)
                        {
                            return true;
                        }
                    }
                }
            }
            false
        })
        .count();
    close as f64 / from.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn cube_cloud(offset: Vector3<f64>, n: usize, rng: &mut impl Rng) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|_| {
                    offset
                        + Vector3::new(
                            rng.gen::<f64>() * 0.3,
                            rng.gen::<f64>() * 0.3,
                            rng.gen::<f64>() * 0.3,
                        )
                })
                .collect(),
        )
    }

    #[test]
    fn colocated_identical_clouds_are_rejected() {
        let mut rng = crate::seed::rng_from(7);
        let a = cube_cloud(Vector3::zeros(), 500, &mut rng);
        let b = a.clone();
        let fracture = vec![a.points[..50].to_vec(), b.points[..50].to_vec()];
        let config = RefineConfig::default();
        let (kept, reports) = verify_edges(
            &[a, b],
            &fracture,
            &[(0, 1, 1.0)],
            &config,
        );
        assert!(kept.is_empty());
        assert_eq!(reports[0].overlap_ratio, 1.0);
        assert_eq!(reports[0].reason, "interpenetration");
    }

    #[test]
    fn far_apart_clouds_fail_coverage() {
        let mut rng = crate::seed::rng_from(8);
        let a = cube_cloud(Vector3::zeros(), 400, &mut rng);
        let b = cube_cloud(Vector3::new(0.9, 0.9, 0.9), 400, &mut rng);
        let fa = a.points[..40].to_vec();
        let fb = b.points[..40].to_vec();
        let config = RefineConfig::default();
        let (kept, reports) = verify_edges(&[a, b], &[fa, fb], &[(0, 1, 0.9)], &config);
        assert!(kept.is_empty());
        assert_eq!(reports[0].reason, "insufficient coverage");
    }

    #[test]
    fn empty_fracture_set_is_not_retained() {
        let mut rng = crate::seed::rng_from(9);
        let a = cube_cloud(Vector3::zeros(), 300, &mut rng);
        let b = cube_cloud(Vector3::new(0.28, 0.0, 0.0), 300, &mut rng);
        let fb = b.points[..20].to_vec();
        let config = RefineConfig::default();
        let (kept, reports) = verify_edges(&[a, b], &[vec![], fb], &[(0, 1, 0.9)], &config);
        assert!(kept.is_empty());
        assert_eq!(reports[0].reason, "empty fracture set");
    }
}
