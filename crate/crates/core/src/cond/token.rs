//! Query-aligned local geometric descriptor.
//!
//! A deterministic 15-dim summary of the k-NN neighborhood around a query
//! point, built purely from distances and relative angles so it is invariant
//! under rigid motion of the fragment.

use nalgebra::Vector3;

use crate::data::Fragment;
use crate::error::{Error, Result};
use crate::geom::normals_knn;

pub const TOKEN_DIM: usize = 15;
const HIST_BINS: usize = 8;

/// Scale constants mapping raw components into [-1, 1]. In object-normalized
/// units neighborhoods rarely exceed half the unit radius.
const RADIUS_SCALE: f64 = 0.5;
const EIGENVALUE_SCALE: f64 = RADIUS_SCALE * RADIUS_SCALE;

/// Raw (unscaled) descriptor, handy for tests and diagnostics.
#[derive(Debug, Clone)]
pub struct LocalDescriptor {
    /// Covariance eigenvalues, descending.
    pub eigenvalues: [f64; 3],
    /// λ1/λ0 and λ2/λ0 (zero when λ0 vanishes).
    pub ratios: [f64; 2],
    /// Mean neighbor offset along the query normal.
    pub mean_offset: f64,
    /// Max distance from the query to a neighbor.
    pub radius: f64,
    /// Histogram (fractions) of neighbor-normal angles to the query normal,
    /// binned uniformly over [0, π].
    pub normal_histogram: [f64; HIST_BINS],
}

pub fn local_descriptor(fragment: &Fragment, query_index: usize, k: usize) -> Result<LocalDescriptor> {
    let points = &fragment.points.points;
    let n = points.len();
    if k < 3 || k > n {
        return Err(Error::invalid(format!(
            "neighbor count {k} out of range for {n} points"
        )));
    }
    if query_index >= n {
        return Err(Error::invalid(format!("query index {query_index} out of range")));
    }
    let normals = fragment
        .points
        .normals
        .as_ref()
        .ok_or_else(|| Error::invalid("fragment has no normals"))?;

    let q = points[query_index];
    let qn = normals[query_index];
    let idx = normals_knn(points, &q, k);

    let mut cov = nalgebra::Matrix3::zeros();
    let mut mean = Vector3::zeros();
    for &j in &idx {
        mean += points[j];
    }
    mean /= k as f64;
    let mut radius: f64 = 0.0;
    let mut offset = 0.0;
    let mut hist = [0.0f64; HIST_BINS];
    for &j in &idx {
        let d = points[j] - mean;
        cov += d * d.transpose();
        radius = radius.max((points[j] - q).norm());
        offset += (points[j] - q).dot(&qn);
        let cos = normals[j].dot(&qn).clamp(-1.0, 1.0);
        let bin = ((cos.acos() / std::f64::consts::PI) * HIST_BINS as f64)
            .floor()
            .min((HIST_BINS - 1) as f64) as usize;
        hist[bin] += 1.0;
    }
    cov /= k as f64;
    offset /= k as f64;
    for h in hist.iter_mut() {
        *h /= k as f64;
    }

    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut ev = [eig.eigenvalues[0], eig.eigenvalues[1], eig.eigenvalues[2]];
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let ev = ev.map(|v| v.max(0.0));
    let ratios = if ev[0] > 1e-18 {
        [ev[1] / ev[0], ev[2] / ev[0]]
    } else {
        [0.0, 0.0]
    };

    Ok(LocalDescriptor {
        eigenvalues: ev,
        ratios,
        mean_offset: offset,
        radius,
        normal_histogram: hist,
    })
}

impl LocalDescriptor {
    /// Scale into [-1, 1] by the documented constants.
    pub fn to_token(&self) -> [f64; TOKEN_DIM] {
        let unit = |x: f64| (2.0 * x - 1.0).clamp(-1.0, 1.0);
        let mut z = [0.0; TOKEN_DIM];
        for a in 0..3 {
            z[a] = unit((self.eigenvalues[a] / EIGENVALUE_SCALE).clamp(0.0, 1.0));
        }
        z[3] = unit(self.ratios[0].clamp(0.0, 1.0));
        z[4] = unit(self.ratios[1].clamp(0.0, 1.0));
        z[5] = (self.mean_offset / RADIUS_SCALE).clamp(-1.0, 1.0);
        z[6] = unit((self.radius / RADIUS_SCALE).clamp(0.0, 1.0));
        for (b, &h) in self.normal_histogram.iter().enumerate() {
            z[7 + b] = unit(h);
        }
        z
    }
}

/// Scaled descriptor of the neighborhood around `fragment.points[query_index]`.
pub fn local_token(fragment: &Fragment, query_index: usize, k: usize) -> Result<[f64; TOKEN_DIM]> {
    Ok(local_descriptor(fragment, query_index, k)?.to_token())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::augment;
    use crate::data::{fracture_object_with, GenConfig, Shape};
    use crate::geom::PointCloud;

    fn planar_fragment() -> Fragment {
        let mut pts = Vec::new();
        for i in 0..8 {
            for j in 0..8 {
                pts.push(Vector3::new(i as f64 * 0.02, j as f64 * 0.02, 0.0));
            }
        }
        let c: Vector3<f64> = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
        let pts: Vec<_> = pts.into_iter().map(|p| p - c).collect();
        let normals = vec![Vector3::z(); pts.len()];
        Fragment {
            id: 0,
            points: PointCloud::with_normals(pts, normals),
            area: 1.0,
        }
    }

    #[test]
    fn planar_smallest_eigenvalue_vanishes() {
        let frag = planar_fragment();
        let d = local_descriptor(&frag, 20, 12).unwrap();
        assert!(d.eigenvalues[2].abs() < 1e-6, "{:?}", d.eigenvalues);
    }

    #[test]
    fn deterministic_tokens() {
        let frag = planar_fragment();
        assert_eq!(
            local_token(&frag, 5, 10).unwrap(),
            local_token(&frag, 5, 10).unwrap()
        );
    }

    #[test]
    fn rigid_invariance() {
        let config = GenConfig {
            points_per_object: 1200,
            ..GenConfig::default()
        };
        let sample = fracture_object_with(Shape::Cylinder, 2, 13, &config).unwrap();
        // Augmentation rotates non-anchor fragments in place.
        let rotated = augment(&sample, 77);
        let moving = (0..sample.k()).find(|&i| i != sample.anchor_id).unwrap();
        for qi in [0usize, 7, 31] {
            let before = local_token(&sample.fragments[moving], qi, 16).unwrap();
            let after = local_token(&rotated.fragments[moving], qi, 16).unwrap();
            for (a, b) in before.iter().zip(&after) {
                assert!((a - b).abs() < 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let frag = planar_fragment();
        assert!(local_token(&frag, 5, 2).is_err());
        assert!(local_token(&frag, 5, 1000).is_err());
        assert!(local_token(&frag, 1000, 8).is_err());
    }
}
