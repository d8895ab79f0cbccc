//! Normal estimation from k-NN covariance.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::par;

/// Indices of the k nearest neighbors of `query` among `points` (including
/// the query itself when it is one of them), nearest first. Exhaustive
/// partial selection; fine for the small k used here.
pub(crate) fn knn_indices(points: &[Vector3<f64>], query: &Vector3<f64>, k: usize) -> Vec<usize> {
    let mut dists: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(j, p)| ((p - query).norm_squared(), j))
        .collect();
    dists.select_nth_unstable_by(k - 1, |a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut head: Vec<(f64, usize)> = dists[..k].to_vec();
    head.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    head.into_iter().map(|(_, j)| j).collect()
}

/// Covariance of a neighborhood around its mean.
pub(crate) fn neighborhood_covariance(points: &[Vector3<f64>], idx: &[usize]) -> Matrix3<f64> {
    let mut mean = Vector3::zeros();
    for &j in idx {
        mean += points[j];
    }
    mean /= idx.len() as f64;
    let mut cov = Matrix3::zeros();
    for &j in idx {
        let d = points[j] - mean;
        cov += d * d.transpose();
    }
    cov / idx.len() as f64
}

/// Per-point normals as the smallest-eigenvalue eigenvector of the k-NN
/// covariance, unit length, sign oriented away from the cloud centroid.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<PointCloud> {
    let n = cloud.len();
    if k < 3 || k > n {
        return Err(Error::invalid(format!(
            "neighbor count {k} out of range for {n} points"
        )));
    }
    let centroid = cloud.centroid();
    let normals = par::map_indexed(&cloud.points, |_, p| {
        let idx = knn_indices(&cloud.points, p, k);
        let cov = neighborhood_covariance(&cloud.points, &idx);
        let eig = nalgebra::SymmetricEigen::new(cov);
        // Smallest eigenvalue's eigenvector.
        let mut arg = 0;
        for a in 1..3 {
            if eig.eigenvalues[a] < eig.eigenvalues[arg] {
                arg = a;
            }
        }
        let mut normal: Vector3<f64> = eig.eigenvectors.column(arg).into();
        let norm = normal.norm();
        if norm > 0.0 {
            normal /= norm;
        } else {
            normal = Vector3::z();
        }
        if normal.dot(&(p - centroid)) < 0.0 {
            normal = -normal;
        }
        normal
    });
    Ok(PointCloud::with_normals(cloud.points.clone(), normals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn planar_grid_normals_are_z() {
        let mut pts = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                pts.push(Vector3::new(i as f64 * 0.1, j as f64 * 0.1, 0.0));
            }
        }
        let cloud = PointCloud::new(pts);
        let with_normals = estimate_normals(&cloud, 8).unwrap();
        for n in with_normals.normals.unwrap() {
            assert!(
                (n.x.abs() < 1e-6) && (n.y.abs() < 1e-6) && ((n.z.abs() - 1.0).abs() < 1e-6),
                "normal {n:?}"
            );
        }
    }

    #[test]
    fn sphere_normals_point_outward() {
        let mut rng = crate::seed::rng_from(33);
        let pts: Vec<Vector3<f64>> = (0..500)
            .map(|_| {
                let v = Vector3::new(
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                );
                v.normalize()
            })
            .collect();
        let cloud = PointCloud::new(pts);
        let with_normals = estimate_normals(&cloud, 12).unwrap();
        for (p, n) in with_normals
            .points
            .iter()
            .zip(with_normals.normals.as_ref().unwrap())
        {
            assert!(n.dot(p) > 0.0, "inward normal at {p:?}");
        }
    }

    #[test]
    fn whole_cloud_neighborhood_on_plane() {
        let mut rng = crate::seed::rng_from(34);
        let pts: Vec<Vector3<f64>> = (0..30)
            .map(|_| Vector3::new(rng.gen(), rng.gen(), 0.0))
            .collect();
        let cloud = PointCloud::new(pts);
        let n = cloud.len();
        let with_normals = estimate_normals(&cloud, n).unwrap();
        for nv in with_normals.normals.unwrap() {
            assert!((nv.z.abs() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_bad_k() {
        let cloud = PointCloud::new(vec![Vector3::zeros(), Vector3::x(), Vector3::y()]);
        assert!(estimate_normals(&cloud, 2).is_err());
        assert!(estimate_normals(&cloud, 4).is_err());
    }
}
