//! Symmetric squared Chamfer distance.
//!
//! Convention: mean over A of the squared nearest-neighbor distance to B,
//! plus the same with the roles swapped. The kd-tree path must agree with
//! the O(N²) brute-force path to 1e-9 (they compute the same minima, so in
//! practice they agree bitwise).

use crate::error::{Error, Result};
use crate::geom::{KdTree, PointCloud};
use crate::par;

fn directed_mean_sq(from: &PointCloud, to_tree: &KdTree, chunk: usize) -> f64 {
    let sums = par::map_items(
        from.points.chunks(chunk).collect::<Vec<_>>(),
        |block| {
            block
                .iter()
                .map(|p| to_tree.nearest(p).1)
                .sum::<f64>()
        },
    );
    sums.iter().sum::<f64>() / from.len() as f64
}

/// Spatial-index Chamfer distance.
pub fn chamfer_distance(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("chamfer over empty cloud"));
    }
    let ta = KdTree::build(&a.points);
    let tb = KdTree::build(&b.points);
    // Fixed chunking keeps the summation order independent of thread count.
    let chunk = 1024;
    Ok(directed_mean_sq(a, &tb, chunk) + directed_mean_sq(b, &ta, chunk))
}

/// Brute-force O(N²) reference path.
pub fn chamfer_distance_brute(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("chamfer over empty cloud"));
    }
    let directed = |from: &PointCloud, to: &PointCloud| -> f64 {
        from.points
            .iter()
            .map(|p| {
                to.points
                    .iter()
                    .map(|q| (p - q).norm_squared())
                    .fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>()
            / from.len() as f64
    };
    Ok(directed(a, b) + directed(b, a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{apply_transform, RigidTransform};
    use nalgebra::Vector3;
    use rand::Rng;

    fn random_cloud(n: usize, rng: &mut impl Rng) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|_| Vector3::new(rng.gen(), rng.gen(), rng.gen()))
                .collect(),
        )
    }

    #[test]
    fn zero_on_identical_clouds() {
        let mut rng = crate::seed::rng_from(8);
        let a = random_cloud(50, &mut rng);
        assert!(chamfer_distance(&a, &a).unwrap() < 1e-12);
    }

    #[test]
    fn single_pair_is_analytic() {
        let a = PointCloud::new(vec![Vector3::zeros()]);
        let b = PointCloud::new(vec![Vector3::new(1.0, 0.0, 0.0)]);
        assert_eq!(chamfer_distance(&a, &b).unwrap(), 2.0);
    }

    #[test]
    fn tree_matches_brute_force() {
        let mut rng = crate::seed::rng_from(9);
        for _ in 0..20 {
            let a = random_cloud(64, &mut rng);
            let b = random_cloud(64, &mut rng);
            let fast = chamfer_distance(&a, &b).unwrap();
            let brute = chamfer_distance_brute(&a, &b).unwrap();
            assert!((fast - brute).abs() < 1e-9, "{fast} vs {brute}");
        }
    }

    #[test]
    fn symmetric_by_construction() {
        let mut rng = crate::seed::rng_from(10);
        let a = random_cloud(40, &mut rng);
        let b = random_cloud(25, &mut rng);
        assert_eq!(
            chamfer_distance(&a, &b).unwrap(),
            chamfer_distance(&b, &a).unwrap()
        );
    }

    #[test]
    fn rigid_invariance() {
        let mut rng = crate::seed::rng_from(11);
        let a = random_cloud(60, &mut rng);
        let b = random_cloud(60, &mut rng);
        let before = chamfer_distance(&a, &b).unwrap();
        let t = RigidTransform::new(
            crate::geom::tests::random_rotation(&mut rng),
            Vector3::new(0.3, 0.7, -0.2),
        );
        let after =
            chamfer_distance(&apply_transform(&a, &t), &apply_transform(&b, &t)).unwrap();
        assert!((before - after).abs() < 1e-9);
    }

    #[test]
    fn rejects_empty_inputs() {
        let a = PointCloud::new(vec![]);
        let b = PointCloud::new(vec![Vector3::zeros()]);
        assert!(chamfer_distance(&a, &b).is_err());
        assert!(chamfer_distance_brute(&b, &a).is_err());
    }
}
