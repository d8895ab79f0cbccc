//! Rigid alignment of index-corresponding point sets (Kabsch with SVD and
//! reflection correction).

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geom::{PointCloud, RigidTransform};

/// Relative singular-value threshold below which the cross-covariance is
/// treated as rank-deficient (collinear or coincident points).
const DEGENERACY_REL_TOL: f64 = 1e-9;

/// Least-squares rigid transform mapping `src` onto `dst` (correspondence by
/// index): minimizes Σ‖R·src_k + t − dst_k‖².
pub fn kabsch_align(src: &PointCloud, dst: &PointCloud) -> Result<RigidTransform> {
    let n = src.len();
    if n != dst.len() {
        return Err(Error::invalid(format!(
            "kabsch size mismatch: {} vs {}",
            n,
            dst.len()
        )));
    }
    if n < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "kabsch needs at least 3 points, got {n}"
        )));
    }
    let cs = src.centroid();
    let cd = dst.centroid();
    let mut cross = Matrix3::zeros();
    for (p, q) in src.points.iter().zip(&dst.points) {
        cross += (q - cd) * (p - cs).transpose();
    }

    let svd = cross.svd(true, true);
    let u = svd.u.ok_or_else(|| Error::Numeric("svd failed".into()))?;
    let v_t = svd.v_t.ok_or_else(|| Error::Numeric("svd failed".into()))?;
    let sv = svd.singular_values;
    // Rank < 2 leaves a rotational degree of freedom unconstrained.
    if sv[1] <= DEGENERACY_REL_TOL * sv[0].max(f64::MIN_POSITIVE) {
        return Err(Error::DegenerateGeometry(
            "collinear or coincident correspondence".into(),
        ));
    }
    let det = (u * v_t).determinant();
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, det.signum()));
    let rotation = u * fix * v_t;
    let translation = cd - rotation * cs;
    Ok(RigidTransform {
        rotation,
        translation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{apply_transform, rotation_error_deg};
    use approx::assert_relative_eq;
    use rand::Rng;

    fn random_cloud(n: usize, rng: &mut impl Rng) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|_| Vector3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
                .collect(),
        )
    }

    #[test]
    fn identity_on_equal_clouds() {
        let mut rng = crate::seed::rng_from(1);
        let cloud = random_cloud(40, &mut rng);
        let t = kabsch_align(&cloud, &cloud).unwrap();
        assert_relative_eq!(t.rotation, Matrix3::identity(), epsilon = 1e-9);
        assert_relative_eq!(t.translation, Vector3::zeros(), epsilon = 1e-9);
    }

    #[test]
    fn recovers_known_transform_on_noiseless_data() {
        let mut rng = crate::seed::rng_from(2);
        for _ in 0..50 {
            let cloud = random_cloud(24, &mut rng);
            let truth = RigidTransform::new(
                crate::geom::tests::random_rotation(&mut rng),
                Vector3::new(rng.gen(), rng.gen(), rng.gen()),
            );
            let moved = apply_transform(&cloud, &truth);
            let rec = kabsch_align(&cloud, &moved).unwrap();
            rec.validate().unwrap();
            let rot_err = rotation_error_deg(&rec.rotation, &truth.rotation).unwrap();
            assert!(rot_err < 1e-6, "rotation error {rot_err}");
            assert!((rec.translation - truth.translation).norm() < 1e-9);
        }
    }

    #[test]
    fn beats_random_transforms_in_residual() {
        let mut rng = crate::seed::rng_from(3);
        let src = random_cloud(30, &mut rng);
        let jitter: Vec<Vector3<f64>> = src
            .points
            .iter()
            .map(|p| p + Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()) * 0.05)
            .collect();
        let truth = RigidTransform::new(
            crate::geom::tests::random_rotation(&mut rng),
            Vector3::new(0.2, -0.4, 0.9),
        );
        let dst = apply_transform(&PointCloud::new(jitter), &truth);

        let residual = |t: &RigidTransform| -> f64 {
            src.points
                .iter()
                .zip(&dst.points)
                .map(|(p, q)| (t.apply_point(p) - q).norm_squared())
                .sum()
        };
        let best = residual(&kabsch_align(&src, &dst).unwrap());
        for _ in 0..100 {
            let cand = RigidTransform::new(
                crate::geom::tests::random_rotation(&mut rng),
                Vector3::new(rng.gen(), rng.gen(), rng.gen()),
            );
            assert!(best <= residual(&cand) + 1e-12);
        }
    }

    #[test]
    fn rejects_degenerate_configurations() {
        let line = PointCloud::new(
            (0..10)
                .map(|i| Vector3::new(i as f64, 0.0, 0.0))
                .collect(),
        );
        assert!(matches!(
            kabsch_align(&line, &line),
            Err(Error::DegenerateGeometry(_))
        ));
        let two = PointCloud::new(vec![Vector3::zeros(), Vector3::x()]);
        assert!(kabsch_align(&two, &two).is_err());
    }

    #[test]
    fn planar_configurations_are_fine() {
        let mut rng = crate::seed::rng_from(4);
        let plane = PointCloud::new(
            (0..20)
                .map(|_| Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), 0.0))
                .collect(),
        );
        let truth = RigidTransform::new(
            crate::geom::tests::random_rotation(&mut rng),
            Vector3::new(1.0, 2.0, 3.0),
        );
        let moved = apply_transform(&plane, &truth);
        let rec = kabsch_align(&plane, &moved).unwrap();
        assert!(rotation_error_deg(&rec.rotation, &truth.rotation).unwrap() < 1e-6);
    }
}
