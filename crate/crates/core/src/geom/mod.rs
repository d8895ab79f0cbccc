//! Deterministic geometry kernels.
//!
//! All operations here are pure functions over immutable inputs and are safe
//! to call from multiple threads. Numeric tolerances are the documented
//! constants below.

mod align;
mod chamfer;
mod kdtree;
mod normals;
mod sampling;
mod voxel;

pub use align::kabsch_align;
pub use chamfer::{chamfer_distance, chamfer_distance_brute};
pub use kdtree::KdTree;
pub use normals::estimate_normals;
pub(crate) use normals::knn_indices as normals_knn;
pub use sampling::{allocate_budget, fps_sample};
pub use voxel::{voxel_index, voxelize, Aabb, VoxelSet};

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Orthogonality / unit-norm validation tolerance.
pub const ORTHO_TOL: f64 = 1e-6;

/// A 3D point set, optionally with unit normals (index-aligned).
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub normals: Option<Vec<Vector3<f64>>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        PointCloud {
            points,
            normals: None,
        }
    }

    pub fn with_normals(points: Vec<Vector3<f64>>, normals: Vec<Vector3<f64>>) -> Self {
        debug_assert_eq!(points.len(), normals.len());
        PointCloud {
            points,
            normals: Some(normals),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vector3<f64> {
        let mut c = Vector3::zeros();
        for p in &self.points {
            c += p;
        }
        c / self.points.len() as f64
    }

    /// Check the documented invariants (non-empty, unit normals within
    /// [`ORTHO_TOL`], matching lengths). Used at deserialization boundaries.
    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::invalid("point cloud is empty"));
        }
        if let Some(ns) = &self.normals {
            if ns.len() != self.points.len() {
                return Err(Error::invalid(format!(
                    "{} normals for {} points",
                    ns.len(),
                    self.points.len()
                )));
            }
            for (i, n) in ns.iter().enumerate() {
                if (n.norm() - 1.0).abs() > ORTHO_TOL {
                    return Err(Error::invalid(format!(
                        "normal {i} has norm {}",
                        n.norm()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A proper rigid motion: rotation then translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        RigidTransform {
            rotation,
            translation,
        }
    }

    pub fn apply_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Proper orthogonality check: RᵀR = I and det(R) = +1 within `tol`.
    pub fn is_proper_rotation(rotation: &Matrix3<f64>, tol: f64) -> bool {
        let gram = rotation.transpose() * rotation;
        let mut max_dev: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                max_dev = max_dev.max((gram[(i, j)] - target).abs());
            }
        }
        max_dev <= tol && (rotation.determinant() - 1.0).abs() <= tol
    }

    pub fn validate(&self) -> Result<()> {
        if !Self::is_proper_rotation(&self.rotation, ORTHO_TOL) {
            return Err(Error::invalid("rotation is not proper orthogonal"));
        }
        Ok(())
    }
}

/// Transform every point by `R·x + t`; normals rotate by `R` only.
pub fn apply_transform(cloud: &PointCloud, t: &RigidTransform) -> PointCloud {
    let points = cloud.points.iter().map(|p| t.apply_point(p)).collect();
    let normals = cloud
        .normals
        .as_ref()
        .map(|ns| ns.iter().map(|n| t.rotation * n).collect());
    PointCloud { points, normals }
}

/// Geodesic angle between two rotations, in degrees in [0, 180].
///
/// Mathematically this is arccos((trace(R1ᵀR2) − 1)/2) with the trace
/// argument clamped to [−1, 1]; it is evaluated through atan2 of the skew
/// norm against the clamped cosine, which computes the same angle without
/// the sqrt(eps) resolution floor of acos near 0 and never yields NaN.
pub fn rotation_error_deg(r1: &Matrix3<f64>, r2: &Matrix3<f64>) -> Result<f64> {
    for (name, r) in [("r1", r1), ("r2", r2)] {
        if !RigidTransform::is_proper_rotation(r, ORTHO_TOL) {
            return Err(Error::invalid(format!("{name} is not a proper rotation")));
        }
    }
    let rel = r1.transpose() * r2;
    let cos = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let skew = Vector3::new(
        rel[(2, 1)] - rel[(1, 2)],
        rel[(0, 2)] - rel[(2, 0)],
        rel[(1, 0)] - rel[(0, 1)],
    );
    let sin = (skew.norm() / 2.0).clamp(0.0, 1.0);
    Ok(sin.atan2(cos).to_degrees())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    pub(crate) fn rot_z(angle: f64) -> Matrix3<f64> {
        let (s, c) = angle.sin_cos();
        Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
    }

    pub(crate) fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
        use nalgebra::{Quaternion, UnitQuaternion};
        use rand_distr::StandardNormal;
        let q = Quaternion::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner()
    }

    #[test]
    fn identity_transform_is_bitwise_noop() {
        let cloud = PointCloud::with_normals(
            vec![Vector3::new(0.3, -0.2, 0.9), Vector3::new(1.0, 2.0, 3.0)],
            vec![Vector3::new(0.0, 0.0, 1.0), Vector3::new(1.0, 0.0, 0.0)],
        );
        let out = apply_transform(&cloud, &RigidTransform::identity());
        assert_eq!(out, cloud);
    }

    #[test]
    fn pure_translation_moves_points() {
        let cloud = PointCloud::new(vec![Vector3::zeros()]);
        let t = RigidTransform::new(Matrix3::identity(), Vector3::new(1.0, 0.0, 0.0));
        let out = apply_transform(&cloud, &t);
        assert_eq!(out.points[0], Vector3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn quarter_turn_about_z() {
        let cloud = PointCloud::new(vec![Vector3::new(1.0, 0.0, 0.0)]);
        let t = RigidTransform::new(rot_z(std::f64::consts::FRAC_PI_2), Vector3::zeros());
        let out = apply_transform(&cloud, &t);
        assert_relative_eq!(out.points[0], Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn transform_composition_matches_sequential_application() {
        let mut rng = crate::seed::rng_from(11);
        let cloud = PointCloud::new(
            (0..32)
                .map(|_| Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()))
                .collect(),
        );
        for _ in 0..20 {
            let t1 = RigidTransform::new(
                random_rotation(&mut rng),
                Vector3::new(rng.gen(), rng.gen(), rng.gen()),
            );
            let t2 = RigidTransform::new(
                random_rotation(&mut rng),
                Vector3::new(rng.gen(), rng.gen(), rng.gen()),
            );
            let seq = apply_transform(&apply_transform(&cloud, &t1), &t2);
            let composed = apply_transform(&cloud, &t2.compose(&t1));
            for (a, b) in seq.points.iter().zip(&composed.points) {
                assert_relative_eq!(a, b, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn rotation_error_basics() {
        let id = Matrix3::identity();
        assert_eq!(rotation_error_deg(&id, &id).unwrap(), 0.0);
        let r = rot_z(std::f64::consts::FRAC_PI_2);
        assert_relative_eq!(rotation_error_deg(&id, &r).unwrap(), 90.0, epsilon = 1e-9);
    }

    #[test]
    fn rotation_error_clamps_near_identity_noise() {
        // A rotation matrix carrying ~1e-12 of orthogonality noise can push
        // the trace argument above 1; the clamp must keep the result at 0.
        let mut r = Matrix3::identity();
        r[(0, 0)] += 4e-13;
        let err = rotation_error_deg(&Matrix3::identity(), &r).unwrap();
        assert!(err.is_finite());
        assert_relative_eq!(err, 0.0, epsilon = 1e-5);
    }

    #[test]
    fn rotation_error_rejects_non_orthogonal() {
        let mut bad = Matrix3::identity();
        bad[(0, 1)] = 0.5;
        assert!(rotation_error_deg(&Matrix3::identity(), &bad).is_err());
    }

    #[test]
    fn inverse_round_trips() {
        let mut rng = crate::seed::rng_from(3);
        let t = RigidTransform::new(
            random_rotation(&mut rng),
            Vector3::new(0.4, -1.2, 0.7),
        );
        let round = t.compose(&t.inverse());
        assert_relative_eq!(round.rotation, Matrix3::identity(), epsilon = 1e-12);
        assert_relative_eq!(round.translation, Vector3::zeros(), epsilon = 1e-12);
    }
}
