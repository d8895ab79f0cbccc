//! Training-time augmentation: seeded random rotations in each fragment's
//! local frame, with the anchor left untouched and ground-truth transforms
//! updated so the posed assembly is unchanged.

use nalgebra::{Quaternion, UnitQuaternion};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::AssemblySample;
use crate::geom::RigidTransform;
use crate::seed::{self, domain};

/// Uniform random rotation (normalized quaternion from four iid normals).
pub fn random_rotation(rng: &mut impl Rng) -> nalgebra::Matrix3<f64> {
    let q = Quaternion::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    );
    UnitQuaternion::from_quaternion(q)
        .to_rotation_matrix()
        .into_inner()
}

/// Rotate every non-anchor fragment by an independent seeded rotation in its
/// local frame. The anchor fragment is bitwise untouched; ground-truth
/// transforms absorb the inverse rotation so posed fragments still reproduce
/// the assembly.
pub fn augment(sample: &AssemblySample, aug_seed: u64) -> AssemblySample {
    let mut out = sample.clone();
    let mut rng = seed::rng(aug_seed, &[domain::AUGMENT]);
    for i in 0..out.k() {
        // Draw in fragment order so the stream is stable regardless of anchor.
        let rot = random_rotation(&mut rng);
        if i == out.anchor_id {
            continue;
        }
        let frag = &mut out.fragments[i];
        for p in &mut frag.points.points {
            *p = rot * *p;
        }
        if let Some(normals) = &mut frag.points.normals {
            for n in normals.iter_mut() {
                *n = rot * *n;
            }
        }
        let gt = &out.gt_transforms[i];
        out.gt_transforms[i] = RigidTransform::new(gt.rotation * rot.transpose(), gt.translation);
        debug_assert!(frag.points.centroid().norm() < 1e-6);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{fracture_object_with, GenConfig, Shape};
    use crate::geom::apply_transform;

    fn sample() -> AssemblySample {
        let config = GenConfig {
            points_per_object: 2000,
            ..GenConfig::default()
        };
        fracture_object_with(Shape::Cube, 3, 3, &config).unwrap()
    }

    #[test]
    fn deterministic_given_seed() {
        let s = sample();
        let a = augment(&s, 11);
        let b = augment(&s, 11);
        for (fa, fb) in a.fragments.iter().zip(&b.fragments) {
            assert_eq!(fa.points.points, fb.points.points);
        }
    }

    #[test]
    fn anchor_is_bitwise_untouched() {
        let s = sample();
        let a = augment(&s, 5);
        let anchor = s.anchor_id;
        assert_eq!(
            s.fragments[anchor].points.points,
            a.fragments[anchor].points.points
        );
        assert_eq!(
            s.fragments[anchor].points.normals,
            a.fragments[anchor].points.normals
        );
        assert_eq!(s.gt_transforms[anchor], a.gt_transforms[anchor]);
    }

    #[test]
    fn posed_assembly_is_preserved() {
        let s = sample();
        let a = augment(&s, 23);
        for i in 0..s.k() {
            let before = apply_transform(&s.fragments[i].points, &s.gt_transforms[i]);
            let after = apply_transform(&a.fragments[i].points, &a.gt_transforms[i]);
            for (p, q) in before.points.iter().zip(&after.points) {
                assert!((p - q).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn non_anchor_fragments_actually_rotate() {
        let s = sample();
        let a = augment(&s, 99);
        let moved = (0..s.k())
            .filter(|&i| i != s.anchor_id)
            .filter(|&i| s.fragments[i].points.points[0] != a.fragments[i].points.points[0])
            .count();
        assert_eq!(moved, s.k() - 1);
    }
}
