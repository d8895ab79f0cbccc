//! Occupancy voxelization over an axis-aligned grid.

use std::collections::HashSet;

use nalgebra::Vector3;

use crate::geom::PointCloud;

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        debug_assert!(min.x < max.x && min.y < max.y && min.z < max.z);
        Aabb { min, max }
    }

    pub fn of_points<'a>(points: impl Iterator<Item = &'a Vector3<f64>>) -> Option<Aabb> {
        let mut min = Vector3::repeat(f64::INFINITY);
        let mut max = Vector3::repeat(f64::NEG_INFINITY);
        let mut any = false;
        for p in points {
            any = true;
            for a in 0..3 {
                min[a] = min[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
        }
        if !any {
            return None;
        }
        // Degenerate extents still need a usable box.
        for a in 0..3 {
            if max[a] - min[a] < 1e-9 {
                min[a] -= 5e-10;
                max[a] += 5e-10;
            }
        }
        Some(Aabb { min, max })
    }

    /// Uniformly inflate each side by `fraction` of its extent.
    pub fn inflated(&self, fraction: f64) -> Aabb {
        let half_growth = (self.max - self.min) * (fraction / 2.0);
        Aabb {
            min: self.min - half_growth,
            max: self.max + half_growth,
        }
    }
}

/// Set of occupied cells on a `resolution`³ grid over `bbox`.
#[derive(Debug, Clone)]
pub struct VoxelSet {
    pub occupied: HashSet<[u32; 3]>,
    pub resolution: u32,
    pub bbox: Aabb,
}

impl VoxelSet {
    pub fn len(&self) -> usize {
        self.occupied.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupied.is_empty()
    }

    /// |self ∩ other| / min(|self|, |other|); 0 when either set is empty.
    pub fn overlap_ratio(&self, other: &VoxelSet) -> f64 {
        if self.is_empty() || other.is_empty() {
            return 0.0;
        }
        let (small, large) = if self.len() <= other.len() {
            (self, other)
        } else {
            (other, self)
        };
        let inter = small
            .occupied
            .iter()
            .filter(|c| large.occupied.contains(*c))
            .count();
        inter as f64 / small.len() as f64
    }
}

/// Grid index of a point; out-of-box coordinates clamp to boundary cells and
/// points on the max face clamp into the last cell.
pub fn voxel_index(p: &Vector3<f64>, resolution: u32, bbox: &Aabb) -> [u32; 3] {
    let mut idx = [0u32; 3];
    for a in 0..3 {
        let extent = bbox.max[a] - bbox.min[a];
        let cell = ((p[a] - bbox.min[a]) / extent * resolution as f64).floor();
        idx[a] = cell.clamp(0.0, (resolution - 1) as f64) as u32;
    }
    idx
}

/// A voxel is occupied iff at least one point falls in it.
pub fn voxelize(cloud: &PointCloud, resolution: u32, bbox: &Aabb) -> VoxelSet {
    debug_assert!(resolution >= 2);
    let occupied = cloud
        .points
        .iter()
        .map(|p| voxel_index(p, resolution, bbox))
        .collect();
    VoxelSet {
        occupied,
        resolution,
        bbox: *bbox,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn unit_box() -> Aabb {
        Aabb::new(Vector3::zeros(), Vector3::new(1.0, 1.0, 1.0))
    }

    #[test]
    fn single_center_point_occupies_one_cell() {
        let cloud = PointCloud::new(vec![Vector3::new(0.5, 0.5, 0.5)]);
        let v = voxelize(&cloud, 2, &unit_box());
        assert_eq!(v.len(), 1);
    }

    #[test]
    fn same_cell_is_idempotent() {
        let cloud = PointCloud::new(vec![
            Vector3::new(0.1, 0.1, 0.1),
            Vector3::new(0.2, 0.15, 0.05),
        ]);
        let v = voxelize(&cloud, 2, &unit_box());
        assert_eq!(v.len(), 1);
    }

    #[test]
    fn matches_floor_index_oracle() {
        let mut rng = crate::seed::rng_from(21);
        let cloud = PointCloud::new(
            (0..1000)
                .map(|_| Vector3::new(rng.gen(), rng.gen(), rng.gen()))
                .collect(),
        );
        let v = voxelize(&cloud, 4, &unit_box());
        let oracle: HashSet<[u32; 3]> = cloud
            .points
            .iter()
            .map(|p| {
                let f = |x: f64| ((x * 4.0).floor() as i64).clamp(0, 3) as u32;
                [f(p.x), f(p.y), f(p.z)]
            })
            .collect();
        assert_eq!(v.occupied, oracle);
    }

    #[test]
    fn clamps_max_face_and_outliers() {
        let cloud = PointCloud::new(vec![
            Vector3::new(1.0, 1.0, 1.0),
            Vector3::new(2.0, -1.0, 0.5),
        ]);
        let v = voxelize(&cloud, 4, &unit_box());
        assert!(v.occupied.contains(&[3, 3, 3]));
        assert!(v.occupied.contains(&[3, 0, 2]));
    }

    #[test]
    fn self_overlap_is_one() {
        let mut rng = crate::seed::rng_from(22);
        let cloud = PointCloud::new(
            (0..200)
                .map(|_| Vector3::new(rng.gen(), rng.gen(), rng.gen()))
                .collect(),
        );
        let v = voxelize(&cloud, 8, &unit_box());
        assert_eq!(v.overlap_ratio(&v), 1.0);
    }
}
