//! Fractured-object samples: generation, structural labeling, augmentation
//! and on-disk format.

mod augment;
mod fracture;
mod io;
mod label;
mod shapes;

pub use augment::{augment, random_rotation};
pub use fracture::{fracture_object, fracture_object_with, fracture_with_planes, GenConfig};
pub use io::{import_xyz_object, read_sample, write_sample, DATASET_FORMAT_VERSION};
pub use label::{label_structure, label_structure_brute};
pub use shapes::Shape;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geom::{apply_transform, PointCloud, RigidTransform};

/// Default fracture-surface label tolerance, in object-normalized units.
pub const EPS_FRACTURE: f64 = 0.01;
/// Default adjacency tolerance, in object-normalized units.
pub const EPS_ADJACENCY: f64 = 0.02;
/// Fragment-count bounds for a valid sample.
pub const K_MIN: usize = 2;
pub const K_MAX: usize = 50;

/// One rigid piece in its local (centered) frame.
#[derive(Debug, Clone)]
pub struct Fragment {
    pub id: usize,
    /// Centered point cloud with unit normals.
    pub points: PointCloud,
    /// Surface-area estimate, in object-normalized units squared.
    pub area: f64,
}

/// Symmetric binary contact matrix with a zero diagonal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    k: usize,
    bits: Vec<bool>,
}

impl Adjacency {
    pub fn new(k: usize) -> Self {
        Adjacency {
            k,
            bits: vec![false; k * k],
        }
    }

    pub fn from_edges(k: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj = Adjacency::new(k);
        for &(i, j) in edges {
            if i == j {
                return Err(Error::invalid(format!("self edge ({i},{j})")));
            }
            if i >= k || j >= k {
                return Err(Error::invalid(format!("edge ({i},{j}) out of range for k={k}")));
            }
            if adj.get(i, j) {
                return Err(Error::invalid(format!("duplicate edge ({i},{j})")));
            }
            adj.set(i, j);
        }
        Ok(adj)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.k + j]
    }

    /// Mark both directions; the diagonal is never set.
    pub fn set(&mut self, i: usize, j: usize) {
        if i != j {
            self.bits[i * self.k + j] = true;
            self.bits[j * self.k + i] = true;
        }
    }

    /// Upper-triangle edges in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.k {
            for j in (i + 1)..self.k {
                if self.get(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn degree(&self, i: usize) -> usize {
        (0..self.k).filter(|&j| self.get(i, j)).count()
    }
}

/// A fractured object with ground-truth structure.
#[derive(Debug, Clone)]
pub struct AssemblySample {
    pub object_id: String,
    pub fragments: Vec<Fragment>,
    pub gt_transforms: Vec<RigidTransform>,
    pub adjacency: Adjacency,
    /// Per-fragment, per-point contact-surface flags.
    pub fracture_labels: Vec<Vec<bool>>,
    /// Reference fragment (largest area, ties toward the smaller id); kept
    /// unrotated by augmentation.
    pub anchor_id: usize,
    pub seed: u64,
    pub eps_fracture: f64,
    pub eps_adjacency: f64,
}

impl AssemblySample {
    pub fn k(&self) -> usize {
        self.fragments.len()
    }

    /// Fragments posed by their ground-truth transforms.
    pub fn posed_fragments(&self) -> Vec<PointCloud> {
        self.fragments
            .iter()
            .zip(&self.gt_transforms)
            .map(|(f, t)| apply_transform(&f.points, t))
            .collect()
    }

    /// Anchor designation rule shared by generation and conditioning:
    /// maximum area, ties broken toward the smaller id.
    pub fn designate_anchor(areas: &[f64]) -> usize {
        let mut best = 0;
        for (i, &a) in areas.iter().enumerate() {
            if a > areas[best] {
                best = i;
            }
        }
        best
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if !(K_MIN..=K_MAX).contains(&k) {
            return Err(Error::invalid(format!("fragment count {k} outside [{K_MIN},{K_MAX}]")));
        }
        if self.gt_transforms.len() != k || self.fracture_labels.len() != k {
            return Err(Error::invalid("per-fragment arrays disagree on K"));
        }
        if self.adjacency.k() != k {
            return Err(Error::invalid("adjacency size disagrees with K"));
        }
        if self.anchor_id >= k {
            return Err(Error::invalid("anchor id out of range"));
        }
        for (f, labels) in self.fragments.iter().zip(&self.fracture_labels) {
            f.points.validate()?;
            if labels.len() != f.points.len() {
                return Err(Error::invalid(format!(
                    "fragment {}: {} labels for {} points",
                    f.id,
                    labels.len(),
                    f.points.len()
                )));
            }
            if !(f.area > 0.0) {
                return Err(Error::invalid(format!("fragment {} area {} <= 0", f.id, f.area)));
            }
            let c = f.points.centroid();
            if c.norm() > 1e-6 {
                return Err(Error::invalid(format!(
                    "fragment {} not centered (centroid norm {})",
                    f.id,
                    c.norm()
                )));
            }
        }
        for t in &self.gt_transforms {
            t.validate()?;
        }
        Ok(())
    }

    /// Centroid of the GT-posed union (as a point multiset).
    pub fn posed_union_centroid(&self) -> Vector3<f64> {
        let mut c = Vector3::zeros();
        let mut n = 0usize;
        for (f, t) in self.fragments.iter().zip(&self.gt_transforms) {
            for p in &f.points.points {
                c += t.apply_point(p);
            }
            n += f.points.len();
        }
        c / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adjacency_edges_round_trip() {
        let mut adj = Adjacency::new(4);
        adj.set(0, 2);
        adj.set(3, 1);
        let edges = adj.edges();
        assert_eq!(edges, vec![(0, 2), (1, 3)]);
        let back = Adjacency::from_edges(4, &edges).unwrap();
        assert_eq!(back, adj);
    }

    #[test]
    fn adjacency_rejects_bad_edges() {
        assert!(Adjacency::from_edges(3, &[(1, 1)]).is_err());
        assert!(Adjacency::from_edges(3, &[(0, 3)]).is_err());
        assert!(Adjacency::from_edges(3, &[(0, 1), (1, 0)]).is_err());
    }

    #[test]
    fn anchor_rule_prefers_larger_then_smaller_id() {
        assert_eq!(AssemblySample::designate_anchor(&[1.0, 3.0, 2.0]), 1);
        assert_eq!(AssemblySample::designate_anchor(&[2.0, 2.0]), 0);
    }
}
