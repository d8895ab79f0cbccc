//! Minimal static kd-tree for nearest-neighbor queries.
//!
//! Built once over a point slice; queries return squared distances. The tree
//! stores indices into the original slice, so callers can map hits back to
//! their own per-point data.

use nalgebra::Vector3;

struct Node {
    /// Index into `order` of the splitting point.
    point: u32,
    axis: u8,
    left: i32,
    right: i32,
}

pub struct KdTree<'a> {
    points: &'a [Vector3<f64>],
    nodes: Vec<Node>,
    root: i32,
}

const LEAF: i32 = -1;

impl<'a> KdTree<'a> {
    pub fn build(points: &'a [Vector3<f64>]) -> Self {
        assert!(!points.is_empty(), "kd-tree over empty slice");
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = Self::build_rec(points, &mut order, 0, &mut nodes);
        KdTree {
            points,
            nodes,
            root,
        }
    }

    fn build_rec(
        points: &[Vector3<f64>],
        order: &mut [u32],
        depth: usize,
        nodes: &mut Vec<Node>,
    ) -> i32 {
        if order.is_empty() {
            return LEAF;
        }
        let axis = (depth % 3) as u8;
        let mid = order.len() / 2;
        order.select_nth_unstable_by(mid, |&a, &b| {
            let va = points[a as usize][axis as usize];
            let vb = points[b as usize][axis as usize];
            va.partial_cmp(&vb).unwrap().then(a.cmp(&b))
        });
        let point = order[mid];
        let node_idx = nodes.len() as i32;
        nodes.push(Node {
            point,
            axis,
            left: LEAF,
            right: LEAF,
        });
        let (lo, hi) = order.split_at_mut(mid);
        let left = Self::build_rec(points, lo, depth + 1, nodes);
        let right = Self::build_rec(points, &mut hi[1..], depth + 1, nodes);
        nodes[node_idx as usize].left = left;
        nodes[node_idx as usize].right = right;
        node_idx
    }

    /// Nearest neighbor of `q`: `(index, squared distance)`.
    pub fn nearest(&self, q: &Vector3<f64>) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(self.root, q, &mut best, f64::NEG_INFINITY);
        best
    }

    /// Nearest squared distance, abandoning the search as soon as any point
    /// within `cutoff_sq` is found. Returns the best squared distance seen
    /// (exact when below the cutoff, an upper bound otherwise).
    pub fn nearest_within(&self, q: &Vector3<f64>, cutoff_sq: f64) -> f64 {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(self.root, q, &mut best, cutoff_sq);
        best.1
    }

    fn search(&self, node: i32, q: &Vector3<f64>, best: &mut (usize, f64), cutoff_sq: f64) {
        if node == LEAF || best.1 <= cutoff_sq {
            return;
        }
        let n = &self.nodes[node as usize];
        let p = &self.points[n.point as usize];
        let d2 = (p - q).norm_squared();
        if d2 < best.1 {
            *best = (n.point as usize, d2);
        }
        let delta = q[n.axis as usize] - p[n.axis as usize];
        let (near, far) = if delta < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        self.search(near, q, best, cutoff_sq);
        if delta * delta < best.1 {
            self.search(far, q, best, cutoff_sq);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn matches_brute_force() {
        let mut rng = crate::seed::rng_from(42);
        let pts: Vec<Vector3<f64>> = (0..300)
            .map(|_| Vector3::new(rng.gen(), rng.gen(), rng.gen()))
            .collect();
        let tree = KdTree::build(&pts);
        for _ in 0..200 {
            let q = Vector3::new(rng.gen(), rng.gen(), rng.gen());
            let (_, d2) = tree.nearest(&q);
            let brute = pts
                .iter()
                .map(|p| (p - q).norm_squared())
                .fold(f64::INFINITY, f64::min);
            assert_eq!(d2, brute);
        }
    }

    #[test]
    fn cutoff_detects_close_points() {
        let pts = vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0)];
        let tree = KdTree::build(&pts);
        let d2 = tree.nearest_within(&Vector3::new(0.005, 0.0, 0.0), 1e-4);
        assert!(d2 <= 1e-4);
    }
}
