//! Structural ground truth from posed fragments: per-point fracture-surface
//! labels and the contact adjacency matrix.

use crate::data::Adjacency;
use crate::geom::{KdTree, PointCloud};
use crate::par;

/// Label every point whose nearest neighbor on any other fragment is within
/// `eps_f`, and connect fragments whose minimum inter-surface distance is
/// below `eps_adj`. Fragments must already be posed in a shared frame.
pub fn label_structure(
    posed: &[PointCloud],
    eps_f: f64,
    eps_adj: f64,
) -> (Vec<Vec<bool>>, Adjacency) {
    let k = posed.len();
    let trees: Vec<KdTree> = posed.iter().map(|c| KdTree::build(&c.points)).collect();
    let eps_f_sq = eps_f * eps_f;
    let eps_adj_sq = eps_adj * eps_adj;

    // Per fragment: labels plus the row of pairwise minimum distances.
    let per_fragment: Vec<(Vec<bool>, Vec<f64>)> = par::map_indexed(posed, |i, cloud| {
        let mut labels = vec![false; cloud.len()];
        let mut row_min = vec![f64::INFINITY; k];
        for (pi, p) in cloud.points.iter().enumerate() {
            for (j, tree) in trees.iter().enumerate() {
                if j == i {
                    continue;
                }
                let d2 = tree.nearest_within(p, eps_f_sq);
                if d2 < row_min[j] {
                    row_min[j] = d2;
                }
                if d2 <= eps_f_sq {
                    labels[pi] = true;
                }
            }
        }
        (labels, row_min)
    });

    let mut adjacency = Adjacency::new(k);
    for (i, (_, row)) in per_fragment.iter().enumerate() {
        for j in 0..k {
            if j != i && row[j] < eps_adj_sq {
                adjacency.set(i, j);
            }
        }
    }
    let labels = per_fragment.into_iter().map(|(l, _)| l).collect();
    (labels, adjacency)
}

/// O(N²) reference implementation; must agree with [`label_structure`]
/// exactly on the produced booleans.
pub fn label_structure_brute(
    posed: &[PointCloud],
    eps_f: f64,
    eps_adj: f64,
) -> (Vec<Vec<bool>>, Adjacency) {
    let k = posed.len();
    let eps_f_sq = eps_f * eps_f;
    let eps_adj_sq = eps_adj * eps_adj;
    let mut labels: Vec<Vec<bool>> = posed.iter().map(|c| vec![false; c.len()]).collect();
    let mut adjacency = Adjacency::new(k);
    for i in 0..k {
        for j in 0..k {
            if j == i {
                continue;
            }
            let mut pair_min = f64::INFINITY;
            for (pi, p) in posed[i].points.iter().enumerate() {
                let mut best = f64::INFINITY;
                for q in &posed[j].points {
                    let d2 = (p - q).norm_squared();
                    if d2 < best {
                        best = d2;
                    }
                }
                if best <= eps_f_sq {
                    labels[i][pi] = true;
                }
                if best < pair_min {
                    pair_min = best;
                }
            }
            if pair_min < eps_adj_sq {
                adjacency.set(i, j);
            }
        }
    }
    (labels, adjacency)
}
