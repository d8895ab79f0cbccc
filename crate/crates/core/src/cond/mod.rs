//! Point-aligned conditioning: query sampling, positional encoding, local
//! geometry tokens, part and anchor embeddings.

mod encode;
mod token;

pub use encode::{fourier_encode, fourier_encode_scalar};
pub use token::{local_descriptor, local_token, LocalDescriptor, TOKEN_DIM};

use nalgebra::Vector3;
use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;

use crate::data::AssemblySample;
use crate::error::{Error, Result};
use crate::geom::{allocate_budget, fps_sample};
use crate::par;
use crate::seed::{self, domain};

/// Per-fragment query floor (keeps tiny fragments representable and pose
/// recovery well-posed).
pub const QUERY_FLOOR: usize = 8;
/// Fourier bands for coordinates and normals.
pub const DEFAULT_BANDS: usize = 8;
/// Neighborhood size for the local descriptor.
pub const DEFAULT_NEIGHBORS: usize = 16;

/// Fixed-budget query points sampled from each fragment, flat in
/// fragment-major order.
#[derive(Debug, Clone)]
pub struct QuerySet {
    pub budgets: Vec<usize>,
    /// Index of each query into its fragment's point list.
    pub indices: Vec<usize>,
    /// Query coordinates in the fragment's input (local) frame.
    pub queries: Vec<Vector3<f64>>,
    pub normals: Vec<Vector3<f64>>,
    /// Token -> fragment id.
    pub fragment_map: Vec<usize>,
    /// Assembled (ground-truth posed) coordinates, training only.
    pub gt_targets: Option<Vec<Vector3<f64>>>,
    /// argmax budget, ties toward the smaller fragment id.
    pub anchor_id: usize,
}

impl QuerySet {
    pub fn total(&self) -> usize {
        self.queries.len()
    }

    /// Token range of one fragment in the flat order.
    pub fn token_range(&self, fragment: usize) -> std::ops::Range<usize> {
        let start: usize = self.budgets[..fragment].iter().sum();
        start..start + self.budgets[fragment]
    }

    pub fn anchor_mask(&self) -> Vec<bool> {
        self.fragment_map.iter().map(|&f| f == self.anchor_id).collect()
    }

    /// Per-token ground-truth fracture flags gathered from the sample.
    pub fn gather_fracture_labels(&self, sample: &AssemblySample) -> Vec<bool> {
        self.fragment_map
            .iter()
            .zip(&self.indices)
            .map(|(&f, &pi)| sample.fracture_labels[f][pi])
            .collect()
    }
}

/// Area-proportional budgets plus per-fragment farthest point sampling over
/// the dense point sets. `gt_targets` are the ground-truth transforms applied
/// to each query.
pub fn sample_queries(sample: &AssemblySample, total: usize, query_seed: u64) -> Result<QuerySet> {
    let k = sample.k();
    if total < QUERY_FLOOR * k {
        return Err(Error::invalid(format!(
            "query budget {total} below floor {QUERY_FLOOR} x {k}"
        )));
    }
    let areas: Vec<f64> = sample.fragments.iter().map(|f| f.area).collect();
    let budgets = allocate_budget(&areas, total, QUERY_FLOOR)?;

    let per_fragment: Vec<Result<Vec<usize>>> = par::map_indexed(&sample.fragments, |i, frag| {
        fps_sample(
            &frag.points,
            budgets[i].min(frag.points.len()),
            seed::subseed(query_seed, &[domain::QUERY, i as u64]),
        )
    });

    let mut indices = Vec::with_capacity(total);
    let mut queries = Vec::with_capacity(total);
    let mut normals = Vec::with_capacity(total);
    let mut fragment_map = Vec::with_capacity(total);
    let mut gt_targets = Vec::with_capacity(total);
    for (i, picks) in per_fragment.into_iter().enumerate() {
        let picks = picks?;
        if picks.len() != budgets[i] {
            return Err(Error::invalid(format!(
                "fragment {i} has {} points for a budget of {}",
                sample.fragments[i].points.len(),
                budgets[i]
            )));
        }
        let frag = &sample.fragments[i];
        let frag_normals = frag
            .points
            .normals
            .as_ref()
            .ok_or_else(|| Error::invalid("fragment has no normals"))?;
        for &pi in &picks {
            indices.push(pi);
            queries.push(frag.points.points[pi]);
            normals.push(frag_normals[pi]);
            fragment_map.push(i);
            gt_targets.push(sample.gt_transforms[i].apply_point(&frag.points.points[pi]));
        }
    }

    let mut anchor_id = 0;
    for (i, &b) in budgets.iter().enumerate() {
        if b > budgets[anchor_id] {
            anchor_id = i;
        }
    }

    Ok(QuerySet {
        budgets,
        indices,
        queries,
        normals,
        fragment_map,
        gt_targets: Some(gt_targets),
        anchor_id,
    })
}

/// Raw per-token feature rows `[z; γ(q); γ(n)]`.
pub fn compute_features(
    sample: &AssemblySample,
    query_set: &QuerySet,
    bands: usize,
    neighbors: usize,
) -> Result<Array2<f64>> {
    let m = query_set.total();
    let width = TOKEN_DIM + 2 * 6 * bands;
    let rows: Vec<Result<Vec<f64>>> = par::map_indexed(&query_set.queries, |t, q| {
        let frag = &sample.fragments[query_set.fragment_map[t]];
        let k = neighbors.min(frag.points.len());
        let z = local_token(frag, query_set.indices[t], k)?;
        let mut row = Vec::with_capacity(width);
        row.extend_from_slice(&z);
        row.extend(fourier_encode(q, bands));
        row.extend(fourier_encode(&query_set.normals[t], bands));
        Ok(row)
    });
    let mut feats = Array2::zeros((m, width));
    for (t, row) in rows.into_iter().enumerate() {
        let row = row?;
        for (c, v) in row.into_iter().enumerate() {
            feats[(t, c)] = v;
        }
    }
    Ok(feats)
}

/// Seeded random assignment of fragment ids to embedding-table rows. The same
/// geometric fragment gets a different row across epochs, so the table cannot
/// memorize id -> pose correlations.
pub fn part_permutation(table_size: usize, k: usize, perm_seed: u64) -> Result<Vec<usize>> {
    if k > table_size {
        return Err(Error::invalid(format!(
            "{k} fragments exceed the embedding table ({table_size})"
        )));
    }
    let mut rows: Vec<usize> = (0..table_size).collect();
    let mut rng = seed::rng(perm_seed, &[domain::PART_PERM]);
    rows.shuffle(&mut rng);
    rows.truncate(k);
    Ok(rows)
}

/// Conditioning tokens plus everything needed to backpropagate into the
/// projection and embedding parameters.
#[derive(Debug, Clone)]
pub struct ConditionSet {
    /// M×D condition tokens.
    pub tokens: Array2<f64>,
    /// M×F raw feature rows (cached for gradients).
    pub features: Array2<f64>,
    pub fragment_map: Vec<usize>,
    /// Token -> embedding-table row.
    pub part_rows: Vec<usize>,
    pub anchor_id: usize,
    pub anchor_mask: Vec<bool>,
}

impl ConditionSet {
    pub fn total(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn width(&self) -> usize {
        self.tokens.ncols()
    }
}

/// `c = proj(features) + e[part] (+ anchor embedding on anchor tokens)`.
///
/// `proj` is D×F, `part_embed` is table×D, `anchor_embed` is D.
pub fn build_conditions(
    query_set: &QuerySet,
    features: &Array2<f64>,
    proj: ArrayView2<f64>,
    part_embed: ArrayView2<f64>,
    anchor_embed: ArrayView1<f64>,
    part_perm: &[usize],
) -> Result<ConditionSet> {
    let m = query_set.total();
    let width = proj.nrows();
    if features.nrows() != m {
        return Err(Error::invalid("feature rows disagree with query count"));
    }
    if proj.ncols() != features.ncols() {
        return Err(Error::invalid(format!(
            "projection expects {} features, got {}",
            proj.ncols(),
            features.ncols()
        )));
    }
    if part_embed.ncols() != width || anchor_embed.len() != width {
        return Err(Error::invalid("embedding width disagrees with projection"));
    }
    if part_perm.len() != query_set.budgets.len() {
        return Err(Error::invalid("part permutation length disagrees with K"));
    }
    if let Some(&bad) = part_perm.iter().find(|&&r| r >= part_embed.nrows()) {
        return Err(Error::invalid(format!("part row {bad} outside embedding table")));
    }

    let mut tokens = features.dot(&proj.t());
    let anchor_mask = query_set.anchor_mask();
    let part_rows: Vec<usize> = query_set.fragment_map.iter().map(|&f| part_perm[f]).collect();
    for t in 0..m {
        let e = part_embed.row(part_rows[t]);
        let mut row = tokens.row_mut(t);
        row += &e;
        if anchor_mask[t] {
            row += &anchor_embed;
        }
    }

    Ok(ConditionSet {
        tokens,
        features: features.clone(),
        fragment_map: query_set.fragment_map.clone(),
        part_rows,
        anchor_id: query_set.anchor_id,
        anchor_mask,
    })
}
