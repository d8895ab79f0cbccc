//! Euler sampling of the learned velocity field and rigid pose recovery.

mod io;

pub use io::{read_prediction, write_prediction, PredictionFile, PREDICTION_FORMAT_VERSION};

use nalgebra::Vector3;
use ndarray::{Array1, Array2};

use crate::cond::{
    build_conditions, compute_features, part_permutation, sample_queries, ConditionSet, QuerySet,
};
use crate::data::AssemblySample;
use crate::error::{Error, Result};
use crate::flow::{forward, gaussian_endpoint, sigmoid, structural_heads, ModelParams};
use crate::geom::{apply_transform, kabsch_align, PointCloud, RigidTransform};
use crate::seed::{self, domain};

/// Sigmoid head read-outs are averaged over this many trailing steps.
pub const HEAD_WINDOW: usize = 5;

/// A velocity field on M×3 token states. The trained model is one
/// implementation; tests integrate analytic fields through the same path.
pub trait VelocityField {
    fn velocity(&self, x: &Array2<f64>, t: f64) -> Result<Array2<f64>>;

    /// Head logits at (x, t), when the field has them.
    fn head_logits(&self, _x: &Array2<f64>, _t: f64) -> Result<Option<(Array1<f64>, Array2<f64>)>> {
        Ok(None)
    }
}

/// The trained model evaluated under a fixed conditioning set.
pub struct ModelField<'a> {
    pub params: &'a ModelParams,
    pub cond: &'a ConditionSet,
}

impl VelocityField for ModelField<'_> {
    fn velocity(&self, x: &Array2<f64>, t: f64) -> Result<Array2<f64>> {
        Ok(forward(self.params, x, t, self.cond)?.v_hat)
    }

    fn head_logits(&self, x: &Array2<f64>, t: f64) -> Result<Option<(Array1<f64>, Array2<f64>)>> {
        let fwd = forward(self.params, x, t, self.cond)?;
        let heads = structural_heads(self.params, &fwd.hidden, &self.cond.fragment_map)?;
        Ok(Some((heads.f_logits, heads.a_logits)))
    }
}

/// Raw integration output before pose recovery.
pub struct Integration {
    pub x0_hat: Array2<f64>,
    /// Start state (the Gaussian endpoint with the anchor block replaced).
    pub noise_endpoint: Array2<f64>,
    /// Mean sigmoid fracture probabilities over the head window (empty when
    /// the field has no heads).
    pub f_probs: Vec<f64>,
    /// Mean sigmoid adjacency scores, symmetric (0×0 without heads).
    pub a_scores: Array2<f64>,
}

/// Euler-integrate `field` from `start` over the uniform grid t = 1 → 0,
/// clamping anchor-token velocities to zero. Head logits are read on the
/// trailing [`HEAD_WINDOW`] steps and averaged after the sigmoid.
pub fn euler_integrate(
    field: &dyn VelocityField,
    start: Array2<f64>,
    steps: usize,
    anchor_mask: &[bool],
) -> Result<Integration> {
    if steps == 0 {
        return Err(Error::invalid("steps must be at least 1"));
    }
    let m = start.nrows();
    if anchor_mask.len() != m {
        return Err(Error::invalid("anchor mask length disagrees with state"));
    }
    let noise_endpoint = start.clone();
    let mut x = start;
    let dt = 1.0 / steps as f64;
    let head_from = steps.saturating_sub(HEAD_WINDOW);

    let mut f_acc: Option<Array1<f64>> = None;
    let mut a_acc: Option<Array2<f64>> = None;
    let mut head_reads = 0usize;

    for k in 0..steps {
        let t = 1.0 - k as f64 * dt;
        let mut v = field.velocity(&x, t)?;
        for (r, &anchored) in anchor_mask.iter().enumerate() {
            if anchored {
                for c in 0..3 {
                    v[(r, c)] = 0.0;
                }
            }
        }
        if !v.iter().all(|val| val.is_finite()) {
            return Err(Error::Numeric(format!("non-finite velocity at step {k}")));
        }
        x.scaled_add(-dt, &v);
        if !x.iter().all(|val| val.is_finite()) {
            return Err(Error::Numeric(format!("non-finite state after step {k}")));
        }

        if k >= head_from {
            if let Some((f_logits, a_logits)) = field.head_logits(&x, t - dt)? {
                let f_sig = f_logits.mapv(sigmoid);
                let a_sig = a_logits.mapv(sigmoid);
                match (&mut f_acc, &mut a_acc) {
                    (Some(fa), Some(aa)) => {
                        *fa += &f_sig;
                        *aa += &a_sig;
                    }
                    _ => {
                        f_acc = Some(f_sig);
                        a_acc = Some(a_sig);
                    }
                }
                head_reads += 1;
            }
        }
    }

    let (f_probs, mut a_scores) = match (f_acc, a_acc) {
        (Some(fa), Some(aa)) => {
            let n = head_reads as f64;
            ((fa / n).to_vec(), aa / n)
        }
        _ => (Vec::new(), Array2::zeros((0, 0))),
    };
    // The diagonal never means anything; keep it at zero.
    for i in 0..a_scores.nrows() {
        a_scores[(i, i)] = 0.0;
    }

    Ok(Integration {
        x0_hat: x,
        noise_endpoint,
        f_probs,
        a_scores,
    })
}

/// Draw the Gaussian start for a query set and pin the anchor block at its
/// input-frame coordinates.
pub fn seeded_start(query_set: &QuerySet, sample_seed: u64) -> Array2<f64> {
    let m = query_set.total();
    let mut rng = seed::rng(sample_seed, &[domain::SAMPLE]);
    let mut start = gaussian_endpoint(m, &mut rng);
    for t in query_set.token_range(query_set.anchor_id) {
        let q = query_set.queries[t];
        start[(t, 0)] = q.x;
        start[(t, 1)] = q.y;
        start[(t, 2)] = q.z;
    }
    start
}

/// Per-fragment rigid transforms aligning input-frame queries to their slice
/// of the generated points. Degenerate fragments are flagged and get the
/// identity.
pub fn recover_poses(
    query_set: &QuerySet,
    x0_hat: &Array2<f64>,
) -> Result<(Vec<RigidTransform>, Vec<bool>)> {
    let k = query_set.budgets.len();
    let mut transforms = Vec::with_capacity(k);
    let mut degenerate = Vec::with_capacity(k);
    for f in 0..k {
        let range = query_set.token_range(f);
        let src = PointCloud::new(query_set.queries[range.clone()].to_vec());
        let dst = PointCloud::new(
            range
                .clone()
                .map(|t| Vector3::new(x0_hat[(t, 0)], x0_hat[(t, 1)], x0_hat[(t, 2)]))
                .collect(),
        );
        match kabsch_align(&src, &dst) {
            Ok(t) => {
                transforms.push(t);
                degenerate.push(false);
            }
            Err(Error::DegenerateGeometry(_)) => {
                transforms.push(RigidTransform::identity());
                degenerate.push(true);
            }
            Err(e) => return Err(e),
        }
    }
    Ok((transforms, degenerate))
}

/// Pose every fragment of `sample` by `transforms` (world-frame clouds).
pub fn assemble(sample: &AssemblySample, transforms: &[RigidTransform]) -> Result<Vec<PointCloud>> {
    if transforms.len() != sample.k() {
        return Err(Error::invalid(format!(
            "{} transforms for {} fragments",
            transforms.len(),
            sample.k()
        )));
    }
    Ok(sample
        .fragments
        .iter()
        .zip(transforms)
        .map(|(f, t)| apply_transform(&f.points, t))
        .collect())
}

/// Union of world-frame clouds (points only).
pub fn union_cloud(clouds: &[PointCloud]) -> PointCloud {
    let mut points = Vec::with_capacity(clouds.iter().map(|c| c.len()).sum());
    for c in clouds {
        points.extend_from_slice(&c.points);
    }
    PointCloud::new(points)
}

/// Full generation pass on one object.
pub struct SampleResult {
    pub object_id: String,
    pub query_set: QuerySet,
    pub x0_hat: Array2<f64>,
    pub noise_endpoint: Array2<f64>,
    pub f_probs: Vec<f64>,
    pub a_scores: Array2<f64>,
    pub transforms: Vec<RigidTransform>,
    pub degenerate: Vec<bool>,
    pub assembled: Vec<PointCloud>,
}

/// Seeds for one object's generation pass, normally derived from the master
/// seed and the object index.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct SampleSeeds {
    pub query_seed: u64,
    pub perm_seed: u64,
    pub noise_seed: u64,
}

impl SampleSeeds {
    pub fn derive(master_seed: u64, object_index: u64) -> Self {
        SampleSeeds {
            query_seed: seed::subseed(master_seed, &[domain::QUERY, object_index]),
            perm_seed: seed::subseed(master_seed, &[domain::PART_PERM, object_index]),
            noise_seed: seed::subseed(master_seed, &[domain::SAMPLE, object_index]),
        }
    }
}

/// Build the conditioning for a sample with fixed seeds (shared between the
/// first pass and refinement).
pub fn condition_sample(
    params: &ModelParams,
    sample: &AssemblySample,
    queries: usize,
    seeds: &SampleSeeds,
) -> Result<(QuerySet, ConditionSet)> {
    let cfg = &params.config;
    let query_set = sample_queries(sample, queries, seeds.query_seed)?;
    let features = compute_features(sample, &query_set, cfg.bands, cfg.neighbors)?;
    let perm = part_permutation(cfg.part_table, sample.k(), seeds.perm_seed)?;
    let cond = build_conditions(
        &query_set,
        &features,
        params.proj.view(),
        params.part_embed.view(),
        params.anchor_embed.view(),
        &perm,
    )?;
    Ok((query_set, cond))
}

/// Complete inference pass: sample, recover poses, assemble.
pub fn sample_object(
    params: &ModelParams,
    sample: &AssemblySample,
    queries: usize,
    steps: usize,
    seeds: &SampleSeeds,
) -> Result<SampleResult> {
    let (query_set, cond) = condition_sample(params, sample, queries, seeds)?;
    let field = ModelField { params, cond: &cond };
    let start = seeded_start(&query_set, seeds.noise_seed);
    let integration = euler_integrate(&field, start, steps, &cond.anchor_mask)?;
    let (transforms, degenerate) = recover_poses(&query_set, &integration.x0_hat)?;
    let assembled = assemble(sample, &transforms)?;
    Ok(SampleResult {
        object_id: sample.object_id.clone(),
        query_set,
        x0_hat: integration.x0_hat,
        noise_endpoint: integration.noise_endpoint,
        f_probs: integration.f_probs,
        a_scores: integration.a_scores,
        transforms,
        degenerate,
        assembled,
    })
}
