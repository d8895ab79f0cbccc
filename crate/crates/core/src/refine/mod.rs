//! Inference-time structure-guided refinement: verify candidate contact
//! edges geometrically, anchor the verified substructures, and resample the
//! rest with RePaint-style blending.

mod repaint;
mod report;
mod unionfind;
mod verify;

pub use repaint::{blend_known, repaint_integrate};
pub use report::{write_refine_report, RefineReport};
pub use unionfind::UnionFind;
pub use verify::{verify_edges, EdgeReport};

use nalgebra::Vector3;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{Adjacency, AssemblySample};
use crate::error::{Error, Result};
use crate::geom::RigidTransform;
use crate::sampler::{
    assemble, condition_sample, recover_poses, ModelField, SampleResult, SampleSeeds,
};
use crate::seed::{self, domain};

/// Refinement thresholds. Defaults are desk-scale values chosen against
/// generated data; every one of them is sweepable from the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineConfig {
    /// Candidate edges require an adjacency score above this.
    pub edge_threshold: f64,
    /// Interpenetration rejection threshold τ_o on the voxel overlap ratio.
    /// Surface-sampled fragments in honest contact share their entire
    /// cross-section's voxels, so valid contacts measure well above zero;
    /// co-located duplicates measure 1.0.
    pub overlap_ratio_max: f64,
    pub voxel_resolution: u32,
    /// Chebyshev voxel distance within which fracture voxels count as covered.
    pub coverage_tolerance: u32,
    /// Minimum covered fraction, required in both directions.
    pub coverage_fraction: f64,
    /// Components below this many fragments are not stabilized.
    pub min_component_size: usize,
    /// Blend strength α.
    pub blend_alpha: f64,
    /// Resampling repeats U on the first half of the grid.
    pub resample_repeats: usize,
    /// Tokens with fracture probability above this form F^v.
    pub fracture_threshold: f64,
    /// Assembly bounding box inflation before voxelization.
    pub bbox_inflation: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            edge_threshold: 0.5,
            overlap_ratio_max: 0.7,
            voxel_resolution: 64,
            coverage_tolerance: 1,
            coverage_fraction: 0.3,
            min_component_size: 2,
            blend_alpha: 0.5,
            resample_repeats: 2,
            fracture_threshold: 0.5,
            bbox_inflation: 0.05,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.overlap_ratio_max > 0.0 && self.overlap_ratio_max < 1.0) {
            return Err(Error::invalid("overlap threshold outside (0,1)"));
        }
        if !(0.0..=1.0).contains(&self.blend_alpha) {
            return Err(Error::invalid("alpha outside [0,1]"));
        }
        if self.voxel_resolution < 8 {
            return Err(Error::invalid("voxel resolution below 8"));
        }
        if !(0.0..=1.0).contains(&self.coverage_fraction)
            || !(0.0..=1.0).contains(&self.fracture_threshold)
            || !(0.0..=1.0).contains(&self.edge_threshold)
        {
            return Err(Error::invalid("fractional threshold outside [0,1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefineMode {
    Repaint,
    Freeze,
    OracleAdjacency,
}

impl RefineMode {
    pub fn parse(name: &str) -> Result<RefineMode> {
        match name {
            "repaint" => Ok(RefineMode::Repaint),
            "freeze" => Ok(RefineMode::Freeze),
            "oracle-adjacency" => Ok(RefineMode::OracleAdjacency),
            other => Err(Error::invalid(format!("unknown refine mode `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            RefineMode::Repaint => "repaint",
            RefineMode::Freeze => "freeze",
            RefineMode::OracleAdjacency => "oracle-adjacency",
        }
    }
}

/// First-pass artifacts the refinement consumes.
pub struct FirstPass {
    pub x_ref: Array2<f64>,
    pub transforms: Vec<RigidTransform>,
    pub a_scores: Array2<f64>,
    pub f_probs: Vec<f64>,
    pub seeds: SampleSeeds,
    pub steps: usize,
}

impl FirstPass {
    pub fn from_result(result: &SampleResult, seeds: &SampleSeeds, steps: usize) -> FirstPass {
        FirstPass {
            x_ref: result.x0_hat.clone(),
            transforms: result.transforms.clone(),
            a_scores: result.a_scores.clone(),
            f_probs: result.f_probs.clone(),
            seeds: *seeds,
            steps,
        }
    }
}

/// Undirected candidate edges with score strictly above the threshold.
pub fn candidate_edges(a_scores: &Array2<f64>, threshold: f64) -> Vec<(usize, usize, f64)> {
    let k = a_scores.nrows();
    let mut out = Vec::new();
    for i in 0..k {
        for j in (i + 1)..k {
            if a_scores[(i, j)] > threshold {
                out.push((i, j, a_scores[(i, j)]));
            }
        }
    }
    out
}

/// Token mask of fragments in kept components of at least `min_size`.
pub fn stable_mask(
    kept_edges: &[(usize, usize)],
    budgets: &[usize],
    min_size: usize,
) -> (Vec<bool>, Vec<Vec<usize>>) {
    let k = budgets.len();
    let mut uf = UnionFind::new(k);
    for &(i, j) in kept_edges {
        uf.union(i, j);
    }
    let components: Vec<Vec<usize>> = uf
        .components()
        .into_iter()
        .filter(|c| c.len() >= min_size && c.iter().any(|f| kept_edges.iter().any(|&(a, b)| a == *f || b == *f)))
        .collect();
    let mut stable_fragment = vec![false; k];
    for comp in &components {
        for &f in comp {
            stable_fragment[f] = true;
        }
    }
    let mut mask = Vec::with_capacity(budgets.iter().sum());
    for (f, &b) in budgets.iter().enumerate() {
        mask.extend(std::iter::repeat(stable_fragment[f]).take(b));
    }
    (mask, components)
}

/// Refined result plus the verification report.
pub struct RefineOutcome {
    pub result: SampleResult,
    pub report: RefineReport,
}

/// Full refinement pass.
///
/// `gt_adjacency` is consulted only in oracle mode, where it replaces the
/// predicted score matrix before verification (diagnostic).
#[allow(clippy::too_many_arguments)]
pub fn refine_pipeline(
    params: &crate::flow::ModelParams,
    sample: &AssemblySample,
    first: &FirstPass,
    config: &RefineConfig,
    mode: RefineMode,
    refine_seed: u64,
    gt_adjacency: Option<&Adjacency>,
) -> Result<RefineOutcome> {
    config.validate()?;
    let queries: usize = first.x_ref.nrows();
    let (query_set, cond) = condition_sample(params, sample, queries, &first.seeds)?;
    if query_set.total() != first.x_ref.nrows() {
        return Err(Error::invalid(
            "first-pass state size disagrees with reconstructed queries",
        ));
    }

    // Candidate edges from the predicted scores, or ground truth in oracle mode.
    let scores = match mode {
        RefineMode::OracleAdjacency => {
            let gt = gt_adjacency
                .ok_or_else(|| Error::invalid("oracle mode requires ground-truth adjacency"))?;
            let k = gt.k();
            let mut s = Array2::zeros((k, k));
            for i in 0..k {
                for j in 0..k {
                    if gt.get(i, j) {
                        s[(i, j)] = 1.0;
                    }
                }
            }
            s
        }
        _ => first.a_scores.clone(),
    };
    let cands = candidate_edges(&scores, config.edge_threshold);

    // Verification inputs: posed full clouds and posed fracture-predicted queries.
    let assembled_first = assemble(sample, &first.transforms)?;
    let k = sample.k();
    let mut fracture_points: Vec<Vec<Vector3<f64>>> = vec![Vec::new(); k];
    for (t, &frag) in query_set.fragment_map.iter().enumerate() {
        let prob = first.f_probs.get(t).copied().unwrap_or(0.0);
        if prob > config.fracture_threshold {
            fracture_points[frag].push(first.transforms[frag].apply_point(&query_set.queries[t]));
        }
    }
    let (kept, edge_reports) = verify_edges(&assembled_first, &fracture_points, &cands, config);
    let (mask, components) = stable_mask(&kept, &query_set.budgets, config.min_component_size);

    // Second pass.
    let (alpha, repeats) = match mode {
        RefineMode::Freeze => (1.0, 1),
        _ => (config.blend_alpha, config.resample_repeats),
    };
    let mut rng = seed::rng(refine_seed, &[domain::REFINE]);
    let start = {
        // Fresh noise endpoint with the anchor block pinned, drawn from the
        // refine stream.
        let mut s = crate::flow::gaussian_endpoint(query_set.total(), &mut rng);
        for t in query_set.token_range(query_set.anchor_id) {
            let q = query_set.queries[t];
            s[(t, 0)] = q.x;
            s[(t, 1)] = q.y;
            s[(t, 2)] = q.z;
        }
        s
    };
    let field = ModelField {
        params,
        cond: &cond,
    };
    let integration = repaint_integrate(
        &field,
        start,
        &first.x_ref,
        &mask,
        alpha,
        repeats,
        first.steps,
        &cond.anchor_mask,
        &mut rng,
    )?;

    let (mut transforms, degenerate) = recover_poses(&query_set, &integration.x0_hat)?;
    if mode == RefineMode::Freeze {
        // Stable fragments keep their first-pass poses verbatim.
        let mut offset = 0;
        for (f, &b) in query_set.budgets.iter().enumerate() {
            if mask[offset] {
                transforms[f] = first.transforms[f];
            }
            offset += b;
        }
    }
    let assembled = assemble(sample, &transforms)?;

    let mask_tokens = mask.iter().filter(|&&m| m).count();
    let report = RefineReport {
        object_id: sample.object_id.clone(),
        mode: mode.name().to_string(),
        config: config.clone(),
        candidates: cands.len(),
        edges: edge_reports,
        components: components.clone(),
        mask_tokens,
        total_tokens: mask.len(),
    };

    let result = SampleResult {
        object_id: sample.object_id.clone(),
        query_set,
        x0_hat: integration.x0_hat,
        noise_endpoint: integration.noise_endpoint,
        // Structural read-outs are not refreshed by the second pass; the
        // first-pass predictions remain authoritative.
        f_probs: first.f_probs.clone(),
        a_scores: first.a_scores.clone(),
        transforms,
        degenerate,
        assembled,
    };
    Ok(RefineOutcome { result, report })
}
