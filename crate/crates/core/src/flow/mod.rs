//! The trainable core: a small transformer velocity field over query tokens
//! with fracture and adjacency heads, trained by rectified flow with explicit
//! reverse-mode gradients.

mod checkpoint;
mod linalg;
mod loss;
mod net;
mod optim;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use linalg::{bce_with_logits, matmul, sigmoid, Linear};
pub use loss::{total_loss, LossBreakdown, LossGrads, DEFAULT_LAMBDA_ADJACENCY, DEFAULT_LAMBDA_FRACTURE};
pub use net::{backward, forward, structural_heads, Forward, HeadOutputs};
pub use optim::AdamW;
pub use train::{
    instance_loss, prepare_instance, train, train_step, LossCurvePoint, TrainConfig,
    TrainInstance, TrainReport,
};

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cond::TOKEN_DIM;
use crate::error::{Error, Result};
use crate::seed::{self, domain};

/// Architecture hyperparameters. The desk-scale default trains on a laptop
/// CPU; `paper_preset` mirrors the reference setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Token width D.
    pub width: usize,
    /// Transformer blocks B.
    pub blocks: usize,
    /// Attention heads H (must divide D).
    pub heads: usize,
    /// Feed-forward expansion factor.
    pub ff_mult: usize,
    /// Structural-head attachment layer ℓ_s (1-based).
    pub attach_layer: usize,
    /// Fourier bands for coordinates/normals.
    pub bands: usize,
    /// Fourier bands for the timestep embedding.
    pub t_bands: usize,
    /// Local-descriptor width.
    pub token_dim: usize,
    /// Part-embedding table size (max fragment count).
    pub part_table: usize,
    /// Hidden width of the two structural heads.
    pub head_hidden: usize,
    /// Neighborhood size for the local descriptor.
    pub neighbors: usize,
    pub fracture_head: bool,
    pub adjacency_head: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            width: 128,
            blocks: 4,
            heads: 4,
            ff_mult: 4,
            attach_layer: 4,
            bands: 8,
            t_bands: 8,
            token_dim: TOKEN_DIM,
            part_table: 50,
            head_hidden: 64,
            neighbors: 16,
            fracture_head: true,
            adjacency_head: true,
        }
    }
}

impl ModelConfig {
    /// Reference-scale architecture (12 blocks).
    pub fn paper_preset() -> Self {
        ModelConfig {
            blocks: 12,
            ..ModelConfig::default()
        }
    }

    /// Width of a conditioning feature row `[z; γ(q); γ(n)]`.
    pub fn feature_dim(&self) -> usize {
        self.token_dim + 2 * 6 * self.bands
    }

    /// Width of the x-encoding `[x; γ(x)]`.
    pub fn x_dim(&self) -> usize {
        3 + 6 * self.bands
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.heads == 0 || self.width % self.heads != 0 {
            return Err(Error::invalid(format!(
                "width {} not divisible by heads {}",
                self.width, self.heads
            )));
        }
        if self.blocks == 0 || !(1..=self.blocks).contains(&self.attach_layer) {
            return Err(Error::invalid(format!(
                "attach layer {} outside [1, {}]",
                self.attach_layer, self.blocks
            )));
        }
        if self.bands == 0 || self.t_bands == 0 || self.token_dim != TOKEN_DIM {
            return Err(Error::invalid("bad encoding dimensions"));
        }
        if self.part_table == 0 || self.head_hidden == 0 || self.ff_mult == 0 {
            return Err(Error::invalid("zero-sized submodule"));
        }
        if self.neighbors < 3 {
            return Err(Error::invalid("descriptor neighborhood too small"));
        }
        Ok(())
    }
}

/// Per-block parameters.
#[derive(Debug, Clone)]
pub struct BlockParams {
    pub ln1_gain: Array1<f64>,
    pub ln1_bias: Array1<f64>,
    /// t_vec -> (scale, shift) for the attention sub-layer.
    pub mod1: Linear,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub ln2_gain: Array1<f64>,
    pub ln2_bias: Array1<f64>,
    pub mod2: Linear,
    pub ff1: Linear,
    pub ff2: Linear,
}

/// Full parameter record. Also serves as the gradient record: `backward`
/// returns a `ModelParams` holding d(total)/d(parameter) in every slot.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// Eq-style conditioning projection φ: width × feature_dim.
    pub proj: Array2<f64>,
    /// Part-embedding table: part_table × width.
    pub part_embed: Array2<f64>,
    pub anchor_embed: Array1<f64>,
    /// x-encoding projection: width × x_dim.
    pub x_proj: Linear,
    /// Timestep embedding: width × 2·t_bands.
    pub t_proj: Linear,
    pub blocks: Vec<BlockParams>,
    pub final_ln_gain: Array1<f64>,
    pub final_ln_bias: Array1<f64>,
    /// Velocity head: 3 × width.
    pub out_head: Linear,
    pub frac1: Linear,
    pub frac2: Linear,
    pub adj1: Linear,
    pub adj2: Linear,
}

impl ModelParams {
    /// Deterministic seeded initialization. Weights are normal with
    /// 1/sqrt(fan_in) scale; the velocity head and the per-block modulation
    /// layers start at zero so the initial field is identically zero.
    pub fn init(config: &ModelConfig, init_seed: u64) -> Result<ModelParams> {
        config.validate()?;
        let mut rng = seed::rng(init_seed, &[domain::INIT]);
        let d = config.width;
        let mut normal = |out_dim: usize, in_dim: usize, scale: f64| -> Linear {
            let w = Array2::from_shape_fn((out_dim, in_dim), |_| {
                rng.sample::<f64, _>(StandardNormal) * scale
            });
            Linear {
                w,
                b: Array1::zeros(out_dim),
            }
        };
        let fan = |n: usize| 1.0 / (n as f64).sqrt();

        let proj = normal(d, config.feature_dim(), fan(config.feature_dim())).w;
        let x_proj = normal(d, config.x_dim(), fan(config.x_dim()));
        let t_proj = normal(d, 2 * config.t_bands, fan(2 * config.t_bands));
        let blocks = (0..config.blocks)
            .map(|_| BlockParams {
                ln1_gain: Array1::ones(d),
                ln1_bias: Array1::zeros(d),
                mod1: Linear::zeros(2 * d, d),
                wq: normal(d, d, fan(d)),
                wk: normal(d, d, fan(d)),
                wv: normal(d, d, fan(d)),
                wo: normal(d, d, fan(d)),
                ln2_gain: Array1::ones(d),
                ln2_bias: Array1::zeros(d),
                mod2: Linear::zeros(2 * d, d),
                ff1: normal(config.ff_mult * d, d, fan(d)),
                ff2: normal(d, config.ff_mult * d, fan(config.ff_mult * d)),
            })
            .collect();

        let embed_scale = 0.02;
        let frac1 = normal(config.head_hidden, d, fan(d));
        let frac2 = normal(1, config.head_hidden, embed_scale);
        let adj1 = normal(config.head_hidden, 2 * d, fan(2 * d));
        let adj2 = normal(1, config.head_hidden, embed_scale);
        let part_embed = Array2::from_shape_fn((config.part_table, d), |_| {
            rng.sample::<f64, _>(StandardNormal) * embed_scale
        });
        let anchor_embed = Array1::from_shape_fn(d, |_| {
            rng.sample::<f64, _>(StandardNormal) * embed_scale
        });

        Ok(ModelParams {
            proj,
            part_embed,
            anchor_embed,
            x_proj,
            t_proj,
            final_ln_gain: Array1::ones(d),
            final_ln_bias: Array1::zeros(d),
            out_head: Linear::zeros(3, d),
            frac1,
            frac2,
            adj1,
            adj2,
            blocks,
            config: config.clone(),
        })
    }

    /// All-zero record with the same shapes (gradient accumulator).
    pub fn zeros_like(&self) -> ModelParams {
        let mut out = self.clone();
        out.for_each_tensor_mut(|_, t| match t {
            TensorMut::M(m) => m.fill(0.0),
            TensorMut::V(v) => v.fill(0.0),
        });
        out
    }

    /// Visit every tensor in the canonical flattening order.
    pub fn for_each_tensor(&self, mut f: impl FnMut(&str, TensorRef)) {
        f("proj", TensorRef::M(&self.proj));
        f("part_embed", TensorRef::M(&self.part_embed));
        f("anchor_embed", TensorRef::V(&self.anchor_embed));
        f("x_proj.w", TensorRef::M(&self.x_proj.w));
        f("x_proj.b", TensorRef::V(&self.x_proj.b));
        f("t_proj.w", TensorRef::M(&self.t_proj.w));
        f("t_proj.b", TensorRef::V(&self.t_proj.b));
        for (i, b) in self.blocks.iter().enumerate() {
            let name = |part: &str| format!("block{i}.{part}");
            f(&name("ln1_gain"), TensorRef::V(&b.ln1_gain));
            f(&name("ln1_bias"), TensorRef::V(&b.ln1_bias));
            f(&name("mod1.w"), TensorRef::M(&b.mod1.w));
            f(&name("mod1.b"), TensorRef::V(&b.mod1.b));
            f(&name("wq.w"), TensorRef::M(&b.wq.w));
            f(&name("wq.b"), TensorRef::V(&b.wq.b));
            f(&name("wk.w"), TensorRef::M(&b.wk.w));
            f(&name("wk.b"), TensorRef::V(&b.wk.b));
            f(&name("wv.w"), TensorRef::M(&b.wv.w));
            f(&name("wv.b"), TensorRef::V(&b.wv.b));
            f(&name("wo.w"), TensorRef::M(&b.wo.w));
            f(&name("wo.b"), TensorRef::V(&b.wo.b));
            f(&name("ln2_gain"), TensorRef::V(&b.ln2_gain));
            f(&name("ln2_bias"), TensorRef::V(&b.ln2_bias));
            f(&name("mod2.w"), TensorRef::M(&b.mod2.w));
            f(&name("mod2.b"), TensorRef::V(&b.mod2.b));
            f(&name("ff1.w"), TensorRef::M(&b.ff1.w));
            f(&name("ff1.b"), TensorRef::V(&b.ff1.b));
            f(&name("ff2.w"), TensorRef::M(&b.ff2.w));
            f(&name("ff2.b"), TensorRef::V(&b.ff2.b));
        }
        f("final_ln_gain", TensorRef::V(&self.final_ln_gain));
        f("final_ln_bias", TensorRef::V(&self.final_ln_bias));
        f("out_head.w", TensorRef::M(&self.out_head.w));
        f("out_head.b", TensorRef::V(&self.out_head.b));
        f("frac1.w", TensorRef::M(&self.frac1.w));
        f("frac1.b", TensorRef::V(&self.frac1.b));
        f("frac2.w", TensorRef::M(&self.frac2.w));
        f("frac2.b", TensorRef::V(&self.frac2.b));
        f("adj1.w", TensorRef::M(&self.adj1.w));
        f("adj1.b", TensorRef::V(&self.adj1.b));
        f("adj2.w", TensorRef::M(&self.adj2.w));
        f("adj2.b", TensorRef::V(&self.adj2.b));
    }

    pub fn for_each_tensor_mut(&mut self, mut f: impl FnMut(&str, TensorMut)) {
        f("proj", TensorMut::M(&mut self.proj));
        f("part_embed", TensorMut::M(&mut self.part_embed));
        f("anchor_embed", TensorMut::V(&mut self.anchor_embed));
        f("x_proj.w", TensorMut::M(&mut self.x_proj.w));
        f("x_proj.b", TensorMut::V(&mut self.x_proj.b));
        f("t_proj.w", TensorMut::M(&mut self.t_proj.w));
        f("t_proj.b", TensorMut::V(&mut self.t_proj.b));
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let name = |part: &str| format!("block{i}.{part}");
            f(&name("ln1_gain"), TensorMut::V(&mut b.ln1_gain));
            f(&name("ln1_bias"), TensorMut::V(&mut b.ln1_bias));
            f(&name("mod1.w"), TensorMut::M(&mut b.mod1.w));
            f(&name("mod1.b"), TensorMut::V(&mut b.mod1.b));
            f(&name("wq.w"), TensorMut::M(&mut b.wq.w));
            f(&name("wq.b"), TensorMut::V(&mut b.wq.b));
            f(&name("wk.w"), TensorMut::M(&mut b.wk.w));
            f(&name("wk.b"), TensorMut::V(&mut b.wk.b));
            f(&name("wv.w"), TensorMut::M(&mut b.wv.w));
            f(&name("wv.b"), TensorMut::V(&mut b.wv.b));
            f(&name("wo.w"), TensorMut::M(&mut b.wo.w));
            f(&name("wo.b"), TensorMut::V(&mut b.wo.b));
            f(&name("ln2_gain"), TensorMut::V(&mut b.ln2_gain));
            f(&name("ln2_bias"), TensorMut::V(&mut b.ln2_bias));
            f(&name("mod2.w"), TensorMut::M(&mut b.mod2.w));
            f(&name("mod2.b"), TensorMut::V(&mut b.mod2.b));
            f(&name("ff1.w"), TensorMut::M(&mut b.ff1.w));
            f(&name("ff1.b"), TensorMut::V(&mut b.ff1.b));
            f(&name("ff2.w"), TensorMut::M(&mut b.ff2.w));
            f(&name("ff2.b"), TensorMut::V(&mut b.ff2.b));
        }
        f("final_ln_gain", TensorMut::V(&mut self.final_ln_gain));
        f("final_ln_bias", TensorMut::V(&mut self.final_ln_bias));
        f("out_head.w", TensorMut::M(&mut self.out_head.w));
        f("out_head.b", TensorMut::V(&mut self.out_head.b));
        f("frac1.w", TensorMut::M(&mut self.frac1.w));
        f("frac1.b", TensorMut::V(&mut self.frac1.b));
        f("frac2.w", TensorMut::M(&mut self.frac2.w));
        f("frac2.b", TensorMut::V(&mut self.frac2.b));
        f("adj1.w", TensorMut::M(&mut self.adj1.w));
        f("adj1.b", TensorMut::V(&mut self.adj1.b));
        f("adj2.w", TensorMut::M(&mut self.adj2.w));
        f("adj2.b", TensorMut::V(&mut self.adj2.b));
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.for_each_tensor(|_, t| n += t.len());
        n
    }

    /// `(name, offset, len)` for every tensor in flattening order.
    pub fn layout(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        let mut offset = 0;
        self.for_each_tensor(|name, t| {
            out.push((name.to_string(), offset, t.len()));
            offset += t.len();
        });
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.for_each_tensor(|_, t| match t {
            TensorRef::M(m) => out.extend(m.iter()),
            TensorRef::V(v) => out.extend(v.iter()),
        });
        out
    }

    pub fn unflatten(&mut self, data: &[f64]) -> Result<()> {
        if data.len() != self.param_count() {
            return Err(Error::invalid(format!(
                "flat parameter length {} does not match {}",
                data.len(),
                self.param_count()
            )));
        }
        let mut offset = 0;
        self.for_each_tensor_mut(|_, t| match t {
            TensorMut::M(m) => {
                for v in m.iter_mut() {
                    *v = data[offset];
                    offset += 1;
                }
            }
            TensorMut::V(vec) => {
                for v in vec.iter_mut() {
                    *v = data[offset];
                    offset += 1;
                }
            }
        });
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.for_each_tensor(|_, t| match t {
            TensorRef::M(m) => ok &= m.iter().all(|v| v.is_finite()),
            TensorRef::V(v) => ok &= v.iter().all(|x| x.is_finite()),
        });
        ok
    }

    /// First tensor containing a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        let mut bad = None;
        self.for_each_tensor(|name, t| {
            if bad.is_some() {
                return;
            }
            let finite = match t {
                TensorRef::M(m) => m.iter().all(|v| v.is_finite()),
                TensorRef::V(v) => v.iter().all(|x| x.is_finite()),
            };
            if !finite {
                bad = Some(name.to_string());
            }
        });
        bad
    }
}

pub enum TensorRef<'a> {
    M(&'a Array2<f64>),
    V(&'a Array1<f64>),
}

impl TensorRef<'_> {
    pub fn len(&self) -> usize {
        match self {
            TensorRef::M(m) => m.len(),
            TensorRef::V(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub enum TensorMut<'a> {
    M(&'a mut Array2<f64>),
    V(&'a mut Array1<f64>),
}

/// Linear-interpolation training state: x_t = (1−t)·x0 + t·x1, v_t = x1 − x0.
#[derive(Debug, Clone)]
pub struct FlowBatch {
    pub x0: Array2<f64>,
    pub x1: Array2<f64>,
    pub t: f64,
    pub x_t: Array2<f64>,
    pub v_t: Array2<f64>,
}

pub fn interpolate(x0: &Array2<f64>, x1: &Array2<f64>, t: f64) -> Result<FlowBatch> {
    if x0.dim() != x1.dim() {
        return Err(Error::invalid(format!(
            "endpoint shapes {:?} vs {:?}",
            x0.dim(),
            x1.dim()
        )));
    }
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::invalid(format!("t = {t} outside (0, 1]")));
    }
    let x_t = x0 * (1.0 - t) + x1 * t;
    let v_t = x1 - x0;
    Ok(FlowBatch {
        x0: x0.clone(),
        x1: x1.clone(),
        t,
        x_t,
        v_t,
    })
}

/// Draw a standard-normal M×3 endpoint.
pub fn gaussian_endpoint(m: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_fn((m, 3), |_| rng.sample::<f64, _>(StandardNormal))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            width: 16,
            blocks: 2,
            heads: 2,
            attach_layer: 1,
            head_hidden: 8,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn interpolate_endpoints_and_midpoint() {
        let x0 = Array2::from_elem((4, 3), 2.0);
        let x1 = Array2::from_elem((4, 3), -1.0);
        let near_zero = interpolate(&x0, &x1, 1e-12).unwrap();
        assert!((near_zero.x_t[(0, 0)] - 2.0).abs() < 1e-9);
        let at_one = interpolate(&x0, &x1, 1.0).unwrap();
        assert_eq!(at_one.x_t, x1);
        let mid = interpolate(&x0, &x1, 0.5).unwrap();
        assert!((mid.x_t[(2, 1)] - 0.5).abs() < 1e-12);
        assert_eq!(mid.v_t[(0, 0)], -3.0);
        assert!(interpolate(&x0, &x1, 0.0).is_err());
        assert!(interpolate(&x0, &Array2::zeros((3, 3)), 0.5).is_err());
    }

    #[test]
    fn flatten_unflatten_round_trip() {
        let params = ModelParams::init(&tiny_config(), 5).unwrap();
        let flat = params.flatten();
        assert_eq!(flat.len(), params.param_count());
        let mut other = ModelParams::init(&tiny_config(), 99).unwrap();
        other.unflatten(&flat).unwrap();
        assert_eq!(other.flatten(), flat);
    }

    #[test]
    fn init_is_deterministic() {
        let a = ModelParams::init(&tiny_config(), 7).unwrap();
        let b = ModelParams::init(&tiny_config(), 7).unwrap();
        assert_eq!(a.flatten(), b.flatten());
        let c = ModelParams::init(&tiny_config(), 8).unwrap();
        assert_ne!(a.flatten(), c.flatten());
    }

    #[test]
    fn config_validation() {
        let mut bad = tiny_config();
        bad.heads = 3;
        assert!(bad.validate().is_err());
        let mut bad = tiny_config();
        bad.attach_layer = 3;
        assert!(bad.validate().is_err());
        assert!(tiny_config().validate().is_ok());
        assert!(ModelConfig::paper_preset().validate().is_ok());
    }
}
