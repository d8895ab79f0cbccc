//! Structure-aware 3D fragment reassembly at desk scale.
//!
//! The crate is organized along the pipeline:
//!
//! * [`geom`] — deterministic geometry kernels (FPS, Kabsch, Chamfer,
//!   voxelization, rotation metrics) shared by everything else.
//! * [`data`] — fractured-object generation with ground-truth poses,
//!   fracture-surface labels and contact adjacency, plus (de)serialization.
//! * [`cond`] — query-point conditioning: per-fragment query budgets,
//!   Fourier features, local geometric descriptors, part/anchor embeddings.
//! * [`flow`] — the trainable core: a small transformer velocity field with
//!   fracture and adjacency heads, explicit reverse-mode gradients, AdamW.
//! * [`sampler`] — Euler integration of the velocity field and rigid pose
//!   recovery from generated points.
//! * [`refine`] — geometry-verified conditional resampling: candidate contact
//!   edges, voxel-overlap verification, stable masks, RePaint-style blending.
//! * [`metrics`] — pose RMSE, part accuracy, object Chamfer distance,
//!   induced adjacency and binned reports.
//!
//! All randomness derives from a master seed through [`seed::subseed`], so
//! every stage is reproducible bit-for-bit. Data-parallel inner loops use
//! rayon when the `parallel` feature (default) is enabled; the same code
//! paths fall back to sequential iteration without it and produce identical
//! results.

pub mod cond;
pub mod data;
pub mod error;
pub mod flow;
pub mod geom;
pub mod metrics;
pub mod par;
pub mod refine;
pub mod sampler;
pub mod seed;

pub use error::{Error, Result};
