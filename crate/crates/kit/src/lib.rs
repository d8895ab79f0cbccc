//! Library surface of the CLI harness, exposed so integration tests drive the
//! exact command implementations the binary runs.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{cmd_ablate, cmd_eval, cmd_gen_data, cmd_refine, cmd_report, cmd_sample, cmd_train};
pub use config::{RunConfig, SEED_ENV_VAR};
pub use error::{KitError, Result};
