//! `train`: fit the velocity field on the train split and write a checkpoint
//! plus the loss curve.

use std::fmt::Write as _;
use std::path::Path;

use sare_core::flow::{save_checkpoint, train, ModelParams, TrainReport};

use crate::commands::{load_split, RunManifest};
use crate::config::RunConfig;
use crate::error::{KitError, Result};

pub fn cmd_train(config: &RunConfig, data_dir: &Path, out_dir: &Path) -> Result<()> {
    let dataset = load_split(data_dir, "train")?;
    log::info!(
        "training on {} objects for {} epochs",
        dataset.len(),
        config.train.epochs
    );
    let mut params = ModelParams::init(&config.model, config.seed)?;
    let report = train(&mut params, &dataset, &config.train, config.seed)?;

    std::fs::create_dir_all(out_dir)
        .map_err(|e| KitError::runtime(format!("create {}: {e}", out_dir.display())))?;
    let ckpt = out_dir.join("model.ckpt");
    save_checkpoint(&ckpt, &params, &config.hash(), config.seed)?;
    write_loss_curve(&out_dir.join("loss.csv"), &report)?;
    RunManifest::new("train", config).write(out_dir)?;
    if let Some(last) = report.curve.last() {
        log::info!(
            "final epoch: l_rf {:.6} l_f {:.6} l_a {:.6} total {:.6}",
            last.l_rf,
            last.l_f,
            last.l_a,
            last.total
        );
    }
    Ok(())
}

fn write_loss_curve(path: &Path, report: &TrainReport) -> Result<()> {
    let mut out = String::from("epoch,l_rf,l_f,l_a,total\n");
    for p in &report.curve {
        writeln!(out, "{},{},{},{},{}", p.epoch, p.l_rf, p.l_f, p.l_a, p.total)
            .expect("string write");
    }
    std::fs::write(path, out)
        .map_err(|e| KitError::runtime(format!("write {}: {e}", path.display())))
}
