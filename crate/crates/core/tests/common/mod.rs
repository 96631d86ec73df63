#![allow(dead_code)]

use std::path::Path;

use kplift::config::Config;
use kplift::pipeline::{self, LiftStage};

/// A config small enough for a full pipeline run in a few seconds.
pub fn tiny_config(seed: u64) -> Config {
    let mut cfg = Config::default();
    cfg.seed = seed;
    cfg.simulate.train_sequences = 8;
    cfg.simulate.test_sequences = 2;
    cfg.training.sv_steps = 40;
    cfg.training.mv_steps = 20;
    cfg.training.validation_every = 20;
    cfg.sds.iterations = 30;
    cfg.schedule.steps = 100;
    cfg
}

/// simulate, train-sv, then a Stage-1 lift of the first test sequence and
/// its reconstruction. Returns the data directory.
pub fn small_run(root: &Path, cfg: &Config) -> std::path::PathBuf {
    let data = root.join("data");
    pipeline::simulate(cfg, &data).unwrap();
    let ds = data.join("dataset.json");
    pipeline::train_sv(cfg, &ds, None, &root.join("sv")).unwrap();
    let seq = data.join("sequences/test_000");
    pipeline::lift(
        cfg,
        &seq.join("motion2d.json"),
        &seq.join("camera.json"),
        &root.join("sv/best.json"),
        Some(LiftStage::Sds),
        None,
        None,
        &root.join("lift"),
    )
    .unwrap();
    pipeline::reconstruct(cfg, &root.join("lift/bundle.json"), &root.join("rec")).unwrap();
    data
}
