#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use driftscope::config::{ExperimentConfig, SweepEntry};
use driftscope_core::shift::ShiftKind;

/// A configuration that runs the whole pipeline in well under a second.
pub fn tiny_config(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.output_dir = dir.to_path_buf();
    cfg.dataset.generator.size = 16;
    cfg.dataset.train = 4;
    cfg.dataset.valid = 2;
    cfg.dataset.test = 4;
    cfg.density.model.hidden = 4;
    cfg.density.model.blocks = 1;
    cfg.density.train.epochs = 1;
    cfg.density.train.batch_size = 4;
    cfg.task.model.base_channels = 2;
    cfg.task.train.epochs = 1;
    cfg.task.train.batch_size = 2;
    cfg.protocol.sets = 2;
    cfg.protocol.patches_per_set = 3;
    cfg.sweep = vec![SweepEntry { kind: ShiftKind::Blur, severities: vec![0.0, 0.6, 1.2] }];
    cfg
}

pub fn write_config(cfg: &ExperimentConfig, path: &Path) {
    std::fs::write(path, cfg.to_json()).unwrap();
}

/// Runs the built binary with `DRIFTSCOPE_SEED` cleared unless given.
pub fn driftscope(args: &[&str], seed_env: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_driftscope"));
    cmd.args(args).env_remove("DRIFTSCOPE_SEED");
    if let Some(s) = seed_env {
        cmd.env("DRIFTSCOPE_SEED", s);
    }
    cmd.output().unwrap()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// All files under `dir`, relative paths with contents, sorted.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
