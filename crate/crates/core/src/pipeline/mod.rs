//! Command implementations behind the CLI, plus the run manifest every
//! command writes.
//!
//! Each command writes `<command>.manifest.json` into its output directory:
//! config hash, seed, and SHA-256 of every input and artifact, with paths
//! relative to the output directory. Wall-clock times go to a separate
//! `<command>.timings.json` so the manifest itself stays reproducible.

mod commands;
mod simulate;

use std::path::{Component, Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use commands::{
    evaluate, fit_object_mask, lift, reconstruct, train_mv, train_sv, EvaluateInputs, LiftStage, TrainOutcome,
};
pub use simulate::{simulate, walker_sequence, Dataset, DatasetSequence, WalkerParams};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::io::{write_json, SCHEMA_VERSION};
use crate::motion::SkeletonSpec;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: Vec<FileHash>,
    pub artifacts: Vec<FileHash>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTime {
    pub stage: String,
    pub seconds: f64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn absolute(path: &Path) -> Result<PathBuf> {
    let p = if path.is_absolute() {
        path.to_path_buf()
    } else {
        std::env::current_dir().map_err(|e| Error::io(".", e))?.join(path)
    };
    // lexical normalization; the paths may not exist yet
    let mut out = PathBuf::new();
    for c in p.components() {
        match c {
            Component::ParentDir => {
                out.pop();
            }
            Component::CurDir => {}
            other => out.push(other),
        }
    }
    Ok(out)
}

/// `path` relative to `base`, using `..` where needed and `/` separators.
pub fn relative_path(path: &Path, base: &Path) -> Result<String> {
    let p = absolute(path)?;
    let b = absolute(base)?;
    let pc: Vec<_> = p.components().collect();
    let bc: Vec<_> = b.components().collect();
    let common = pc.iter().zip(&bc).take_while(|(a, b)| a == b).count();
    let mut parts: Vec<String> = vec!["..".to_string(); bc.len() - common];
    parts.extend(pc[common..].iter().map(|c| c.as_os_str().to_string_lossy().into_owned()));
    Ok(if parts.is_empty() { ".".into() } else { parts.join("/") })
}

/// Collects inputs, artifacts and stage timings for one command.
pub struct Run {
    command: String,
    out: PathBuf,
    config_hash: String,
    seed: u64,
    inputs: Vec<FileHash>,
    artifacts: Vec<PathBuf>,
    timings: Vec<StageTime>,
}

impl Run {
    pub fn new(command: &str, out: &Path, cfg: &Config) -> Result<Self> {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        Ok(Self {
            command: command.to_string(),
            out: out.to_path_buf(),
            config_hash: cfg.hash()?,
            seed: cfg.seed,
            inputs: Vec::new(),
            artifacts: Vec::new(),
            timings: Vec::new(),
        })
    }

    pub fn out(&self) -> &Path {
        &self.out
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let entry = FileHash {
            path: relative_path(path, &self.out)?,
            sha256: sha256_file(path)?,
        };
        if !self.inputs.contains(&entry) {
            self.inputs.push(entry);
        }
        Ok(())
    }

    pub fn artifact(&mut self, path: &Path) {
        if !self.artifacts.iter().any(|p| p == path) {
            self.artifacts.push(path.to_path_buf());
        }
    }

    /// Runs `f` and records its wall time under `name`.
    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f(self)?;
        self.timings.push(StageTime {
            stage: name.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        Ok(out)
    }

    /// Hashes the artifacts and writes the manifest and timings files.
    pub fn finish(self) -> Result<RunManifest> {
        let mut artifacts = self
            .artifacts
            .iter()
            .map(|p| {
                Ok(FileHash {
                    path: relative_path(p, &self.out)?,
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = RunManifest {
            version: SCHEMA_VERSION,
            command: self.command.clone(),
            config_hash: self.config_hash,
            seed: self.seed,
            inputs: self.inputs,
            artifacts,
        };
        write_json(&self.out.join(format!("{}.manifest.json", self.command)), &manifest)?;
        write_json(&self.out.join(format!("{}.timings.json", self.command)), &self.timings)?;
        Ok(manifest)
    }
}

/// Skeleton for a `K`-joint sequence: COCO-17 for the first 17 joints, any
/// further joints treated as object keypoints. Other layouts need explicit
/// hip indices.
pub fn skeleton_for(joints: usize, hips: Option<(usize, usize)>) -> Result<SkeletonSpec> {
    let skel = match hips {
        Some((l, r)) => SkeletonSpec::with_hips(joints, l, r),
        None if joints >= 17 => {
            let mut s = SkeletonSpec::coco17();
            s.joint_names.extend((17..joints).map(|k| format!("object_{}", k - 17)));
            s
        }
        None => {
            return Err(Error::invalid(format!(
                "no default skeleton for {joints} joints; pass the hip indices"
            )))
        }
    };
    skel.validate()?;
    Ok(skel)
}
