//! Synthetic dataset factory: toy 3D walkers filmed by bank or predefined
//! cameras and projected to 2D.

use std::f64::consts::{PI, TAU};
use std::path::{Path, PathBuf};

use nalgebra::{Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Run, RunManifest};
use crate::camgeo::{normalize_trajectory, project_sequence, CameraExtrinsic, CameraIntrinsics, CameraTrajectory};
use crate::camsim::{fit_length, look_at_rotation, sample_training_camera, BankEntry, CameraBank, CameraSource, Split};
use crate::config::Config;
use crate::diffusion::DataSource;
use crate::error::{Error, Result};
use crate::io::{read_json, save_camera, save_motion_2d, save_motion_3d, write_json, SCHEMA_VERSION};
use crate::motion::{KeypointSeq2D, Seq3D};

const HIP_HEIGHT: f64 = 0.92;
const THIGH: f64 = 0.45;
const SHIN: f64 = 0.45;
const UPPER_ARM: f64 = 0.28;
const FOREARM: f64 = 0.26;
const MAX_TRIES: usize = 50;

/// Gait and path of one toy walker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkerParams {
    /// Ground-plane start position (x, z).
    pub origin: [f64; 2],
    pub heading: f64,
    pub speed: f64,
    pub gait_hz: f64,
    pub leg_swing: f64,
    pub arm_swing: f64,
    pub phase: f64,
}

impl WalkerParams {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            origin: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            heading: rng.random_range(0.0..TAU),
            speed: rng.random_range(0.3..1.3),
            gait_hz: rng.random_range(0.8..1.3),
            leg_swing: rng.random_range(0.25..0.5),
            arm_swing: rng.random_range(0.2..0.5),
            phase: rng.random_range(0.0..TAU),
        }
    }
}

/// Limb vector of length `len` hanging down, swung forward by `angle`.
fn limb(len: f64, angle: f64) -> Vector3<f64> {
    Vector3::new(0.0, -len * angle.cos(), len * angle.sin())
}

/// COCO-17 walker in a y-up world, meters. Body axes: x to the walker's
/// left, y up, z forward.
pub fn walker_sequence(p: &WalkerParams, frames: usize, fps: f64) -> Result<Seq3D> {
    let forward = Vector3::new(p.heading.sin(), 0.0, p.heading.cos());
    let left = Vector3::new(p.heading.cos(), 0.0, -p.heading.sin());
    let mut coords = Vec::with_capacity(frames * 17);
    for t in 0..frames {
        let time = t as f64 / fps;
        let phi = TAU * p.gait_hz * time + p.phase;
        let root = Vector3::new(p.origin[0], 0.0, p.origin[1]) + forward * (p.speed * time);
        let bob = 0.015 * (2.0 * phi).cos();
        let hip_y = HIP_HEIGHT + bob;

        let mut body = [Vector3::zeros(); 17];
        body[0] = Vector3::new(0.0, 1.58 + bob, 0.10);
        body[1] = Vector3::new(0.035, 1.62 + bob, 0.08);
        body[2] = Vector3::new(-0.035, 1.62 + bob, 0.08);
        body[3] = Vector3::new(0.075, 1.60 + bob, 0.0);
        body[4] = Vector3::new(-0.075, 1.60 + bob, 0.0);
        for (side, sign) in [(0usize, 1.0), (1usize, -1.0)] {
            let leg = sign * p.leg_swing * phi.sin();
            let knee_flex = 1.2 * p.leg_swing * (sign * phi.cos()).max(0.0);
            let arm = -sign * p.arm_swing * phi.sin();
            let shoulder = Vector3::new(sign * 0.18, 1.42 + bob, 0.0);
            let elbow = shoulder + limb(UPPER_ARM, arm);
            let wrist = elbow + limb(FOREARM, 1.3 * arm);
            let hip = Vector3::new(sign * 0.1, hip_y, 0.0);
            let knee = hip + limb(THIGH, leg);
            let ankle = knee + limb(SHIN, leg - knee_flex);
            body[5 + side] = shoulder;
            body[7 + side] = elbow;
            body[9 + side] = wrist;
            body[11 + side] = hip;
            body[13 + side] = knee;
            body[15 + side] = ankle;
        }
        for b in body {
            let w = root + left * b.x + Vector3::y() * b.y + forward * b.z;
            coords.push([w.x, w.y, w.z]);
        }
    }
    Seq3D::new(frames, 17, coords)
}

/// Small handheld-style drift starting at the identity.
fn drift_trajectory<R: Rng + ?Sized>(frames: usize, intr: CameraIntrinsics, rng: &mut R) -> CameraTrajectory {
    let axis = Unit::new_normalize(Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    ));
    let angle = rng.random_range(0.03..0.25);
    let shift = Vector3::new(
        rng.random_range(-0.5..0.5),
        rng.random_range(-0.1..0.1),
        rng.random_range(-0.5..0.5),
    );
    let extrinsics = (0..frames)
        .map(|t| {
            let s = t as f64 / (frames - 1).max(1) as f64;
            let wobble = 0.3 * (PI * s).sin();
            CameraExtrinsic {
                rotation: *Rotation3::from_axis_angle(&axis, angle * (s + wobble)).matrix(),
                translation: shift * s,
            }
        })
        .collect();
    CameraTrajectory {
        extrinsics,
        intrinsics: intr,
    }
}

/// Frame-0 placement looking at the walker's pelvis.
fn place_camera<R: Rng + ?Sized>(pelvis: &Vector3<f64>, cfg: &Config, rng: &mut R) -> Result<CameraExtrinsic> {
    let sim = &cfg.simulate;
    let dist = if sim.distance_max > sim.distance_min {
        rng.random_range(sim.distance_min..sim.distance_max)
    } else {
        sim.distance_min
    };
    let az = rng.random_range(0.0..TAU);
    let height = rng.random_range(1.0..1.8);
    let eye = pelvis + Vector3::new(dist * az.cos(), height - pelvis.y, dist * az.sin());
    let r = look_at_rotation(&eye, pelvis)?;
    CameraExtrinsic::new(r, -(r * eye))
}

fn compose(normalized: &CameraTrajectory, first: &CameraExtrinsic) -> CameraTrajectory {
    CameraTrajectory {
        extrinsics: normalized.extrinsics.iter().map(|n| n.compose(first)).collect(),
        intrinsics: normalized.intrinsics,
    }
}

/// Every keypoint visible and within a quarter image of the frame.
fn well_framed(seq: &KeypointSeq2D, intr: &CameraIntrinsics) -> bool {
    let (mx, my) = (0.25 * intr.width, 0.25 * intr.height);
    seq.visibility().iter().all(|v| *v)
        && seq
            .coords()
            .iter()
            .all(|p| p[0] >= -mx && p[0] <= intr.width + mx && p[1] >= -my && p[1] <= intr.height + my)
}

fn pelvis_track(seq: &Seq3D) -> Vec<Vector3<f64>> {
    (0..seq.frames())
        .map(|t| {
            let (l, r) = (seq.get(t, 11), seq.get(t, 12));
            Vector3::new(0.5 * (l[0] + r[0]), 0.5 * (l[1] + r[1]), 0.5 * (l[2] + r[2]))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSequence {
    pub name: String,
    pub split: String,
    pub source: String,
    pub camera_id: String,
    pub motion2d: String,
    pub motion3d: String,
    pub camera: String,
}

impl DatasetSequence {
    pub fn data_source(&self) -> Result<DataSource> {
        match self.source.as_str() {
            "video_global" => Ok(DataSource::VideoGlobal),
            "reprojected_local" => Ok(DataSource::ReprojectedLocal),
            other => Err(Error::schema("dataset", format!("field `source`: unknown value `{other}`"))),
        }
    }
}

/// `dataset.json`: the sequence index, paths relative to the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dataset {
    pub version: u32,
    pub skeleton: String,
    pub fps: f64,
    pub frames: usize,
    pub width: f64,
    pub height: f64,
    pub sequences: Vec<DatasetSequence>,
}

impl Dataset {
    /// Loads the index and returns it with the directory its paths are
    /// relative to.
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let d: Dataset = read_json(path)?;
        if d.version != SCHEMA_VERSION {
            return Err(Error::schema(path.display().to_string(), "unsupported dataset version"));
        }
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok((d, base))
    }

    pub fn split<'a>(&'a self, split: &'a str) -> impl Iterator<Item = &'a DatasetSequence> + 'a {
        self.sequences.iter().filter(move |s| s.split == split)
    }
}

/// `cameras.json`: camera ids per split; the two lists never overlap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraManifest {
    pub version: u32,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Evenly spreads `round(n / (r + 1))` local items over `n` train sequences.
fn is_local(i: usize, n: usize, ratio: f64) -> bool {
    let n_local = (n as f64 / (ratio + 1.0)).round() as usize;
    (i + 1) * n_local / n > i * n_local / n
}

/// Writes `dataset.json`, `cameras.json`, the bank under `cameras/` and one
/// directory per sequence under `sequences/`.
pub fn simulate(cfg: &Config, out: &Path) -> Result<RunManifest> {
    let mut run = Run::new("simulate", out, cfg)?;
    let sim = cfg.simulate.clone();
    let intr = CameraIntrinsics::centered_f1000(sim.width, sim.height);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let bank = run.stage("bank", |_| {
        let mut entries = Vec::new();
        for (split, count) in [(Split::Train, sim.train_cameras), (Split::Test, sim.test_cameras)] {
            for i in 0..count {
                entries.push(BankEntry {
                    name: format!("{}_cam_{i:02}", split.name()),
                    split,
                    trajectory: drift_trajectory(sim.frames, intr, &mut rng),
                });
            }
        }
        CameraBank::new(entries)
    })?;

    run.stage("sequences", |run| {
        let mut sequences = Vec::new();
        let mut train_ids = Vec::new();
        let mut test_ids = Vec::new();
        let test_bank: Vec<&BankEntry> = bank.split(Split::Test).collect();
        let plan = (0..sim.train_sequences)
            .map(|i| (Split::Train, i))
            .chain((0..sim.test_sequences).map(|i| (Split::Test, i)));
        for (split, i) in plan {
            let name = format!("{}_{i:03}", split.name());
            let mut found = None;
            for _ in 0..MAX_TRIES {
                let walker = WalkerParams::random(&mut rng);
                let seq3d = walker_sequence(&walker, sim.frames, sim.fps)?;
                let pelvis = pelvis_track(&seq3d);
                let e0 = place_camera(&pelvis[0], cfg, &mut rng)?;
                let (normalized, camera_id) = match split {
                    Split::Train => {
                        let local: Vec<Vector3<f64>> = pelvis.iter().map(|p| e0.apply(p)).collect();
                        let s = sample_training_camera(
                            &bank,
                            cfg.training.predefined_fraction,
                            sim.frames,
                            intr,
                            Some(&local),
                            &mut rng,
                        )?;
                        let id = match s.source {
                            CameraSource::Predefined(m) => format!("{name}_{}", m.motion.name()),
                            CameraSource::Bank(idx) => bank.entries()[idx].name.clone(),
                        };
                        (s.trajectory, id)
                    }
                    Split::Test => {
                        let entry = test_bank[i % test_bank.len()];
                        (normalize_trajectory(&fit_length(&entry.trajectory, sim.frames, &mut rng)), entry.name.clone())
                    }
                };
                let traj = compose(&normalized, &e0);
                let seq2d = project_sequence(&seq3d, &traj)?;
                if well_framed(&seq2d, &intr) {
                    found = Some((seq3d, seq2d, traj, camera_id));
                    break;
                }
            }
            let (seq3d, seq2d, traj, camera_id) = found
                .ok_or_else(|| Error::Numerical(format!("could not frame sequence {name} after {MAX_TRIES} tries")))?;
            let dir = format!("sequences/{name}");
            let m2 = format!("{dir}/motion2d.json");
            let m3 = format!("{dir}/motion3d.json");
            let cam = format!("{dir}/camera.json");
            save_motion_2d(&run.path(&m2), &seq2d, sim.fps)?;
            save_motion_3d(&run.path(&m3), &seq3d, sim.fps)?;
            save_camera(&run.path(&cam), &traj)?;
            for p in [&m2, &m3, &cam] {
                let full = run.path(p);
                run.artifact(&full);
            }
            let source = if split == Split::Train && is_local(i, sim.train_sequences, cfg.training.hybrid_ratio) {
                DataSource::ReprojectedLocal
            } else {
                DataSource::VideoGlobal
            };
            match split {
                Split::Train => train_ids.push(camera_id.clone()),
                Split::Test => test_ids.push(camera_id.clone()),
            }
            sequences.push(DatasetSequence {
                name,
                split: split.name().to_string(),
                source: source.name().to_string(),
                camera_id,
                motion2d: m2,
                motion3d: m3,
                camera: cam,
            });
        }

        for e in bank.entries() {
            let p = run.path(&format!("cameras/{}.json", e.name));
            save_camera(&p, &e.trajectory)?;
            run.artifact(&p);
        }
        for e in bank.entries() {
            let ids = if e.split == Split::Train { &mut train_ids } else { &mut test_ids };
            ids.push(e.name.clone());
        }
        for ids in [&mut train_ids, &mut test_ids] {
            ids.sort();
            ids.dedup();
        }
        if train_ids.iter().any(|id| test_ids.contains(id)) {
            return Err(Error::invalid("train and test camera manifests overlap"));
        }
        let manifest = CameraManifest {
            version: SCHEMA_VERSION,
            train: train_ids,
            test: test_ids,
        };
        let p = run.path("cameras.json");
        write_json(&p, &manifest)?;
        run.artifact(&p);

        let dataset = Dataset {
            version: SCHEMA_VERSION,
            skeleton: "coco17".into(),
            fps: sim.fps,
            frames: sim.frames,
            width: sim.width,
            height: sim.height,
            sequences,
        };
        let p = run.path("dataset.json");
        write_json(&p, &dataset)?;
        run.artifact(&p);
        Ok(())
    })?;
    run.finish()
}
