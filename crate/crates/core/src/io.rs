//! JSON file schemas for motions, cameras, bundles, object poses and
//! checkpoints. Floats are written with shortest round-trip formatting, so
//! save followed by load reproduces every value bit for bit.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::camgeo::{CameraExtrinsic, CameraIntrinsics, CameraTrajectory};
use crate::diffusion::{AdamState, DenoiserDims, DenoiserParams, TrainState};
use crate::error::{Error, Result};
use crate::motion::{KeypointSeq2D, Seq3D};
use crate::recon::{CanonicalKeypoints, ObjectPose};

pub const SCHEMA_VERSION: u32 = 1;

/// Serializes `value` as pretty JSON with a trailing newline.
pub fn to_json_string<T: Serialize>(value: &T, context: &str) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::schema(context, e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_json_string(value, &path.display().to_string())?)
}

/// Parses JSON text; errors carry serde's field name and line/column.
pub fn parse_json<T: DeserializeOwned>(text: &str, context: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::schema(context, e.to_string()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    parse_json(&read_text(path)?, &path.display().to_string())
}

fn check_version(version: u32, context: &str) -> Result<()> {
    if version != SCHEMA_VERSION {
        return Err(Error::schema(
            context,
            format!("unsupported version {version}, expected {SCHEMA_VERSION}"),
        ));
    }
    Ok(())
}

/// Motion sequence file. `coords` is flat row-major `T x K x dim`;
/// `visibility` (2D only) is flat `T x K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionFile {
    pub version: u32,
    pub fps: f64,
    #[serde(rename = "K")]
    pub joints: usize,
    #[serde(rename = "T")]
    pub frames: usize,
    pub dim: usize,
    pub coords: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visibility: Option<Vec<bool>>,
}

impl MotionFile {
    pub fn from_2d(seq: &KeypointSeq2D, fps: f64) -> Self {
        Self {
            version: SCHEMA_VERSION,
            fps,
            joints: seq.joints(),
            frames: seq.frames(),
            dim: 2,
            coords: seq.coords().iter().flatten().copied().collect(),
            visibility: Some(seq.visibility().to_vec()),
        }
    }

    pub fn from_3d(seq: &Seq3D, fps: f64) -> Self {
        Self {
            version: SCHEMA_VERSION,
            fps,
            joints: seq.joints(),
            frames: seq.frames(),
            dim: 3,
            coords: seq.coords().iter().flatten().copied().collect(),
            visibility: None,
        }
    }

    fn check(&self, dim: usize, context: &str) -> Result<()> {
        check_version(self.version, context)?;
        if self.dim != dim {
            return Err(Error::schema(context, format!("field `dim`: expected {dim}, found {}", self.dim)));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::schema(context, "field `fps` must be positive"));
        }
        let n = self.frames * self.joints;
        if self.coords.len() != n * dim {
            return Err(Error::schema(
                context,
                format!("field `coords`: expected {} numbers, found {}", n * dim, self.coords.len()),
            ));
        }
        if let Some(v) = &self.visibility {
            if v.len() != n {
                return Err(Error::schema(
                    context,
                    format!("field `visibility`: expected {n} flags, found {}", v.len()),
                ));
            }
        }
        Ok(())
    }

    pub fn to_2d(&self, context: &str) -> Result<KeypointSeq2D> {
        self.check(2, context)?;
        let coords = self.coords.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        let vis = self.visibility.clone().unwrap_or_else(|| vec![true; self.frames * self.joints]);
        KeypointSeq2D::with_visibility(self.frames, self.joints, coords, vis)
            .map_err(|e| Error::schema(context, e.to_string()))
    }

    pub fn to_3d(&self, context: &str) -> Result<Seq3D> {
        self.check(3, context)?;
        if self.visibility.is_some() {
            return Err(Error::schema(context, "field `visibility` is not allowed for 3D motion"));
        }
        let coords = self.coords.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Seq3D::new(self.frames, self.joints, coords).map_err(|e| Error::schema(context, e.to_string()))
    }
}

pub fn save_motion_2d(path: &Path, seq: &KeypointSeq2D, fps: f64) -> Result<()> {
    write_json(path, &MotionFile::from_2d(seq, fps))
}

pub fn save_motion_3d(path: &Path, seq: &Seq3D, fps: f64) -> Result<()> {
    write_json(path, &MotionFile::from_3d(seq, fps))
}

/// Loads a 2D motion file, returning the sequence and its frame rate.
pub fn load_motion_2d(path: &Path) -> Result<(KeypointSeq2D, f64)> {
    let f: MotionFile = read_json(path)?;
    Ok((f.to_2d(&path.display().to_string())?, f.fps))
}

pub fn load_motion_3d(path: &Path) -> Result<(Seq3D, f64)> {
    let f: MotionFile = read_json(path)?;
    Ok((f.to_3d(&path.display().to_string())?, f.fps))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntrinsicsFile {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

/// Camera trajectory file: one row-major `[R | t]` per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraFile {
    pub version: u32,
    pub intrinsics: IntrinsicsFile,
    pub frames: Vec<[f64; 12]>,
}

impl CameraFile {
    pub fn from_trajectory(traj: &CameraTrajectory) -> Self {
        let i = &traj.intrinsics;
        Self {
            version: SCHEMA_VERSION,
            intrinsics: IntrinsicsFile {
                fx: i.fx,
                fy: i.fy,
                cx: i.cx,
                cy: i.cy,
                w: i.width,
                h: i.height,
            },
            frames: traj.extrinsics.iter().map(|e| e.to_row_major()).collect(),
        }
    }

    pub fn to_trajectory(&self, context: &str) -> Result<CameraTrajectory> {
        check_version(self.version, context)?;
        let i = &self.intrinsics;
        let schema = |e: Error| Error::schema(context, e.to_string());
        let intr = CameraIntrinsics::new(i.fx, i.fy, i.cx, i.cy, i.w, i.h).map_err(schema)?;
        let ext = self
            .frames
            .iter()
            .enumerate()
            .map(|(t, f)| {
                CameraExtrinsic::from_row_major(f)
                    .map_err(|e| Error::schema(context, format!("field `frames[{t}]`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        CameraTrajectory::new(ext, intr).map_err(schema)
    }
}

pub fn save_camera(path: &Path, traj: &CameraTrajectory) -> Result<()> {
    write_json(path, &CameraFile::from_trajectory(traj))
}

pub fn load_camera(path: &Path) -> Result<CameraTrajectory> {
    let f: CameraFile = read_json(path)?;
    f.to_trajectory(&path.display().to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleView {
    pub motion: String,
    pub camera: String,
}

/// Multi-view bundle. Paths are relative to the bundle file's directory.
/// When `human_joints` is smaller than the motion's `K`, the remaining
/// joints are object keypoints and `object_canonical` names their
/// canonical positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleFile {
    pub version: u32,
    pub human_joints: usize,
    pub views: Vec<BundleView>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_canonical: Option<String>,
}

/// A loaded bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub human_joints: usize,
    pub views: Vec<KeypointSeq2D>,
    pub cameras: Vec<CameraTrajectory>,
    pub fps: f64,
    pub object_canonical: Option<CanonicalKeypoints>,
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    base.join(rel)
}

pub fn load_bundle(path: &Path) -> Result<Bundle> {
    let ctx = path.display().to_string();
    let f: BundleFile = read_json(path)?;
    check_version(f.version, &ctx)?;
    if f.views.is_empty() {
        return Err(Error::schema(&ctx, "field `views` is empty"));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let mut views = Vec::with_capacity(f.views.len());
    let mut cameras = Vec::with_capacity(f.views.len());
    let mut fps = None;
    for v in &f.views {
        let (seq, r) = load_motion_2d(&resolve(base, &v.motion))?;
        if seq.joints() < f.human_joints {
            return Err(Error::schema(&ctx, "field `human_joints` exceeds the motion's K"));
        }
        fps.get_or_insert(r);
        views.push(seq);
        cameras.push(load_camera(&resolve(base, &v.camera))?);
    }
    let object_canonical = match &f.object_canonical {
        Some(p) => Some(load_canonical(&resolve(base, p))?),
        None => None,
    };
    Ok(Bundle {
        human_joints: f.human_joints,
        views,
        cameras,
        fps: fps.unwrap_or(30.0),
        object_canonical,
    })
}

/// Writes each view's motion and camera next to the bundle file as
/// `view{v}_motion.json` / `view{v}_camera.json`. Returns the written paths.
pub fn save_bundle(
    path: &Path,
    views: &[KeypointSeq2D],
    cameras: &[CameraTrajectory],
    fps: f64,
    human_joints: usize,
    object_canonical: Option<&str>,
) -> Result<Vec<PathBuf>> {
    if views.len() != cameras.len() {
        return Err(Error::shape("bundle needs one camera per view"));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let mut written = Vec::new();
    let mut entries = Vec::with_capacity(views.len());
    for (v, (seq, cam)) in views.iter().zip(cameras).enumerate() {
        let m = format!("view{v}_motion.json");
        let c = format!("view{v}_camera.json");
        save_motion_2d(&base.join(&m), seq, fps)?;
        save_camera(&base.join(&c), cam)?;
        written.push(base.join(&m));
        written.push(base.join(&c));
        entries.push(BundleView { motion: m, camera: c });
    }
    let file = BundleFile {
        version: SCHEMA_VERSION,
        human_joints,
        views: entries,
        object_canonical: object_canonical.map(str::to_string),
    };
    write_json(path, &file)?;
    written.push(path.to_path_buf());
    Ok(written)
}

/// Canonical object keypoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CanonicalFile {
    pub version: u32,
    pub points: Vec<[f64; 3]>,
    pub reference_pair: [usize; 2],
}

pub fn save_canonical(path: &Path, canon: &CanonicalKeypoints) -> Result<()> {
    write_json(
        path,
        &CanonicalFile {
            version: SCHEMA_VERSION,
            points: canon.points.iter().map(|p| [p.x, p.y, p.z]).collect(),
            reference_pair: [canon.reference_pair.0, canon.reference_pair.1],
        },
    )
}

pub fn load_canonical(path: &Path) -> Result<CanonicalKeypoints> {
    let ctx = path.display().to_string();
    let f: CanonicalFile = read_json(path)?;
    check_version(f.version, &ctx)?;
    CanonicalKeypoints::new(
        f.points.iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect(),
        (f.reference_pair[0], f.reference_pair[1]),
    )
    .map_err(|e| Error::schema(&ctx, e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseFrame {
    pub rot6d: [f64; 6],
    pub translation: [f64; 3],
}

/// Object pose sequence plus an optional residual report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectPoseFile {
    pub version: u32,
    pub scale: f64,
    pub frames: Vec<PoseFrame>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual: Option<PoseResidual>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseResidual {
    /// Objective value(s) per frame or for the whole fit.
    pub per_frame: Vec<f64>,
    pub fit_loss: f64,
    pub smooth_loss: f64,
}

impl ObjectPoseFile {
    pub fn from_pose(pose: &ObjectPose, residual: Option<PoseResidual>) -> Self {
        Self {
            version: SCHEMA_VERSION,
            scale: pose.scale,
            frames: pose
                .rot6d
                .iter()
                .zip(&pose.translation)
                .map(|(r, t)| PoseFrame {
                    rot6d: *r,
                    translation: [t.x, t.y, t.z],
                })
                .collect(),
            residual,
        }
    }

    pub fn to_pose(&self, context: &str) -> Result<ObjectPose> {
        check_version(self.version, context)?;
        let pose = ObjectPose {
            rot6d: self.frames.iter().map(|f| f.rot6d).collect(),
            translation: self
                .frames
                .iter()
                .map(|f| Vector3::new(f.translation[0], f.translation[1], f.translation[2]))
                .collect(),
            scale: self.scale,
        };
        pose.validate().map_err(|e| Error::schema(context, e.to_string()))?;
        Ok(pose)
    }
}

pub fn save_object_pose(path: &Path, pose: &ObjectPose, residual: Option<PoseResidual>) -> Result<()> {
    write_json(path, &ObjectPoseFile::from_pose(pose, residual))
}

pub fn load_object_pose(path: &Path) -> Result<ObjectPose> {
    let f: ObjectPoseFile = read_json(path)?;
    f.to_pose(&path.display().to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimsFile {
    pub joints: usize,
    pub hidden: usize,
    pub depth: usize,
    pub embed: usize,
    pub cross_view: bool,
}

impl From<DenoiserDims> for DimsFile {
    fn from(d: DenoiserDims) -> Self {
        Self {
            joints: d.joints,
            hidden: d.hidden,
            depth: d.depth,
            embed: d.embed,
            cross_view: d.cross_view,
        }
    }
}

impl From<DimsFile> for DenoiserDims {
    fn from(d: DimsFile) -> Self {
        DenoiserDims::new(d.joints, d.hidden, d.depth, d.embed).with_cross_view(d.cross_view)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamFile {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

/// Weights, optimizer moments and loss history. `shape_hash` guards
/// against loading weights into a different architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointFile {
    pub version: u32,
    pub shape: String,
    pub shape_hash: String,
    pub dims: DimsFile,
    pub seed: u64,
    pub step: usize,
    pub params: Vec<f64>,
    pub adam: AdamFile,
    pub losses: Vec<f64>,
}

impl CheckpointFile {
    pub fn from_state(state: &TrainState, seed: u64) -> Self {
        let dims = *state.params.dims();
        Self {
            version: SCHEMA_VERSION,
            shape: dims.shape_string(),
            shape_hash: dims.shape_hash(),
            dims: dims.into(),
            seed,
            step: state.step,
            params: state.params.values().to_vec(),
            adam: AdamFile {
                m: state.adam.m.clone(),
                v: state.adam.v.clone(),
                t: state.adam.t,
            },
            losses: state.losses.clone(),
        }
    }

    pub fn to_state(&self, context: &str) -> Result<TrainState> {
        check_version(self.version, context)?;
        let dims: DenoiserDims = self.dims.into();
        dims.validate().map_err(|e| Error::schema(context, e.to_string()))?;
        if dims.shape_hash() != self.shape_hash || dims.shape_string() != self.shape {
            return Err(Error::schema(
                context,
                format!("field `shape_hash`: checkpoint is for `{}`, dims give `{}`", self.shape, dims.shape_string()),
            ));
        }
        let n = dims.param_count();
        if self.params.len() != n || self.adam.m.len() != n || self.adam.v.len() != n {
            return Err(Error::schema(context, format!("field `params`: expected {n} values")));
        }
        if self.losses.len() != self.step {
            return Err(Error::schema(context, "field `losses` must hold one entry per step"));
        }
        let params = DenoiserParams::from_values(dims, self.params.clone()).map_err(|e| Error::schema(context, e.to_string()))?;
        Ok(TrainState {
            params,
            adam: AdamState {
                m: self.adam.m.clone(),
                v: self.adam.v.clone(),
                t: self.adam.t,
            },
            step: self.step,
            losses: self.losses.clone(),
        })
    }
}

pub fn save_checkpoint(path: &Path, state: &TrainState, seed: u64) -> Result<()> {
    write_json(path, &CheckpointFile::from_state(state, seed))
}

/// Loads a checkpoint and the seed it was trained with.
pub fn load_checkpoint(path: &Path) -> Result<(TrainState, u64)> {
    let f: CheckpointFile = read_json(path)?;
    Ok((f.to_state(&path.display().to_string())?, f.seed))
}
