//! Diffusion prior over 2D keypoint sequences.
//!
//! Samples live in canvas units (see [`CameraIntrinsics::to_canvas`]) and are
//! stored as flat `T x K x 2` vectors. Denoisers predict the clean sample
//! `x0` directly; the implied noise is recovered with [`x0_to_eps`].

mod adam;
mod network;
mod oracle;
mod sampling;
mod schedule;
mod training;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use network::{
    step_embedding, DenoiserDims, DenoiserParams, ForwardCache, MultiViewCache, ParamLayout,
};
pub use oracle::{FixedDenoiser, GaussianPrior, PerViewDenoiser};
pub use sampling::{reverse_sample, reverse_sample_multiview};
pub use schedule::{posterior_coefficients, q_sample, q_step, standard_normal, x0_to_eps, NoiseSchedule};
pub use training::{
    evaluate_loss, multiview_training_loss, multiview_training_loss_with_noise, sample_batch, step_rng,
    train, train_multiview, training_loss, training_loss_with_noise, DataSource, LossOutput,
    MultiViewItem, TrainConfig, TrainState, TrainingBatch, TrainingItem,
};

pub(crate) use adam::{adam_step_scaled, cosine_lr};
pub(crate) use training::{recompose_flat, recompose_flat_backward};

use crate::camgeo::{normalize_trajectory, CameraIntrinsics, CameraTrajectory, EpipolarLineSet};
use crate::error::{Error, Result};
use crate::motion::{decompose, recompose, KeypointSeq2D, MotionDecomposition, SkeletonSpec};

/// Per-frame conditioning features, already in canvas units.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning {
    pub frames: usize,
    pub joints: usize,
    /// Normalized `[R | t]` per frame, row-major.
    pub camera: Vec<[f64; 12]>,
    /// `T x K` lines in canvas units (zeros where invalid).
    pub lines: Vec<[f64; 3]>,
    /// Position of the sequence within a multi-view set. Learned denoisers
    /// ignore it; analytic per-view priors use it to pick their mode.
    pub view: usize,
}

impl Conditioning {
    /// Builds features from a camera trajectory (normalized here) and a
    /// pixel-space line set.
    pub fn new(camera: &CameraTrajectory, lines: &EpipolarLineSet) -> Result<Self> {
        camera.require_frames(lines.frames)?;
        let norm = normalize_trajectory(camera);
        let canvas = lines.to_canvas(&camera.intrinsics);
        Ok(Self {
            frames: lines.frames,
            joints: lines.joints,
            camera: norm.extrinsics.iter().map(|e| e.to_row_major()).collect(),
            lines: canvas.lines,
            view: 0,
        })
    }

    /// No camera motion and no lines; used by scalar toys and tests.
    pub fn unconditioned(frames: usize, joints: usize) -> Self {
        let mut id = [0.0; 12];
        id[0] = 1.0;
        id[5] = 1.0;
        id[10] = 1.0;
        Self {
            frames,
            joints,
            camera: vec![id; frames],
            lines: vec![[0.0; 3]; frames * joints],
            view: 0,
        }
    }

    pub fn with_view(mut self, view: usize) -> Self {
        self.view = view;
        self
    }

    pub fn sample_len(&self) -> usize {
        self.frames * self.joints * 2
    }
}

/// An `x0`-predicting denoiser.
pub trait Denoiser {
    fn predict_x0(&self, xn: &[f64], n: usize, cond: &Conditioning) -> Result<Vec<f64>>;
}

/// Denoises all views of a multi-view set jointly.
pub trait MultiViewDenoiser {
    fn predict_x0_views(&self, xs: &[Vec<f64>], n: usize, conds: &[Conditioning]) -> Result<Vec<Vec<f64>>>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn predict_x0(&self, xn: &[f64], n: usize, cond: &Conditioning) -> Result<Vec<f64>> {
        (**self).predict_x0(xn, n, cond)
    }
}

/// Flattens a pixel sequence into canvas units.
pub fn to_canvas_flat(seq: &KeypointSeq2D, intr: &CameraIntrinsics) -> Vec<f64> {
    seq.coords().iter().flat_map(|&p| intr.to_canvas(p)).collect()
}

/// Rebuilds a pixel sequence from canvas units, keeping `visibility`.
pub fn from_canvas_flat(
    flat: &[f64],
    frames: usize,
    joints: usize,
    visibility: &[bool],
    intr: &CameraIntrinsics,
) -> Result<KeypointSeq2D> {
    if flat.len() != frames * joints * 2 {
        return Err(Error::shape("flat sample length does not match T x K x 2"));
    }
    let coords = flat.chunks_exact(2).map(|c| intr.from_canvas([c[0], c[1]])).collect();
    KeypointSeq2D::with_visibility(frames, joints, coords, visibility.to_vec())
}

/// Decomposes a pixel sequence and flattens its packed form in canvas units
/// (the local pose is centred on the principal point, i.e. canvas 0).
pub fn pack_canvas(seq: &KeypointSeq2D, skel: &SkeletonSpec, intr: &CameraIntrinsics) -> Result<Vec<f64>> {
    let dec = decompose(seq, skel, intr.center())?;
    Ok(to_canvas_flat(&dec.packed(skel)?, intr))
}

/// Inverse of [`pack_canvas`].
pub fn unpack_canvas(
    flat: &[f64],
    skel: &SkeletonSpec,
    intr: &CameraIntrinsics,
    visibility: &[bool],
) -> Result<KeypointSeq2D> {
    let k = skel.joints();
    if k == 0 || flat.len() % (2 * k) != 0 {
        return Err(Error::shape("packed sample length is not a multiple of 2K"));
    }
    let packed = from_canvas_flat(flat, flat.len() / (2 * k), k, visibility, intr)?;
    recompose(&MotionDecomposition::from_packed(&packed, skel, intr.center())?, skel)
}
