//! Score-distillation lifting of one 2D sequence into several consistent
//! views.
//!
//! View 0 is the input and is never modified. Views `1..V` live on a ring
//! of virtual cameras and are optimized in packed canvas units against the
//! diffusion prior plus cross-view epipolar residuals.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camgeo::{
    cross_view_epipolar_lines, point_line_residual, project_point, trajectory_fundamentals, CameraTrajectory,
    EpipolarLineSet, LineResidual,
};
use crate::camsim::ring_views;
use crate::diffusion::{
    adam_step_scaled, cosine_lr, pack_canvas, q_sample, recompose_flat, recompose_flat_backward,
    reverse_sample_multiview, standard_normal, unpack_canvas, x0_to_eps, AdamConfig, AdamState, Conditioning,
    Denoiser, MultiViewDenoiser, NoiseSchedule,
};
use crate::error::{Error, Result};
use crate::motion::{KeypointSeq2D, SkeletonSpec};

/// How the free views are updated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdsOptimizer {
    /// Adam, optionally with cosine learning-rate decay.
    Adam,
    /// Plain gradient steps, halved until the objective does not increase.
    /// Only meaningful for deterministic (line-only) objectives.
    MonotoneGradient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdsConfig {
    pub views: usize,
    pub iterations: usize,
    pub lr: f64,
    pub cosine_decay: bool,
    pub sds_weight: f64,
    pub line_weight: f64,
    /// Step band as fractions of `N`.
    pub band: (f64, f64),
    /// SDS draws averaged per iteration and view.
    pub draws: usize,
    /// Assumed camera-frame depth of the subject in the input view (m).
    pub subject_depth: f64,
    /// Ring radius; `None` keeps the input camera's distance.
    pub radius: Option<f64>,
    pub optimizer: SdsOptimizer,
    pub seed: u64,
}

impl Default for SdsConfig {
    fn default() -> Self {
        Self {
            views: 4,
            iterations: 500,
            lr: 0.01,
            cosine_decay: true,
            sds_weight: 1.0,
            line_weight: 1.0,
            band: (0.05, 0.8),
            draws: 1,
            subject_depth: 4.0,
            radius: None,
            optimizer: SdsOptimizer::Adam,
            seed: 0,
        }
    }
}

/// Standard SDS weighting `w(n) = 1 - alpha_bar(n)`.
pub fn default_weight(n: usize, sched: &NoiseSchedule) -> f64 {
    1.0 - sched.alpha_bar(n)
}

/// Inclusive step range for `band` fractions of `N`.
pub fn step_band(sched: &NoiseSchedule, band: (f64, f64)) -> Result<(usize, usize)> {
    let n = sched.steps() as f64;
    if !(0.0 <= band.0 && band.0 <= band.1 && band.1 <= 1.0) {
        return Err(Error::invalid(format!("step band {:?} outside [0, 1]", band)));
    }
    let lo = ((band.0 * n).ceil() as usize).max(1);
    let hi = ((band.1 * n).floor() as usize).clamp(lo, sched.steps());
    Ok((lo, hi))
}

/// SDS surrogate gradient for one draw: `w(n) (eps_hat - eps)`.
pub fn sds_gradient_at<D: Denoiser + ?Sized>(
    denoiser: &D,
    x: &[f64],
    cond: &Conditioning,
    sched: &NoiseSchedule,
    n: usize,
    eps: &[f64],
    weight: f64,
) -> Result<Vec<f64>> {
    let xn = q_sample(x, n, eps, sched)?;
    let x0 = denoiser.predict_x0(&xn, n, cond)?;
    let eps_hat = x0_to_eps(&xn, &x0, n, sched)?;
    Ok(eps_hat.iter().zip(eps).map(|(a, b)| weight * (a - b)).collect())
}

/// Mean of `draws` SDS gradients with `n` drawn uniformly from the band.
#[allow(clippy::too_many_arguments)]
pub fn sds_gradient_sampled<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    denoiser: &D,
    x: &[f64],
    cond: &Conditioning,
    sched: &NoiseSchedule,
    band: (usize, usize),
    draws: usize,
    weight_fn: &dyn Fn(usize, &NoiseSchedule) -> f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let draws = draws.max(1);
    let mut g = vec![0.0; x.len()];
    for _ in 0..draws {
        let n = rng.random_range(band.0..=band.1);
        let eps = standard_normal(rng, x.len());
        let gi = sds_gradient_at(denoiser, x, cond, sched, n, &eps, weight_fn(n, sched))?;
        for (a, b) in g.iter_mut().zip(gi) {
            *a += b / draws as f64;
        }
    }
    Ok(g)
}

/// Minimizes the SDS objective for a single free sample (no line terms).
pub fn optimize_sds<D: Denoiser + ?Sized>(
    denoiser: &D,
    init: &[f64],
    cond: &Conditioning,
    sched: &NoiseSchedule,
    cfg: &SdsConfig,
) -> Result<Vec<f64>> {
    let band = step_band(sched, cfg.band)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = init.to_vec();
    let mut adam = AdamState::new(x.len());
    let acfg = AdamConfig::with_lr(cfg.lr);
    for it in 0..cfg.iterations {
        let g = sds_gradient_sampled(denoiser, &x, cond, sched, band, cfg.draws, &default_weight, &mut rng)?;
        let lr = if cfg.cosine_decay { cosine_lr(cfg.lr, it, cfg.iterations) } else { cfg.lr };
        adam_step_scaled(&mut x, &g, &mut adam, &acfg, lr)?;
    }
    Ok(x)
}

/// Pixel-space residual of `x_v` against the lines induced by `x_u`.
/// The gradient is with respect to `x_v`.
pub fn cross_view_line_loss(
    x_u: &KeypointSeq2D,
    cam_u: &CameraTrajectory,
    x_v: &KeypointSeq2D,
    cam_v: &CameraTrajectory,
) -> Result<LineResidual> {
    let lines = pair_lines(x_u, cam_u, cam_v)?;
    point_line_residual(&lines, x_v)
}

pub fn pair_lines(x_u: &KeypointSeq2D, cam_u: &CameraTrajectory, cam_v: &CameraTrajectory) -> Result<EpipolarLineSet> {
    cam_u.require_frames(x_u.frames())?;
    cam_v.require_frames(x_u.frames())?;
    let fmats = trajectory_fundamentals(cam_u, cam_v)?;
    cross_view_epipolar_lines(x_u, &fmats)
}

/// Pairs `(u, v)` whose line loss is applied to view `v`: the input paired
/// with every view, plus ring neighbours among views `1..V` (cyclic, no
/// self pairs).
pub fn line_pairs(views: usize) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(usize, usize)> = (1..views).map(|v| (0, v)).collect();
    let m = views.saturating_sub(1);
    for i in 0..m {
        let (u, v) = (1 + i, 1 + (i + 1) % m);
        if u != v {
            pairs.push((u, v));
        }
    }
    pairs
}

/// Per-frame world positions of the subject, back-projected from the input
/// hip midpoint at `depth`.
pub fn estimate_subject_track(
    input: &KeypointSeq2D,
    cam: &CameraTrajectory,
    skel: &SkeletonSpec,
    depth: f64,
) -> Result<Vec<Vector3<f64>>> {
    cam.require_frames(input.frames())?;
    if !(depth > 0.0) {
        return Err(Error::invalid("subject depth must be positive"));
    }
    let kinv = cam.intrinsics.inverse_matrix();
    (0..input.frames())
        .map(|t| {
            let l = input.get(t, skel.left_hip);
            let r = input.get(t, skel.right_hip);
            let ray = kinv * Vector3::new(0.5 * (l[0] + r[0]), 0.5 * (l[1] + r[1]), 1.0);
            let xc = ray * (depth / ray.z);
            let e = &cam.extrinsics[t];
            Ok(e.rotation.transpose() * (xc - e.translation))
        })
        .collect()
}

/// All `V` cameras of a lift: the input trajectory followed by the ring.
pub fn lift_cameras(
    input: &KeypointSeq2D,
    input_cam: &CameraTrajectory,
    skel: &SkeletonSpec,
    cfg: &SdsConfig,
) -> Result<Vec<CameraTrajectory>> {
    let track = estimate_subject_track(input, input_cam, skel, cfg.subject_depth)?;
    let mut cams = vec![input_cam.clone()];
    cams.extend(ring_views(input_cam, cfg.views, &track[0], cfg.radius)?);
    Ok(cams)
}

/// Per-iteration diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiftRecord {
    /// Sum of pixel line losses over all pairs.
    pub line_loss_px: f64,
    /// Root-mean-square SDS gradient (canvas units).
    pub sds_rms: f64,
}

/// Views of a lift in progress. View 0 is the untouched input.
#[derive(Debug, Clone)]
pub struct MultiViewState {
    input: KeypointSeq2D,
    skeleton: SkeletonSpec,
    pub cameras: Vec<CameraTrajectory>,
    /// Packed canvas variables of views `1..V` (index 0 unused, empty).
    packed: Vec<Vec<f64>>,
    pub conditioning: Vec<Conditioning>,
    pub iteration: usize,
    pub history: Vec<LiftRecord>,
}

impl MultiViewState {
    /// Builds the ring views, their conditioning and the initial guesses:
    /// local pose copied from the input, root placed at the projection of
    /// the estimated subject track with the input's hip offset.
    pub fn initialize(
        input: &KeypointSeq2D,
        input_cam: &CameraTrajectory,
        skel: &SkeletonSpec,
        cfg: &SdsConfig,
    ) -> Result<Self> {
        skel.validate()?;
        if cfg.views < 2 {
            return Err(Error::invalid("lifting needs at least two views"));
        }
        let cameras = lift_cameras(input, input_cam, skel, cfg)?;
        let track = estimate_subject_track(input, input_cam, skel, cfg.subject_depth)?;
        let base = pack_canvas(input, skel, &input_cam.intrinsics)?;
        let k = skel.joints();
        let mut packed = vec![Vec::new()];
        let mut conditioning = Vec::with_capacity(cfg.views);
        conditioning.push(Conditioning::new(input_cam, &EpipolarLineSet::invalid(input.frames(), k))?);
        for (v, cam) in cameras.iter().enumerate().skip(1) {
            let mut x = base.clone();
            for t in 0..input.frames() {
                let p = project_point(&track[t], &cam.extrinsics[t], &cam.intrinsics).ok_or_else(|| {
                    Error::Degenerate(format!("subject behind virtual camera {v} at frame {t}"))
                })?;
                let mid = cam.intrinsics.to_canvas(p);
                let f = &mut x[t * 2 * k..(t + 1) * 2 * k];
                let (l, r) = (skel.left_hip, skel.right_hip);
                let half = [0.5 * (f[2 * l] - f[2 * r]), 0.5 * (f[2 * l + 1] - f[2 * r + 1])];
                f[2 * l] = mid[0] + half[0];
                f[2 * l + 1] = mid[1] + half[1];
                f[2 * r] = mid[0] - half[0];
                f[2 * r + 1] = mid[1] - half[1];
            }
            packed.push(x);
            let lines = pair_lines(input, input_cam, cam)?;
            conditioning.push(Conditioning::new(cam, &lines)?.with_view(v));
        }
        Ok(Self {
            input: input.clone(),
            skeleton: skel.clone(),
            cameras,
            packed,
            conditioning,
            iteration: 0,
            history: Vec::new(),
        })
    }

    pub fn views(&self) -> usize {
        self.cameras.len()
    }

    pub fn skeleton(&self) -> &SkeletonSpec {
        &self.skeleton
    }

    /// Packed canvas variables of view `v >= 1`.
    pub fn packed(&self, v: usize) -> Result<&[f64]> {
        self.check_free_view(v)?;
        Ok(&self.packed[v])
    }

    pub fn set_packed(&mut self, v: usize, x: Vec<f64>) -> Result<()> {
        self.check_free_view(v)?;
        if x.len() != self.packed[v].len() {
            return Err(Error::shape("packed view length mismatch"));
        }
        self.packed[v] = x;
        Ok(())
    }

    fn check_free_view(&self, v: usize) -> Result<()> {
        if v == 0 || v >= self.views() {
            return Err(Error::invalid(format!("view {v} is not an optimized view (1..{})", self.views())));
        }
        Ok(())
    }

    /// Global pixel sequence of view `v`.
    pub fn sequence(&self, v: usize) -> Result<KeypointSeq2D> {
        if v == 0 {
            return Ok(self.input.clone());
        }
        self.check_free_view(v)?;
        let vis = vec![true; self.input.frames() * self.input.joints()];
        unpack_canvas(&self.packed[v], &self.skeleton, &self.cameras[v].intrinsics, &vis)
    }

    pub fn sequences(&self) -> Result<Vec<KeypointSeq2D>> {
        (0..self.views()).map(|v| self.sequence(v)).collect()
    }

    /// Line loss over all pairs (pixels) and its gradient per free view in
    /// packed canvas units, normalized per keypoint.
    fn line_objective(&self, packed: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
        let k = self.skeleton.joints();
        let t_n = self.input.frames();
        let hips = (self.skeleton.left_hip, self.skeleton.right_hip);
        let vis = vec![true; t_n * k];
        let seqs: Vec<KeypointSeq2D> = (0..self.views())
            .map(|v| {
                if v == 0 {
                    Ok(self.input.clone())
                } else {
                    unpack_canvas(&packed[v], &self.skeleton, &self.cameras[v].intrinsics, &vis)
                }
            })
            .collect::<Result<_>>()?;
        let mut total = 0.0;
        let mut grads: Vec<Vec<f64>> = packed.iter().map(|p| vec![0.0; p.len()]).collect();
        for (u, v) in line_pairs(self.views()) {
            let res = cross_view_line_loss(&seqs[u], &self.cameras[u], &seqs[v], &self.cameras[v])?;
            total += res.loss;
            let intr = &self.cameras[v].intrinsics;
            let (sx, sy) = (0.5 * intr.width, 0.5 * intr.height);
            let scale = 1.0 / ((t_n * k) as f64 * sx);
            let d_global: Vec<f64> = res
                .grad
                .iter()
                .flat_map(|g| [g[0] * sx * scale, g[1] * sy * scale])
                .collect();
            for (a, b) in grads[v].iter_mut().zip(recompose_flat_backward(&d_global, k, hips)) {
                *a += b;
            }
        }
        Ok((total, grads))
    }

    /// Current total line loss in pixels.
    pub fn line_loss_px(&self) -> Result<f64> {
        Ok(self.line_objective(&self.packed)?.0)
    }

    /// Global canvas positions of view `v`, for diagnostics.
    pub fn global_canvas(&self, v: usize) -> Result<Vec<f64>> {
        self.check_free_view(v)?;
        Ok(recompose_flat(
            &self.packed[v],
            self.skeleton.joints(),
            (self.skeleton.left_hip, self.skeleton.right_hip),
        ))
    }
}

/// SDS gradient for free view `v` of `state` under its own conditioning.
pub fn sds_gradient<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    state: &MultiViewState,
    v: usize,
    denoiser: &D,
    sched: &NoiseSchedule,
    band: (usize, usize),
    weight_fn: &dyn Fn(usize, &NoiseSchedule) -> f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let x = state.packed(v)?;
    sds_gradient_sampled(denoiser, x, &state.conditioning[v], sched, band, 1, weight_fn, rng)
}

/// Runs the configured optimization on an initialized state.
pub fn optimize_views<D: Denoiser + ?Sized>(
    state: &mut MultiViewState,
    denoiser: &D,
    sched: &NoiseSchedule,
    cfg: &SdsConfig,
) -> Result<()> {
    let band = step_band(sched, cfg.band)?;
    let nv = state.views();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adams: Vec<AdamState> = state.packed.iter().map(|p| AdamState::new(p.len())).collect();
    let acfg = AdamConfig::with_lr(cfg.lr);
    let mut step = cfg.lr;
    for it in 0..cfg.iterations {
        let (line_loss, line_grads) = state.line_objective(&state.packed)?;
        let mut grads = line_grads;
        for g in grads.iter_mut() {
            g.iter_mut().for_each(|x| *x *= cfg.line_weight);
        }
        let mut sq = 0.0;
        let mut count = 0usize;
        if cfg.sds_weight != 0.0 {
            for v in 1..nv {
                let g = sds_gradient_sampled(
                    denoiser,
                    &state.packed[v],
                    &state.conditioning[v],
                    sched,
                    band,
                    cfg.draws,
                    &default_weight,
                    &mut rng,
                )?;
                for (a, b) in grads[v].iter_mut().zip(&g) {
                    *a += cfg.sds_weight * b;
                    sq += b * b;
                }
                count += g.len();
            }
        }
        state.history.push(LiftRecord {
            line_loss_px: line_loss,
            sds_rms: if count > 0 { (sq / count as f64).sqrt() } else { 0.0 },
        });
        match cfg.optimizer {
            SdsOptimizer::Adam => {
                let lr = if cfg.cosine_decay { cosine_lr(cfg.lr, it, cfg.iterations) } else { cfg.lr };
                for v in 1..nv {
                    adam_step_scaled(&mut state.packed[v], &grads[v], &mut adams[v], &acfg, lr)?;
                }
            }
            SdsOptimizer::MonotoneGradient => {
                let objective = |p: &[Vec<f64>]| -> Result<f64> {
                    Ok(cfg.line_weight * state.line_objective(p)?.0)
                };
                let current = cfg.line_weight * line_loss;
                let mut accepted = false;
                for _ in 0..40 {
                    let trial: Vec<Vec<f64>> = state
                        .packed
                        .iter()
                        .zip(&grads)
                        .map(|(p, g)| p.iter().zip(g).map(|(a, b)| a - step * b).collect())
                        .collect();
                    if objective(&trial)? <= current {
                        state.packed = trial;
                        accepted = true;
                        step *= 1.5;
                        break;
                    }
                    step *= 0.5;
                }
                if !accepted {
                    step = cfg.lr;
                }
            }
        }
        state.iteration += 1;
    }
    let final_loss = state.line_loss_px()?;
    if !final_loss.is_finite() {
        return Err(Error::Numerical("line loss diverged during lifting".into()));
    }
    Ok(())
}

/// Lifts one sequence to `cfg.views` views by score distillation.
pub fn lift_single_to_multi<D: Denoiser + ?Sized>(
    input: &KeypointSeq2D,
    input_cam: &CameraTrajectory,
    skel: &SkeletonSpec,
    denoiser: &D,
    sched: &NoiseSchedule,
    cfg: &SdsConfig,
) -> Result<MultiViewState> {
    let mut state = MultiViewState::initialize(input, input_cam, skel, cfg)?;
    optimize_views(&mut state, denoiser, sched, cfg)?;
    Ok(state)
}

/// Lifts by sampling a multi-view denoiser with the input view clamped.
pub fn lift_by_sampling<D: MultiViewDenoiser + ?Sized>(
    input: &KeypointSeq2D,
    input_cam: &CameraTrajectory,
    skel: &SkeletonSpec,
    denoiser: &D,
    sched: &NoiseSchedule,
    cfg: &SdsConfig,
) -> Result<MultiViewState> {
    let mut state = MultiViewState::initialize(input, input_cam, skel, cfg)?;
    let reference = pack_canvas(input, skel, &input_cam.intrinsics)?;
    let mut conds = state.conditioning.clone();
    // the reference view is conditioned on its own camera only
    conds[0] = Conditioning::new(input_cam, &EpipolarLineSet::invalid(input.frames(), skel.joints()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let out = reverse_sample_multiview(denoiser, &reference, &conds, sched, &mut rng)?;
    for (v, x) in out.into_iter().enumerate().skip(1) {
        state.packed[v] = x;
    }
    state.history.push(LiftRecord {
        line_loss_px: state.line_loss_px()?,
        sds_rms: 0.0,
    });
    Ok(state)
}
