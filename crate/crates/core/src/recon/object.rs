use nalgebra::{Matrix3, Vector3};

use super::align::{kabsch, matrix_to_rot6d, rot6d_to_matrix, Rot6dJacobian};
use crate::camgeo::{project, CameraTrajectory};
use crate::diffusion::{adam_step_scaled, cosine_lr, AdamConfig, AdamState};
use crate::error::{Error, Result};
use crate::motion::{KeypointSeq2D, Seq3D};

/// Keypoints on the canonical object mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalKeypoints {
    pub points: Vec<Vector3<f64>>,
    /// Indices of the pair used for scale estimation.
    pub reference_pair: (usize, usize),
}

impl CanonicalKeypoints {
    pub fn new(points: Vec<Vector3<f64>>, reference_pair: (usize, usize)) -> Result<Self> {
        let k = Self {
            points,
            reference_pair,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.reference_pair;
        if a >= self.points.len() || b >= self.points.len() || a == b {
            return Err(Error::invalid("reference pair indices invalid"));
        }
        if (self.points[a] - self.points[b]).norm() <= 1e-12 {
            return Err(Error::Degenerate("reference pair has zero separation".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Per-frame rotation (6D) and translation with one global scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectPose {
    pub rot6d: Vec<[f64; 6]>,
    pub translation: Vec<Vector3<f64>>,
    pub scale: f64,
}

impl ObjectPose {
    pub fn frames(&self) -> usize {
        self.rot6d.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.rot6d.len() != self.translation.len() {
            return Err(Error::shape("rotation and translation tracks differ in length"));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::invalid("object scale must be positive"));
        }
        Ok(())
    }

    pub fn rotation(&self, t: usize) -> Result<Matrix3<f64>> {
        rot6d_to_matrix(&self.rot6d[t])
    }
}

/// `s_hat = |q_a - q_b| / |p_a - p_b|` over the reference pair.
pub fn estimate_scale(frame: &[Vector3<f64>], canon: &CanonicalKeypoints) -> Result<f64> {
    canon.validate()?;
    if frame.len() != canon.len() {
        return Err(Error::shape("frame and canonical keypoints differ in count"));
    }
    let (a, b) = canon.reference_pair;
    Ok((frame[a] - frame[b]).norm() / (canon.points[a] - canon.points[b]).norm())
}

/// Closed-form rotation and translation aligning `scale * P` to the visible
/// entries of `frame`, plus the RMS residual.
pub fn init_pose_frame(
    frame: &[Vector3<f64>],
    canon: &CanonicalKeypoints,
    scale: f64,
    visible: &[bool],
) -> Result<(Matrix3<f64>, Vector3<f64>, f64)> {
    if frame.len() != canon.len() || visible.len() != canon.len() {
        return Err(Error::shape("frame, visibility and canonical keypoints differ in count"));
    }
    let (src, dst): (Vec<_>, Vec<_>) = canon
        .points
        .iter()
        .zip(frame)
        .zip(visible)
        .filter(|(_, v)| **v)
        .map(|((p, q), _)| (p * scale, *q))
        .unzip();
    let (r, t) = kabsch(&src, &dst)?;
    let sq: f64 = src.iter().zip(&dst).map(|(p, q)| (r * p + t - q).norm_squared()).sum();
    Ok((r, t, (sq / src.len() as f64).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitOptimizer {
    /// Adam with optional cosine decay.
    Adam,
    /// Adam proposals accepted only if the objective does not increase;
    /// rejected proposals halve the step for the next attempt.
    MonotoneAdam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectFitConfig {
    pub iterations: usize,
    pub lr: f64,
    pub cosine_decay: bool,
    pub smooth_weight: f64,
    pub optimizer: FitOptimizer,
}

impl Default for ObjectFitConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            lr: 0.05,
            cosine_decay: true,
            smooth_weight: 0.1,
            optimizer: FitOptimizer::Adam,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectFit {
    pub pose: ObjectPose,
    pub fit_loss: f64,
    pub smooth_loss: f64,
    /// Objective before optimization and after every accepted step.
    pub history: Vec<f64>,
    pub init_smooth_loss: f64,
}

/// Objective terms and their gradients for a pose.
#[derive(Debug, Clone)]
pub struct ObjectiveEval {
    pub fit: f64,
    pub smooth: f64,
    /// Gradient of `fit + smooth_weight * smooth`, packed per frame as
    /// six rotation values then three translation values.
    pub grad: Vec<f64>,
}

impl ObjectiveEval {
    pub fn total(&self, smooth_weight: f64) -> f64 {
        self.fit + smooth_weight * self.smooth
    }
}

/// Masked mean Euclidean fit error and mean consecutive 6D difference.
pub fn object_objective(
    pose: &ObjectPose,
    track: &Seq3D,
    canon: &CanonicalKeypoints,
    visible: &[bool],
    smooth_weight: f64,
) -> Result<ObjectiveEval> {
    let (t_n, m) = (pose.frames(), canon.len());
    if track.frames() != t_n || track.joints() != m || visible.len() != m {
        return Err(Error::shape("object track, pose and canonical keypoints disagree"));
    }
    let norm = (t_n * m) as f64;
    let mut fit = 0.0;
    let mut grad = vec![0.0; t_n * 9];
    for t in 0..t_n {
        let jac = Rot6dJacobian::new(&pose.rot6d[t])?;
        let r = jac.matrix();
        let mut g_r = Matrix3::zeros();
        let mut g_t = Vector3::zeros();
        for (i, p) in canon.points.iter().enumerate() {
            if !visible[i] {
                continue;
            }
            let q = track.get(t, i);
            let e = pose.scale * (r * p) + pose.translation[t] - Vector3::new(q[0], q[1], q[2]);
            let d = e.norm();
            fit += d;
            if d > 0.0 {
                let u = e / (d * norm);
                g_r += u * (pose.scale * p).transpose();
                g_t += u;
            }
        }
        let g6 = jac.backward(&g_r);
        grad[t * 9..t * 9 + 6].copy_from_slice(&g6);
        grad[t * 9 + 6..t * 9 + 9].copy_from_slice(g_t.as_slice());
    }
    fit /= norm;
    let mut smooth = 0.0;
    if t_n > 1 {
        let sn = (t_n - 1) as f64;
        for t in 0..t_n - 1 {
            let diff: [f64; 6] = std::array::from_fn(|i| pose.rot6d[t][i] - pose.rot6d[t + 1][i]);
            let d = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
            smooth += d;
            if d > 0.0 {
                for (i, dv) in diff.iter().enumerate() {
                    let g = smooth_weight * dv / (d * sn);
                    grad[t * 9 + i] += g;
                    grad[(t + 1) * 9 + i] -= g;
                }
            }
        }
        smooth /= sn;
    }
    Ok(ObjectiveEval { fit, smooth, grad })
}

fn pack(pose: &ObjectPose) -> Vec<f64> {
    let mut v = Vec::with_capacity(pose.frames() * 9);
    for t in 0..pose.frames() {
        v.extend_from_slice(&pose.rot6d[t]);
        v.extend(pose.translation[t].iter());
    }
    v
}

fn unpack(v: &[f64], scale: f64) -> ObjectPose {
    let mut rot6d = Vec::with_capacity(v.len() / 9);
    let mut translation = Vec::with_capacity(v.len() / 9);
    for c in v.chunks_exact(9) {
        rot6d.push(std::array::from_fn(|i| c[i]));
        translation.push(Vector3::new(c[6], c[7], c[8]));
    }
    ObjectPose {
        rot6d,
        translation,
        scale,
    }
}

/// Per-frame closed-form initialization with the median scale.
pub fn init_object_trajectory(track: &Seq3D, canon: &CanonicalKeypoints, visible: &[bool]) -> Result<ObjectPose> {
    if track.joints() != canon.len() || visible.len() != canon.len() {
        return Err(Error::shape("object track and canonical keypoints differ in count"));
    }
    let (a, b) = canon.reference_pair;
    if !visible[a] || !visible[b] {
        return Err(Error::UnderConstrained("reference pair is not visible".into()));
    }
    let frames: Vec<Vec<Vector3<f64>>> = (0..track.frames())
        .map(|t| track.frame(t).iter().map(|q| Vector3::new(q[0], q[1], q[2])).collect())
        .collect();
    let mut scales = frames
        .iter()
        .map(|f| estimate_scale(f, canon))
        .collect::<Result<Vec<f64>>>()?;
    scales.sort_by(|x, y| x.total_cmp(y));
    let n = scales.len();
    if n == 0 {
        return Err(Error::invalid("empty object track"));
    }
    let scale = if n % 2 == 1 {
        scales[n / 2]
    } else {
        0.5 * (scales[n / 2 - 1] + scales[n / 2])
    };
    if !(scale > 0.0) {
        return Err(Error::Degenerate("object scale estimate is zero".into()));
    }
    let mut rot6d = Vec::with_capacity(n);
    let mut translation = Vec::with_capacity(n);
    for f in &frames {
        let (r, t, _) = init_pose_frame(f, canon, scale, visible)?;
        rot6d.push(matrix_to_rot6d(&r));
        translation.push(t);
    }
    Ok(ObjectPose {
        rot6d,
        translation,
        scale,
    })
}

/// Refines `init` with the scale held fixed.
pub fn refine_object_trajectory(
    init: &ObjectPose,
    track: &Seq3D,
    canon: &CanonicalKeypoints,
    visible: &[bool],
    cfg: &ObjectFitConfig,
) -> Result<ObjectFit> {
    init.validate()?;
    let scale = init.scale;
    let mut x = pack(init);
    let mut adam = AdamState::new(x.len());
    let acfg = AdamConfig::with_lr(cfg.lr);
    let w = cfg.smooth_weight;
    let first = object_objective(init, track, canon, visible, w)?;
    let mut current = first.total(w);
    let mut history = vec![current];
    let mut damping = 1.0;
    for it in 0..cfg.iterations {
        let base_lr = if cfg.cosine_decay { cosine_lr(cfg.lr, it, cfg.iterations) } else { cfg.lr };
        let g = object_objective(&unpack(&x, scale), track, canon, visible, w)?.grad;
        match cfg.optimizer {
            FitOptimizer::Adam => {
                adam_step_scaled(&mut x, &g, &mut adam, &acfg, base_lr)?;
                current = object_objective(&unpack(&x, scale), track, canon, visible, w)?.total(w);
                history.push(current);
            }
            FitOptimizer::MonotoneAdam => {
                let mut trial = x.clone();
                let mut trial_state = adam.clone();
                adam_step_scaled(&mut trial, &g, &mut trial_state, &acfg, base_lr * damping)?;
                let value = match object_objective(&unpack(&trial, scale), track, canon, visible, w) {
                    Ok(e) => e.total(w),
                    Err(_) => f64::INFINITY,
                };
                if value <= current {
                    x = trial;
                    adam = trial_state;
                    current = value;
                    history.push(current);
                    damping = (damping * 1.25).min(1.0);
                } else {
                    // keep the moment estimates moving so the next proposal
                    // differs even at the same point
                    adam = trial_state;
                    damping *= 0.5;
                }
            }
        }
        if !current.is_finite() {
            return Err(Error::Numerical("object fit diverged".into()));
        }
    }
    let pose = unpack(&x, scale);
    let e = object_objective(&pose, track, canon, visible, w)?;
    Ok(ObjectFit {
        pose,
        fit_loss: e.fit,
        smooth_loss: e.smooth,
        history,
        init_smooth_loss: first.smooth,
    })
}

/// Initialization followed by joint refinement.
pub fn fit_object_trajectory(
    track: &Seq3D,
    canon: &CanonicalKeypoints,
    visible: &[bool],
    cfg: &ObjectFitConfig,
) -> Result<ObjectFit> {
    let init = init_object_trajectory(track, canon, visible)?;
    refine_object_trajectory(&init, track, canon, visible, cfg)
}

/// Canonical keypoints transformed by every frame of `pose`.
pub fn keypoints_from_pose(pose: &ObjectPose, canon: &CanonicalKeypoints) -> Result<Seq3D> {
    pose.validate()?;
    let mut coords = Vec::with_capacity(pose.frames() * canon.len());
    for t in 0..pose.frames() {
        let r = pose.rotation(t)?;
        for p in &canon.points {
            let q = pose.scale * (r * p) + pose.translation[t];
            coords.push([q.x, q.y, q.z]);
        }
    }
    Seq3D::new(pose.frames(), canon.len(), coords)
}

/// Projected keypoints of `pose` through `camera`.
pub fn project_keypoints(pose: &ObjectPose, canon: &CanonicalKeypoints, camera: &CameraTrajectory) -> Result<KeypointSeq2D> {
    let pts = keypoints_from_pose(pose, canon)?;
    camera.require_frames(pts.frames())?;
    let mut coords = Vec::with_capacity(pts.coords().len());
    let mut vis = Vec::with_capacity(pts.coords().len());
    for t in 0..pts.frames() {
        let p = project(pts.frame(t), &camera.extrinsics[t], &camera.intrinsics);
        coords.extend(p.points);
        vis.extend(p.valid);
    }
    KeypointSeq2D::with_visibility(pts.frames(), pts.joints(), coords, vis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recon::align::geodesic_angle;
    use nalgebra::{Rotation3, UnitQuaternion};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn box_keypoints() -> CanonicalKeypoints {
        let mut pts = Vec::new();
        for &x in &[-0.3, 0.3] {
            for &y in &[-0.2, 0.2] {
                for &z in &[-0.15, 0.15] {
                    pts.push(Vector3::new(x, y, z));
                }
            }
        }
        CanonicalKeypoints::new(pts, (0, 7)).unwrap()
    }

    fn smooth_track(t_n: usize, scale: f64) -> (Vec<Matrix3<f64>>, Vec<Vector3<f64>>, Seq3D) {
        let canon = box_keypoints();
        let mut rs = Vec::new();
        let mut ts = Vec::new();
        let mut coords = Vec::new();
        for t in 0..t_n {
            let a = t as f64 * 0.05;
            let r = (Rotation3::from_axis_angle(&Vector3::y_axis(), 0.4 + a)
                * Rotation3::from_axis_angle(&Vector3::x_axis(), 0.2 - 0.5 * a))
            .into_inner();
            let tr = Vector3::new(0.1 * a, 0.9 - 0.02 * t as f64, 3.0 + 0.3 * a);
            for p in &canon.points {
                let q = scale * (r * p) + tr;
                coords.push([q.x, q.y, q.z]);
            }
            rs.push(r);
            ts.push(tr);
        }
        (rs, ts, Seq3D::new(t_n, canon.len(), coords).unwrap())
    }

    #[test]
    fn scale_estimates() {
        let canon = CanonicalKeypoints::new(
            vec![Vector3::zeros(), Vector3::new(2.0, 0.0, 0.0), Vector3::new(0.0, 1.0, 0.0)],
            (0, 1),
        )
        .unwrap();
        let q = vec![Vector3::zeros(), Vector3::new(0.0, 4.0, 0.0), Vector3::zeros()];
        assert_eq!(estimate_scale(&q, &canon).unwrap(), 2.0);
        assert_eq!(estimate_scale(&canon.points, &canon).unwrap(), 1.0);
        assert!(CanonicalKeypoints::new(vec![Vector3::zeros(), Vector3::zeros()], (0, 1)).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let s = rng.random_range(0.1..10.0);
            let r = UnitQuaternion::from_euler_angles(rng.random(), rng.random(), rng.random());
            let q: Vec<_> = canon.points.iter().map(|p| s * (r * p) + Vector3::new(1.0, 2.0, 3.0)).collect();
            assert!((estimate_scale(&q, &canon).unwrap() - s).abs() < 1e-9);
        }
    }

    #[test]
    fn init_frame_cases() {
        let canon = box_keypoints();
        let vis = vec![true; 8];
        let (r, t, res) = init_pose_frame(&canon.points, &canon, 1.0, &vis).unwrap();
        assert!((r - Matrix3::identity()).norm() < 1e-12 && t.norm() < 1e-12 && res < 1e-12);
        let r0 = Rotation3::from_euler_angles(0.3, -1.1, 2.0).into_inner();
        let t0 = Vector3::new(0.5, -0.2, 4.0);
        let q: Vec<_> = canon.points.iter().map(|p| r0 * p + t0).collect();
        let (r, t, _) = init_pose_frame(&q, &canon, 1.0, &vis).unwrap();
        assert!((r - r0).abs().max() < 1e-9 && (t - t0).abs().max() < 1e-9);
        let mirrored: Vec<_> = canon.points.iter().map(|p| Vector3::new(-p.x, p.y, p.z)).collect();
        let (r, _, _) = init_pose_frame(&mirrored, &canon, 1.0, &vis).unwrap();
        assert!((r.determinant() - 1.0).abs() < 1e-12);
        let few = vec![true, true, false, false, false, false, false, false];
        assert!(init_pose_frame(&q, &canon, 1.0, &few).is_err());
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let canon = box_keypoints();
        let (_, _, track) = smooth_track(4, 1.3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pose = init_object_trajectory(&track, &canon, &[true; 8]).unwrap();
        for r in &mut pose.rot6d {
            r.iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
        }
        for t in &mut pose.translation {
            *t += Vector3::new(0.05, -0.03, 0.02);
        }
        let vis = [true, true, false, true, true, true, true, true];
        let g = object_objective(&pose, &track, &canon, &vis, 0.1).unwrap().grad;
        let x = pack(&pose);
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += 1e-6;
            let mut xm = x.clone();
            xm[i] -= 1e-6;
            let f = |v: &[f64]| {
                object_objective(&unpack(v, pose.scale), &track, &canon, &vis, 0.1)
                    .unwrap()
                    .total(0.1)
            };
            let fd = (f(&xp) - f(&xm)) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-6, "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn noiseless_track_recovered() {
        let canon = box_keypoints();
        let scale = 1.7;
        let (rs, ts, track) = smooth_track(30, scale);
        let fit = fit_object_trajectory(&track, &canon, &[true; 8], &ObjectFitConfig::default()).unwrap();
        assert!((fit.pose.scale - scale).abs() < 1e-4);
        for t in 0..30 {
            let r = fit.pose.rotation(t).unwrap();
            assert!(geodesic_angle(&r, &rs[t]) < 1e-3, "frame {t}: {}", geodesic_angle(&r, &rs[t]));
            assert!((fit.pose.translation[t] - ts[t]).norm() < 1e-3);
        }
        let replay = keypoints_from_pose(&fit.pose, &canon).unwrap();
        let e = object_objective(&fit.pose, &track, &canon, &[true; 8], 0.1).unwrap();
        let mean: f64 = replay
            .coords()
            .iter()
            .zip(track.coords())
            .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt())
            .sum::<f64>()
            / replay.coords().len() as f64;
        assert!((mean - e.fit).abs() < 1e-12 && (fit.fit_loss - e.fit).abs() < 1e-12);
    }

    #[test]
    fn single_frame_matches_init() {
        let canon = box_keypoints();
        let (rs, ts, track) = smooth_track(1, 1.0);
        let cfg = ObjectFitConfig {
            smooth_weight: 0.0,
            ..ObjectFitConfig::default()
        };
        let fit = fit_object_trajectory(&track, &canon, &[true; 8], &cfg).unwrap();
        assert!(geodesic_angle(&fit.pose.rotation(0).unwrap(), &rs[0]) < 1e-4);
        assert!((fit.pose.translation[0] - ts[0]).norm() < 1e-4);
    }

    #[test]
    fn jitter_is_smoothed_monotonically() {
        let canon = box_keypoints();
        let (_, _, track) = smooth_track(20, 1.0);
        let mut init = init_object_trajectory(&track, &canon, &[true; 8]).unwrap();
        for (t, r) in init.rot6d.iter_mut().enumerate() {
            let s = if t % 2 == 0 { 0.05 } else { -0.05 };
            r[1] += s;
            r[3] -= s;
        }
        let cfg = ObjectFitConfig {
            iterations: 300,
            optimizer: FitOptimizer::MonotoneAdam,
            ..ObjectFitConfig::default()
        };
        let fit = refine_object_trajectory(&init, &track, &canon, &[true; 8], &cfg).unwrap();
        assert!(fit.smooth_loss < fit.init_smooth_loss);
        for w in fit.history.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert!(fit.history.len() > 10);
    }

    #[test]
    fn pose_to_keypoints() {
        let canon = box_keypoints();
        let id = ObjectPose {
            rot6d: vec![[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]],
            translation: vec![Vector3::zeros()],
            scale: 1.0,
        };
        let k = keypoints_from_pose(&id, &canon).unwrap();
        for (a, b) in k.coords().iter().zip(&canon.points) {
            assert_eq!(*a, [b.x, b.y, b.z]);
        }
        let shifted = ObjectPose {
            translation: vec![Vector3::new(1.0, 2.0, 3.0)],
            ..id
        };
        let k = keypoints_from_pose(&shifted, &canon).unwrap();
        for (a, b) in k.coords().iter().zip(&canon.points) {
            assert_eq!(*a, [b.x + 1.0, b.y + 2.0, b.z + 3.0]);
        }
    }
}
