//! Acceptance criteria, one check per criterion. Runs without the libtest
//! harness so every criterion prints a PASS/FAIL line; the process fails if
//! any criterion fails.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use kplift::camgeo::{
    cross_view_epipolar_lines, project_sequence, trajectory_fundamentals, CameraExtrinsic, CameraIntrinsics,
    CameraTrajectory,
};
use kplift::config::Config;
use kplift::diffusion::{
    multiview_training_loss_with_noise, pack_canvas, q_sample, reverse_sample, sample_batch, training_loss,
    training_loss_with_noise, Conditioning, DataSource, Denoiser, DenoiserDims, DenoiserParams, MultiViewItem,
    NoiseSchedule, TrainingBatch, TrainingItem,
};
use kplift::metrics::{foot_sliding, j2d, j2d_centered, mpjpe, pa_mpjpe, t_root, GroundPlane};
use kplift::motion::{KeypointSeq2D, Seq3D, SkeletonSpec};
use kplift::pipeline::{self, walker_sequence, EvaluateInputs, LiftStage, WalkerParams};
use kplift::recon::{
    chamfer_2d, chamfer_align_frame, fit_object_trajectory, matrix_to_rot6d, render_mask, rot6d_to_matrix,
    triangulate_sequence, umeyama, CanonicalKeypoints, ChamferAlignConfig, ObjectFitConfig, TriMesh,
    TriangulationConfig,
};
use kplift::sds::{cross_view_line_loss, lift_cameras, lift_single_to_multi, optimize_sds, SdsConfig};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn lib<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

// ---------------------------------------------------------------------------
// independent helpers

fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let q = Quaternion::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    );
    *UnitQuaternion::from_quaternion(q).to_rotation_matrix().matrix()
}

fn angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    (((a.transpose() * b).trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

/// Camera at `eye` looking at `target` with z forward, x right, y down
/// relative to world -y... any right-handed frame with +z towards the
/// target works here.
fn look_at(eye: Vector3<f64>, target: Vector3<f64>) -> CameraExtrinsic {
    let z = (target - eye).normalize();
    let helper = if z.y.abs() < 0.9 { Vector3::y() } else { Vector3::x() };
    let x = helper.cross(&z).normalize();
    let y = z.cross(&x);
    let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    CameraExtrinsic {
        rotation: r,
        translation: -(r * eye),
    }
}

fn pinhole(intr: &CameraIntrinsics, e: &CameraExtrinsic, x: &Vector3<f64>) -> [f64; 3] {
    let c = e.rotation * x + e.translation;
    [intr.fx * c.x + intr.cx * c.z, intr.fy * c.y + intr.cy * c.z, c.z]
}

fn random_trajectory(rng: &mut ChaCha8Rng, frames: usize, intr: CameraIntrinsics) -> CameraTrajectory {
    let extrinsics = (0..frames)
        .map(|_| {
            let dir = Vector3::new(
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal) * 0.3,
                rng.sample::<f64, _>(StandardNormal),
            )
            .normalize();
            let eye = dir * rng.random_range(3.0..6.0);
            let target = Vector3::new(
                rng.random_range(-0.2..0.2),
                rng.random_range(-0.2..0.2),
                rng.random_range(-0.2..0.2),
            );
            look_at(eye, target)
        })
        .collect();
    CameraTrajectory {
        extrinsics,
        intrinsics: intr,
    }
}

fn random_cloud(rng: &mut ChaCha8Rng, frames: usize, joints: usize, half: f64) -> Seq3D {
    let coords = (0..frames * joints)
        .map(|_| {
            [
                rng.random_range(-half..half),
                rng.random_range(-half..half),
                rng.random_range(-half..half),
            ]
        })
        .collect();
    Seq3D::new(frames, joints, coords).unwrap()
}

fn mean_distance_mm(a: &Seq3D, b: &Seq3D) -> f64 {
    let s: f64 = a
        .coords()
        .iter()
        .zip(b.coords())
        .map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt())
        .sum();
    1000.0 * s / a.coords().len() as f64
}

/// Posterior mean of `x0` for i.i.d. Gaussian data under a linear schedule,
/// with the cumulative product recomputed here from the betas.
struct GaussianOracle {
    means: Vec<Vec<f64>>,
    var: f64,
    alpha_bars: Vec<f64>,
}

impl GaussianOracle {
    fn new(means: Vec<Vec<f64>>, var: f64, steps: usize, b0: f64, b1: f64) -> Self {
        let mut ab = 1.0;
        let alpha_bars = (0..steps)
            .map(|i| {
                let beta = if steps == 1 { b0 } else { b0 + (b1 - b0) * i as f64 / (steps - 1) as f64 };
                ab *= 1.0 - beta;
                ab
            })
            .collect();
        Self { means, var, alpha_bars }
    }
}

impl Denoiser for GaussianOracle {
    fn predict_x0(&self, xn: &[f64], n: usize, cond: &Conditioning) -> kplift::Result<Vec<f64>> {
        let ab = self.alpha_bars[n - 1];
        let mean = &self.means[cond.view.min(self.means.len() - 1)];
        // x_n = sqrt(ab) x0 + sqrt(1 - ab) eps, x0 ~ N(m, var)
        let gain = self.var * ab.sqrt() / (ab * self.var + 1.0 - ab);
        Ok(xn
            .iter()
            .zip(mean.iter().cycle())
            .map(|(x, m)| m + gain * (x - ab.sqrt() * m))
            .collect())
    }
}

// ---------------------------------------------------------------------------
// criteria

fn c1_epipolar() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let intr = CameraIntrinsics::new(1000.0, 1000.0, 512.0, 384.0, 1024.0, 768.0).unwrap();
    let (mut worst_res, mut worst_null) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let frames = 8;
        let joints = 17;
        let seq = random_cloud(&mut rng, frames, joints, 0.8);
        let cu = random_trajectory(&mut rng, frames, intr);
        let cv = random_trajectory(&mut rng, frames, intr);
        let xu = lib(project_sequence(&seq, &cu))?;
        let xv = lib(project_sequence(&seq, &cv))?;
        let fmats = lib(trajectory_fundamentals(&cu, &cv))?;
        let lines = lib(cross_view_epipolar_lines(&xu, &fmats))?;
        for t in 0..frames {
            for k in 0..joints {
                let [a, b, c] = lines.get(t, k);
                let p = xv.get(t, k);
                let d = (a * p[0] + b * p[1] + c).abs() / (a * a + b * b).sqrt();
                worst_res = worst_res.max(d);
            }
            // epipole: camera u's center seen by camera v
            let center = cu.extrinsics[t].rotation.transpose() * -cu.extrinsics[t].translation;
            let e = pinhole(&intr, &cv.extrinsics[t], &center);
            let ev = Vector3::new(e[0], e[1], e[2]).normalize();
            let f = fmats[t].0 / fmats[t].0.norm();
            worst_null = worst_null.max((f.transpose() * ev).norm());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst_res < 1e-6, format!("max line residual {worst_res:.3e} px"))?;
    ensure(worst_null < 1e-6, format!("max |F^T e| {worst_null:.3e}"))?;
    ensure(secs < 10.0, format!("took {secs:.1} s"))?;
    Ok(format!("max residual {worst_res:.2e} px, max |F^T e| {worst_null:.2e}, {secs:.2} s"))
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn toy_items(rng: &mut ChaCha8Rng, count: usize, frames: usize, joints: usize) -> Vec<TrainingItem> {
    (0..count)
        .map(|i| {
            let mut cond = Conditioning::unconditioned(frames, joints);
            for c in &mut cond.camera {
                for v in c.iter_mut() {
                    *v += rng.random_range(-0.1..0.1);
                }
            }
            for l in &mut cond.lines {
                let th: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                *l = [th.cos(), th.sin(), rng.random_range(-0.5..0.5)];
            }
            let target = (0..frames * joints * 2).map(|_| rng.random_range(-0.8..0.8)).collect();
            let source = if i % 3 == 2 { DataSource::ReprojectedLocal } else { DataSource::VideoGlobal };
            TrainingItem::new(target, source, cond, vec![true; frames * joints], (0, 1)).unwrap()
        })
        .collect()
}

fn c2_diffusion() -> Check {
    let start = Instant::now();
    let (steps, b0, b1) = (1000, 1e-4, 0.02);
    let sched = lib(NoiseSchedule::linear(steps, b0, b1))?;
    let mut rng = ChaCha8Rng::seed_from_u64(202);

    // forward marginal
    let mut ab = 1.0;
    let mut moments = Vec::new();
    for n in 1..=steps {
        ab *= 1.0 - (b0 + (b1 - b0) * (n - 1) as f64 / (steps - 1) as f64);
        if ![50, 300, 700].contains(&n) {
            continue;
        }
        // scale the clean value so the marginal mean stays well resolved
        let x0 = vec![2.0 / ab.sqrt(); 10_000];
        let eps: Vec<f64> = (0..10_000).map(|_| rng.sample(StandardNormal)).collect();
        let xn = lib(q_sample(&x0, n, &eps, &sched))?;
        let m = xn.iter().sum::<f64>() / xn.len() as f64;
        let v = xn.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xn.len() - 1) as f64;
        let (em, ev) = (2.0, 1.0 - ab);
        ensure(rel_err(m, em) < 0.05, format!("n={n}: mean {m} vs {em}"))?;
        ensure(rel_err(v, ev) < 0.05, format!("n={n}: var {v} vs {ev}"))?;
        moments.push(rel_err(m, em).max(rel_err(v, ev)));
    }

    // gradients of a small model, single-view and cross-view
    let (frames, joints) = (3, 2);
    let dims = DenoiserDims::new(joints, 6, 1, 4);
    let params = lib(DenoiserParams::init(dims, &mut rng))?;
    let mv_params = lib(params.with_cross_view(&mut rng))?;
    ensure(mv_params.len() <= 500, format!("model has {} parameters", mv_params.len()))?;
    let items = toy_items(&mut rng, 3, frames, joints);
    let batch = TrainingBatch { items: items.clone() };
    let draws: Vec<(usize, Vec<f64>)> = items
        .iter()
        .map(|it| {
            (
                rng.random_range(1..=steps),
                (0..it.target.len()).map(|_| rng.sample(StandardNormal)).collect(),
            )
        })
        .collect();
    let mv_items = vec![MultiViewItem {
        views: items.iter().enumerate().map(|(v, it)| {
            let mut it = it.clone();
            it.cond = it.cond.clone().with_view(v);
            it
        }).collect(),
    }];
    let mv_draws = vec![(
        400usize,
        items
            .iter()
            .map(|it| (0..it.target.len()).map(|_| rng.sample(StandardNormal)).collect())
            .collect::<Vec<Vec<f64>>>(),
    )];
    let lw = 0.3;
    let h = 1e-6;
    let mut worst = 0.0f64;
    for multi in [false, true] {
        let p0 = if multi { mv_params.clone() } else { params.clone() };
        let eval = |p: &DenoiserParams| -> kplift::Result<_> {
            if multi {
                multiview_training_loss_with_noise(p, &mv_items, &sched, &mv_draws, lw)
            } else {
                training_loss_with_noise(p, &batch, &sched, &draws, lw)
            }
        };
        let g = lib(eval(&p0))?.grad;
        for i in 0..p0.len() {
            let mut pp = p0.clone();
            pp.values_mut()[i] += h;
            let mut pm = p0.clone();
            pm.values_mut()[i] -= h;
            let fd = (lib(eval(&pp))?.loss - lib(eval(&pm))?.loss) / (2.0 * h);
            let e = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-6);
            worst = worst.max(e);
        }
    }
    // input gradient of the network itself
    let cond = &items[0].cond;
    let xn: Vec<f64> = (0..frames * joints * 2).map(|_| rng.sample(StandardNormal)).collect();
    let w: Vec<f64> = (0..frames * joints * 2).map(|_| rng.sample(StandardNormal)).collect();
    let (_, cache) = lib(params.forward(&xn, 37, cond))?;
    let (_, gx) = lib(params.backward(&cache, &w))?;
    for i in 0..xn.len() {
        let f = |d: f64| -> Result<f64, String> {
            let mut x = xn.clone();
            x[i] += d;
            let (y, _) = lib(params.forward(&x, 37, cond))?;
            Ok(y.iter().zip(&w).map(|(a, b)| a * b).sum())
        };
        let fd = (f(h)? - f(-h)?) / (2.0 * h);
        worst = worst.max((gx[i] - fd).abs() / gx[i].abs().max(fd.abs()).max(1e-6));
    }
    ensure(worst < 1e-4, format!("gradient relative error {worst:.3e}"))?;

    // ancestral sampling with the analytic Gaussian denoiser
    let (mu, var) = (0.6, 0.25);
    let oracle = GaussianOracle::new(vec![vec![mu]], var, steps, b0, b1);
    let cond = Conditioning::unconditioned(100, 20);
    let x = lib(reverse_sample(&oracle, &cond, &sched, &mut rng))?;
    let m = x.iter().sum::<f64>() / x.len() as f64;
    let v = x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64;
    ensure((m - mu).abs() < 0.05, format!("sample mean {m}"))?;
    ensure(rel_err(v, var) < 0.10, format!("sample variance {v}"))?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, format!("took {secs:.1} s"))?;
    Ok(format!(
        "moments rel err <= {:.3}, grad rel err {worst:.2e}, sampled mean {m:.4} var {v:.4}, {secs:.1} s",
        moments.iter().copied().fold(0.0, f64::max)
    ))
}

fn smoke_config(steps: usize) -> Config {
    let mut cfg = Config::default();
    cfg.seed = 7;
    cfg.simulate.train_sequences = 16;
    cfg.simulate.test_sequences = 2;
    cfg.training.sv_steps = steps;
    cfg.training.validation_fraction = 0.0;
    cfg.training.validation_every = steps;
    cfg
}

fn c3_training_smoke() -> Check {
    let start = Instant::now();
    let dir = lib(tempfile::tempdir())?;
    let cfg = smoke_config(500);
    let data = dir.path().join("data");
    lib(pipeline::simulate(&cfg, &data))?;
    let a = lib(pipeline::train_sv(&cfg, &data.join("dataset.json"), None, &dir.path().join("a")))?;
    let b = lib(pipeline::train_sv(&cfg, &data.join("dataset.json"), None, &dir.path().join("b")))?;
    ensure(a.losses.len() == 500, "expected 500 logged steps")?;
    ensure(a.losses == b.losses, "loss curves differ between identical runs")?;
    let ca = lib(std::fs::read(dir.path().join("a/checkpoint.json")))?;
    let cb = lib(std::fs::read(dir.path().join("b/checkpoint.json")))?;
    ensure(ca == cb, "checkpoints differ between identical runs")?;
    let window = 10;
    let initial = a.losses[..window].iter().sum::<f64>() / window as f64;
    let last = a.losses[a.losses.len() - window..].iter().sum::<f64>() / window as f64;
    let secs = start.elapsed().as_secs_f64();
    ensure(last < 0.5 * initial, format!("loss {initial:.4} -> {last:.4}"))?;
    ensure(secs < 300.0, format!("took {secs:.1} s"))?;
    Ok(format!(
        "mean loss of first/last {window} steps {initial:.4} -> {last:.4} ({:.2}x), deterministic, {secs:.1} s",
        last / initial
    ))
}

fn c4_hybrid_mask() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (frames, joints) = (4, 5);
    let items = toy_items(&mut rng, 12, frames, joints);
    let sched = lib(NoiseSchedule::linear(200, 1e-4, 0.02))?;
    let params = lib(DenoiserParams::init(DenoiserDims::new(joints, 16, 2, 8), &mut rng))?;
    let (mut local_seen, mut global_hip_nonzero) = (0, 0);
    for _ in 0..200 {
        let batch = lib(sample_batch(&items, 8, 2.0 / 3.0, &mut rng))?;
        let out = lib(training_loss(&params, &batch, &sched, &mut rng, 0.5))?;
        for (item, g) in batch.items.iter().zip(&out.output_grads) {
            for t in 0..frames {
                for hip in [item.hips.0, item.hips.1] {
                    let at = (t * joints + hip) * 2;
                    let (gx, gy) = (g[at], g[at + 1]);
                    match item.source {
                        DataSource::ReprojectedLocal => {
                            local_seen += 1;
                            if gx != 0.0 || gy != 0.0 {
                                return Err(format!("hip gradient ({gx}, {gy}) on a local item"));
                            }
                        }
                        DataSource::VideoGlobal => {
                            if gx != 0.0 || gy != 0.0 {
                                global_hip_nonzero += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    ensure(local_seen > 0, "no local items were sampled")?;
    ensure(global_hip_nonzero > 0, "global items never had hip gradients")?;
    Ok(format!("{local_seen} local hip entries all exactly zero over 200 batches"))
}

fn c5_sds() -> Check {
    let (steps, b0, b1) = (1000, 1e-4, 0.02);
    let sched = lib(NoiseSchedule::linear(steps, b0, b1))?;
    let mu = 0.8;
    let oracle = GaussianOracle::new(vec![vec![mu]], 0.04, steps, b0, b1);
    let cond = Conditioning::unconditioned(1, 1);
    let cfg = SdsConfig {
        iterations: 500,
        lr: 0.01,
        draws: 8,
        seed: 55,
        ..SdsConfig::default()
    };
    let x = lib(optimize_sds(&oracle, &[0.0, 0.0], &cond, &sched, &cfg))?;
    let worst = x.iter().map(|v| (v - mu).abs() / mu).fold(0.0, f64::max);
    ensure(worst < 0.01, format!("SDS result {x:?} vs mean {mu}"))?;

    // line-loss gradient against central differences
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let intr = CameraIntrinsics::centered_f1000(1000.0, 1000.0);
    let (frames, joints) = (4, 6);
    let seq = random_cloud(&mut rng, frames, joints, 0.6);
    let cu = random_trajectory(&mut rng, frames, intr);
    let cv = random_trajectory(&mut rng, frames, intr);
    let xu = lib(project_sequence(&seq, &cu))?;
    let mut xv = lib(project_sequence(&seq, &cv))?;
    let noisy: Vec<[f64; 2]> = xv
        .coords()
        .iter()
        .map(|p| [p[0] + rng.random_range(-20.0..20.0), p[1] + rng.random_range(-20.0..20.0)])
        .collect();
    lib(xv.set_coords(noisy))?;
    let res = lib(cross_view_line_loss(&xu, &cu, &xv, &cv))?;
    let h = 1e-6;
    let mut worst_fd = 0.0f64;
    for i in 0..xv.coords().len() {
        for d in 0..2 {
            let shifted = |s: f64| -> Result<f64, String> {
                let mut c = xv.coords().to_vec();
                c[i][d] += s;
                let mut x = xv.clone();
                lib(x.set_coords(c))?;
                Ok(lib(cross_view_line_loss(&xu, &cu, &x, &cv))?.loss)
            };
            let fd = (shifted(h)? - shifted(-h)?) / (2.0 * h);
            let g = res.grad[i][d];
            worst_fd = worst_fd.max((g - fd).abs() / g.abs().max(fd.abs()).max(1e-6));
        }
    }
    ensure(worst_fd < 1e-5, format!("line gradient relative error {worst_fd:.3e}"))?;
    Ok(format!("SDS reached {x:?} (mean {mu}, rel err {worst:.2e}); line grad rel err {worst_fd:.2e}"))
}

fn c6_oracle_lift() -> Check {
    let start = Instant::now();
    let walker = WalkerParams {
        origin: [0.2, -0.3],
        heading: 0.6,
        speed: 0.9,
        gait_hz: 1.0,
        leg_swing: 0.4,
        arm_swing: 0.3,
        phase: 0.3,
    };
    let frames = 16;
    let truth = lib(walker_sequence(&walker, frames, 30.0))?;
    let skel = SkeletonSpec::coco17();
    let intr = CameraIntrinsics::centered_f1000(1000.0, 1000.0);
    let pelvis = Vector3::new(0.2, 0.92, -0.3);
    let eye = pelvis + Vector3::new(3.0, 0.6, 3.0);
    let r = lib(kplift::camsim::look_at_rotation(&eye, &pelvis))?;
    let cam = CameraTrajectory::static_camera(lib(CameraExtrinsic::new(r, -(r * eye)))?, intr, frames);
    let input = lib(project_sequence(&truth, &cam))?;

    let cams = lib(lift_cameras(&input, &cam, &skel, &SdsConfig::default()))?;
    let means = cams
        .iter()
        .map(|c| lib(project_sequence(&truth, c)).and_then(|x| lib(pack_canvas(&x, &skel, &c.intrinsics))))
        .collect::<Result<Vec<_>, _>>()?;
    let (steps, b0, b1) = (1000, 1e-4, 0.02);
    let sched = lib(NoiseSchedule::linear(steps, b0, b1))?;
    let oracle = GaussianOracle::new(means, 1e-6, steps, b0, b1);

    // Adam steps stay near lr until the cosine decay shrinks them, so the
    // default 500 iterations stop short of sub-pixel line agreement; the
    // fixture runs longer at the default rate and reports both.
    let run = |iterations: usize| -> Result<(f64, f64), String> {
        let cfg = SdsConfig {
            iterations,
            ..SdsConfig::default()
        };
        let state = lib(lift_single_to_multi(&input, &cam, &skel, &oracle, &sched, &cfg))?;
        let views = lib(state.sequences())?;
        ensure(views[0] == input, "input view was modified")?;
        let tri = lib(triangulate_sequence(&views, &state.cameras, &TriangulationConfig::default()))?;
        ensure(tri.flagged_count() == 0, format!("{} joints flagged", tri.flagged_count()))?;
        Ok((mean_distance_mm(&tri.points, &truth), lib(state.line_loss_px())? / frames as f64))
    };
    let (default_err, default_line) = run(SdsConfig::default().iterations)?;
    let (err, line) = run(2000)?;
    let secs = start.elapsed().as_secs_f64();
    ensure(err < 5.0, format!("MPJPE {err:.3} mm"))?;
    ensure(line < 1.0, format!("line loss {line:.3} px/frame"))?;
    ensure(secs < 120.0, format!("took {secs:.1} s"))?;
    Ok(format!(
        "2000 iterations: MPJPE {err:.3} mm, line loss {line:.4} px/frame; default 500: {default_err:.3} mm, {default_line:.3} px/frame; {secs:.1} s"
    ))
}

fn c7_triangulation() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let intr = CameraIntrinsics::centered_f1000(1000.0, 1000.0);
    let (frames, joints) = (5, 17);
    let truth = random_cloud(&mut rng, frames, joints, 0.9);
    let cams: Vec<CameraTrajectory> = (0..4).map(|_| random_trajectory(&mut rng, frames, intr)).collect();
    let views = cams
        .iter()
        .map(|c| lib(project_sequence(&truth, c)))
        .collect::<Result<Vec<_>, _>>()?;
    let tri = lib(triangulate_sequence(&views, &cams, &TriangulationConfig::default()))?;
    let worst = truth
        .coords()
        .iter()
        .zip(tri.points.coords())
        .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt())
        .fold(0.0, f64::max);
    ensure(worst < 1e-3, format!("max error {worst:.3e} m"))?;
    ensure(tri.flagged_count() == 0, "exact inputs flagged")?;

    // degenerate: every camera at the same center (zero baseline), and a
    // joint seen by one view only
    let center = Vector3::new(0.0, 0.0, -4.0);
    let same: Vec<CameraTrajectory> = (0..4)
        .map(|i| {
            let target = Vector3::new(0.05 * i as f64, 0.0, 0.0);
            CameraTrajectory::static_camera(look_at(center, target), intr, frames)
        })
        .collect();
    let views = same
        .iter()
        .map(|c| lib(project_sequence(&truth, c)))
        .collect::<Result<Vec<_>, _>>()?;
    let flagged_all = match triangulate_sequence(&views, &same, &TriangulationConfig::default()) {
        Ok(t) => t.flagged_count() == t.flagged.len(),
        Err(_) => true,
    };
    ensure(flagged_all, "zero-baseline geometry was not flagged")?;

    let mut views = cams
        .iter()
        .map(|c| lib(project_sequence(&truth, c)))
        .collect::<Result<Vec<_>, _>>()?;
    for v in views.iter_mut().skip(1) {
        let mut vis = v.visibility().to_vec();
        vis[2 * joints + 3] = false;
        lib(v.set_visibility(vis))?;
    }
    let tri = lib(triangulate_sequence(&views, &cams, &TriangulationConfig::default()))?;
    ensure(tri.flagged[2 * joints + 3], "single-view joint not flagged")?;
    ensure(tri.flagged_count() == 1, "unexpected flags")?;
    Ok(format!("max error {worst:.2e} m; zero-baseline and single-view entries flagged"))
}

fn c8_object_pose() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let canon_pts: Vec<Vector3<f64>> = (0..8)
        .map(|_| Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.2..0.2), rng.random_range(-0.4..0.4)))
        .collect();
    let canon = lib(CanonicalKeypoints::new(canon_pts.clone(), (0, 1)))?;
    let frames = 12;
    let scale = 1.3;
    let axis = Vector3::new(0.3, 1.0, -0.2).normalize();
    let base = random_rotation(&mut rng);
    let (mut rots, mut trans, mut coords) = (Vec::new(), Vec::new(), Vec::new());
    for t in 0..frames {
        let r = *nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), 0.05 * t as f64).matrix() * base;
        let tr = Vector3::new(0.5 + 0.02 * t as f64, 0.1, 3.0 - 0.01 * t as f64);
        for p in &canon_pts {
            let q = scale * (r * p) + tr;
            coords.push([q.x, q.y, q.z]);
        }
        rots.push(r);
        trans.push(tr);
    }
    let track = lib(Seq3D::new(frames, 8, coords))?;
    let fit = lib(fit_object_trajectory(&track, &canon, &[true; 8], &ObjectFitConfig::default()))?;
    let mut worst_r = 0.0f64;
    let mut worst_t = 0.0f64;
    for t in 0..frames {
        worst_r = worst_r.max(angle_between(&lib(fit.pose.rotation(t))?, &rots[t]));
        worst_t = worst_t.max((fit.pose.translation[t] - trans[t]).norm());
    }
    let scale_err = (fit.pose.scale - scale).abs();
    ensure(worst_r < 1e-3, format!("rotation error {worst_r:.3e} rad"))?;
    ensure(worst_t < 1e-3, format!("translation error {worst_t:.3e} m"))?;
    ensure(scale_err < 1e-4, format!("scale error {scale_err:.3e}"))?;

    let mut worst_sim = 0.0f64;
    for _ in 0..1000 {
        let r = random_rotation(&mut rng);
        let s = rng.random_range(0.5..2.0);
        let t = Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let src: Vec<Vector3<f64>> = (0..10)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let dst: Vec<Vector3<f64>> = src.iter().map(|p| s * (r * p) + t).collect();
        let est = lib(umeyama(&src, &dst, true))?;
        worst_sim = worst_sim
            .max((est.rotation - r).abs().max())
            .max((est.scale - s).abs())
            .max((est.translation - t).abs().max());
    }
    ensure(worst_sim < 1e-9, format!("similarity recovery error {worst_sim:.3e}"))?;

    let mut worst_6d = 0.0f64;
    for _ in 0..1000 {
        let r = random_rotation(&mut rng);
        let back = lib(rot6d_to_matrix(&matrix_to_rot6d(&r)))?;
        worst_6d = worst_6d.max((back - r).abs().max());
    }
    ensure(worst_6d < 1e-9, format!("rot6d round trip error {worst_6d:.3e}"))?;
    Ok(format!(
        "rot {worst_r:.2e} rad, trans {worst_t:.2e} m, scale {scale_err:.2e}; similarity {worst_sim:.2e}; rot6d {worst_6d:.2e}"
    ))
}

fn brute_chamfer(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let one = |x: &[[f64; 2]], y: &[[f64; 2]]| -> f64 {
        let mut total = 0.0;
        for p in x {
            let mut best = f64::INFINITY;
            for q in y {
                let (dx, dy) = (p[0] - q[0], p[1] - q[1]);
                let d = dx * dx + dy * dy;
                if d < best {
                    best = d;
                }
            }
            total += best;
        }
        total / x.len() as f64
    };
    one(a, b) + one(b, a)
}

fn c9_chamfer() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut mismatches = 0;
    for i in 0..100 {
        let (na, nb) = (rng.random_range(1..400), rng.random_range(1..400));
        let spread = if i % 2 == 0 { 50.0 } else { 600.0 };
        let mut pts = |n: usize| -> Vec<[f64; 2]> {
            (0..n)
                .map(|_| {
                    let p: [f64; 2] = [rng.random_range(0.0..spread), rng.random_range(0.0..spread)];
                    if i % 5 == 0 { [p[0].round(), p[1].round()] } else { p }
                })
                .collect()
        };
        let a = pts(na);
        let b = pts(nb);
        if lib(chamfer_2d(&a, &b))? != brute_chamfer(&a, &b) {
            mismatches += 1;
        }
    }
    ensure(mismatches == 0, format!("{mismatches} of 100 chamfer values differ from brute force"))?;

    let mesh = lib(TriMesh::cuboid(0.6, 0.35, 0.2))?;
    let intr = CameraIntrinsics::centered_f1000(320.0, 240.0);
    let truth = Matrix3::from(nalgebra::Rotation3::from_euler_angles(0.5, -0.7, 0.3));
    let t = Vector3::new(0.05, -0.03, 2.4);
    let mask = render_mask(&mesh, &truth, &t, &intr, 320, 240);
    let flips = [
        Matrix3::identity(),
        Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0)),
        Matrix3::from_diagonal(&Vector3::new(-1.0, 1.0, -1.0)),
        Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0)),
    ];
    let mut errs = Vec::new();
    for seed in [5, 6, 7] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = ChamferAlignConfig::default();
        ensure(cfg.restarts == 200, "default restarts changed")?;
        let fit = lib(chamfer_align_frame(&mesh, &mask, &intr, None, &mut rng, &cfg))?;
        let e = flips
            .iter()
            .map(|s| angle_between(&fit.rotation, &(truth * s)))
            .fold(f64::INFINITY, f64::min)
            .to_degrees();
        errs.push(e);
    }
    let worst = errs.iter().copied().fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    ensure(worst < 5.0, format!("rotation errors {errs:.2?} deg"))?;
    ensure(secs < 180.0, format!("took {secs:.1} s"))?;
    Ok(format!("chamfer_2d == brute force on 100 pairs; rotation errors {errs:.2?} deg (box symmetry), {secs:.1} s"))
}

fn c10_metrics() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let skel = SkeletonSpec::coco17();
    let mut worst_pa = 0.0f64;
    let mut violations = 0;
    for i in 0..1000 {
        let a = random_cloud(&mut rng, 3, 17, 1.0);
        let b = if i < 100 {
            let r = random_rotation(&mut rng);
            let s = rng.random_range(0.5..2.0);
            let t = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let coords = a
                .coords()
                .iter()
                .map(|p| {
                    let q = s * (r * Vector3::new(p[0], p[1], p[2])) + t;
                    [q.x, q.y, q.z]
                })
                .collect();
            lib(Seq3D::new(3, 17, coords))?
        } else {
            random_cloud(&mut rng, 3, 17, 1.0)
        };
        let pa = lib(pa_mpjpe(&b, &a))?;
        if i < 100 {
            worst_pa = worst_pa.max(pa);
        } else if pa > lib(mpjpe(&b, &a))? + 1e-9 {
            violations += 1;
        }
    }
    ensure(worst_pa <= 1e-6, format!("PA-MPJPE under similarity {worst_pa:.3e} mm"))?;
    ensure(violations == 0, format!("{violations} pairs with PA-MPJPE > MPJPE"))?;

    // translation invariance of the centered 2D error
    let gt = KeypointSeq2D::new(
        4,
        17,
        (0..68).map(|_| [rng.random_range(0.0..1000.0), rng.random_range(0.0..1000.0)]).collect(),
    )
    .unwrap();
    let pred = KeypointSeq2D::new(
        4,
        17,
        gt.coords().iter().map(|p| [p[0] + rng.random_range(-9.0..9.0), p[1] + rng.random_range(-9.0..9.0)]).collect(),
    )
    .unwrap();
    let shifted = KeypointSeq2D::new(
        4,
        17,
        pred.coords()
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let t = i / 17;
                [p[0] + 37.0 * t as f64 - 11.0, p[1] - 5.5 * t as f64]
            })
            .collect(),
    )
    .unwrap();
    let (c1, c2) = (lib(j2d_centered(&pred, &gt, &skel))?, lib(j2d_centered(&shifted, &gt, &skel))?);
    ensure((c1 - c2).abs() < 1e-9, format!("J2D-C changed under translation: {c1} vs {c2}"))?;

    // stationary feet
    let still = lib(walker_sequence(
        &WalkerParams {
            origin: [0.0, 0.0],
            heading: 0.0,
            speed: 0.0,
            gait_hz: 1.0,
            leg_swing: 0.0,
            arm_swing: 0.3,
            phase: 0.0,
        },
        20,
        30.0,
    ))?;
    let fs = lib(foot_sliding(&still, &skel, 0.05, &GroundPlane::default()))?;
    ensure(fs == 0.0, format!("FS of stationary feet {fs}"))?;

    // fixture offsets
    let off2 = KeypointSeq2D::new(4, 17, gt.coords().iter().map(|p| [p[0] + 3.0, p[1] + 4.0]).collect()).unwrap();
    let e2 = lib(j2d(&off2, &gt))?;
    let g3 = random_cloud(&mut rng, 4, 17, 1.0);
    let shift = |d: [f64; 3]| -> Seq3D {
        Seq3D::new(4, 17, g3.coords().iter().map(|p| [p[0] + d[0], p[1] + d[1], p[2] + d[2]]).collect()).unwrap()
    };
    let e3 = lib(mpjpe(&shift([0.0, 0.006, 0.008]), &g3))?;
    let root = |s: &Seq3D| -> Vec<[f64; 3]> {
        (0..4)
            .map(|t| {
                let (l, r) = (s.get(t, 11), s.get(t, 12));
                [(l[0] + r[0]) / 2.0, (l[1] + r[1]) / 2.0, (l[2] + r[2]) / 2.0]
            })
            .collect()
    };
    let e50 = lib(t_root(&root(&shift([0.03, 0.0, 0.04])), &root(&g3)))?;
    ensure((e2 - 5.0).abs() < 1e-9, format!("J2D {e2} px, expected 5"))?;
    ensure((e3 - 10.0).abs() < 1e-9, format!("MPJPE {e3} mm, expected 10"))?;
    ensure((e50 - 50.0).abs() < 1e-9, format!("T_root {e50} mm, expected 50"))?;
    Ok(format!(
        "PA-MPJPE under similarity {worst_pa:.2e} mm; PA<=MPJPE on 900 pairs; J2D-C invariant; FS 0; offsets {e2:.6} px / {e3:.6} mm / {e50:.6} mm"
    ))
}

fn collect_files(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if !p.to_string_lossy().ends_with(".timings.json") {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn run_pipeline(root: &Path, cfg: &Config) -> Result<(), String> {
    let data = root.join("data");
    lib(pipeline::simulate(cfg, &data))?;
    let ds = data.join("dataset.json");
    lib(pipeline::train_sv(cfg, &ds, None, &root.join("sv")))?;
    lib(pipeline::train_mv(cfg, &ds, Some(&root.join("sv/best.json")), &root.join("mv")))?;
    let seq = data.join("sequences/test_000");
    for (name, ckpt, stage) in [("lift_sds", "sv/best.json", LiftStage::Sds), ("lift_mv", "mv/best.json", LiftStage::Sampling)] {
        lib(pipeline::lift(
            cfg,
            &seq.join("motion2d.json"),
            &seq.join("camera.json"),
            &root.join(ckpt),
            Some(stage),
            None,
            None,
            &root.join(name),
        ))?;
        let rec = root.join(format!("rec_{name}"));
        lib(pipeline::reconstruct(cfg, &root.join(name).join("bundle.json"), &rec))?;
        lib(pipeline::evaluate(
            cfg,
            &EvaluateInputs {
                pred: vec![rec.join("motion3d.json")],
                gt: vec![seq.join("motion3d.json")],
                ..EvaluateInputs::default()
            },
            &root.join(format!("eval_{name}")),
        ))?;
    }
    Ok(())
}

fn c11_reproducibility() -> Check {
    let start = Instant::now();
    let dir = lib(tempfile::tempdir())?;
    let mut cfg = Config::default();
    cfg.seed = 11;
    cfg.simulate.train_sequences = 8;
    cfg.simulate.test_sequences = 2;
    cfg.training.sv_steps = 60;
    cfg.training.mv_steps = 30;
    cfg.training.validation_every = 20;
    cfg.sds.iterations = 40;
    cfg.schedule.steps = 100;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_pipeline(&a, &cfg)?;
    run_pipeline(&b, &cfg)?;
    let (fa, fb) = (collect_files(&a), collect_files(&b));
    ensure(fa.len() == fb.len(), "runs wrote different file sets")?;
    let differing: Vec<&String> = fa.iter().zip(&fb).filter(|(x, y)| x != y).map(|(x, _)| &x.0).collect();
    ensure(differing.is_empty(), format!("files differ: {differing:?}"))?;

    let manifest: serde_json::Value = lib(serde_json::from_slice(&lib(std::fs::read(a.join("data/cameras.json")))?))?;
    let names = |k: &str| -> Vec<String> {
        manifest[k].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect()
    };
    let (train, test) = (names("train"), names("test"));
    ensure(!train.is_empty() && !test.is_empty(), "empty camera manifest")?;
    ensure(train.iter().all(|n| !test.contains(n)), "camera ids shared between splits")?;
    let load = |n: &str| std::fs::read(a.join(format!("data/cameras/{n}.json"))).ok();
    let train_files: Vec<Vec<u8>> = train.iter().filter_map(|n| load(n)).collect();
    let test_files: Vec<Vec<u8>> = test.iter().filter_map(|n| load(n)).collect();
    ensure(test_files.len() == test.len(), "test cameras missing from the bank")?;
    let shared = train_files.iter().filter(|f| test_files.contains(f)).count();
    ensure(shared == 0, "identical camera trajectories in both splits")?;
    let dataset: serde_json::Value = lib(serde_json::from_slice(&lib(std::fs::read(a.join("data/dataset.json")))?))?;
    for s in dataset["sequences"].as_array().unwrap() {
        let id = s["camera_id"].as_str().unwrap().to_string();
        let list = if s["split"] == "train" { &train } else { &test };
        ensure(list.contains(&id), format!("sequence camera {id} missing from its split"))?;
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(format!(
        "{} artifacts byte-identical across two runs; {} train / {} test cameras disjoint; {secs:.1} s",
        fa.len(),
        train.len(),
        test.len()
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 11] = [
        ("epipolar suite", c1_epipolar),
        ("diffusion correctness", c2_diffusion),
        ("training smoke", c3_training_smoke),
        ("hybrid masking", c4_hybrid_mask),
        ("SDS convergence", c5_sds),
        ("oracle end-to-end lift", c6_oracle_lift),
        ("triangulation", c7_triangulation),
        ("object pose", c8_object_pose),
        ("chamfer mask alignment", c9_chamfer),
        ("metrics", c10_metrics),
        ("reproducibility", c11_reproducibility),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut stdout = std::io::stdout();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let label = format!("criterion {:>2} ({name})", i + 1);
        if !filter.is_empty() && !filter.iter().any(|p| label.contains(p.as_str())) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(msg)
        });
        match outcome {
            Ok(detail) => writeln!(stdout, "{label}: PASS - {detail}").unwrap(),
            Err(detail) => {
                failed += 1;
                writeln!(stdout, "{label}: FAIL - {detail}").unwrap();
            }
        }
        stdout.flush().unwrap();
    }
    if failed > 0 {
        writeln!(stdout, "{failed} criteria failed").unwrap();
        std::process::exit(1);
    }
}
