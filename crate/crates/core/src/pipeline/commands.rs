use std::path::{Path, PathBuf};

use nalgebra::Matrix3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::simulate::{Dataset, DatasetSequence};
use super::{relative_path, skeleton_for, Run, RunManifest};
use crate::camgeo::{
    project_sequence, training_epipolar_lines, training_epipole_bank, CameraTrajectory, EpipolarLineSet,
};
use crate::camsim::ring_views;
use crate::config::Config;
use crate::diffusion::{
    evaluate_loss, multiview_training_loss, pack_canvas, train, train_multiview, Conditioning, DataSource,
    DenoiserParams, MultiViewItem, TrainState, TrainingItem,
};
use crate::error::{Error, Result};
use crate::io::{
    load_bundle, load_camera, load_canonical, load_checkpoint, load_motion_2d, load_motion_3d, read_json,
    save_bundle, save_canonical, save_checkpoint, save_motion_3d, save_object_pose, to_json_string, write_json,
    write_text, BundleFile, MotionFile, PoseResidual, SCHEMA_VERSION,
};
use crate::metrics::{evaluate_sequence_with, GroundPlane, MetricsReport, SequenceEval};
use crate::motion::{KeypointSeq2D, Seq3D, SkeletonSpec};
use crate::recon::{
    chamfer_align_frame, fit_object_trajectory, keypoints_from_pose, matrix_to_rot6d, triangulate_sequence,
    MaskImage, ObjectPose, TriMesh, Triangulation,
};
use crate::sds::{lift_by_sampling, lift_single_to_multi, pair_lines};

struct LoadedSequence {
    seq2d: KeypointSeq2D,
    seq3d: Seq3D,
    camera: CameraTrajectory,
    source: DataSource,
}

fn load_dataset(run: &mut Run, path: &Path) -> Result<Vec<LoadedSequence>> {
    run.input(path)?;
    let (dataset, base) = Dataset::load(path)?;
    let train: Vec<&DatasetSequence> = dataset.split("train").collect();
    if train.is_empty() {
        return Err(Error::schema(path.display().to_string(), "dataset has no train sequences"));
    }
    let mut loaded = Vec::with_capacity(train.len());
    for s in train {
        let (p2, p3, pc) = (base.join(&s.motion2d), base.join(&s.motion3d), base.join(&s.camera));
        for p in [&p2, &p3, &pc] {
            run.input(p)?;
        }
        loaded.push(LoadedSequence {
            seq2d: load_motion_2d(&p2)?.0,
            seq3d: load_motion_3d(&p3)?.0,
            camera: load_camera(&pc)?,
            source: s.data_source()?,
        });
    }
    Ok(loaded)
}

/// Holds out the last `fraction` of the sequences, keeping at least one for
/// training.
fn split_validation(mut all: Vec<LoadedSequence>, fraction: f64) -> (Vec<LoadedSequence>, Vec<LoadedSequence>) {
    let n_val = ((all.len() as f64 * fraction).floor() as usize).min(all.len().saturating_sub(1));
    let val = all.split_off(all.len() - n_val);
    (all, val)
}

fn hips(skel: &SkeletonSpec) -> (usize, usize) {
    (skel.left_hip, skel.right_hip)
}

/// One item per epipole of the training bank.
fn single_view_items(s: &LoadedSequence, skel: &SkeletonSpec) -> Result<Vec<TrainingItem>> {
    let intr = &s.camera.intrinsics;
    let target = pack_canvas(&s.seq2d, skel, intr)?;
    training_epipole_bank(intr)
        .into_iter()
        .map(|e| {
            let lines = training_epipolar_lines(&s.seq2d, &[e])?;
            TrainingItem::new(
                target.clone(),
                s.source,
                Conditioning::new(&s.camera, &lines)?,
                s.seq2d.visibility().to_vec(),
                hips(skel),
            )
        })
        .collect()
}

/// Ring views around the true pelvis, each conditioned on its lines from
/// view 0, mirroring the layout used at lift time.
fn multi_view_item(s: &LoadedSequence, skel: &SkeletonSpec, views: usize) -> Result<MultiViewItem> {
    let (l, r) = (s.seq3d.get(0, skel.left_hip), s.seq3d.get(0, skel.right_hip));
    let center = nalgebra::Vector3::new(0.5 * (l[0] + r[0]), 0.5 * (l[1] + r[1]), 0.5 * (l[2] + r[2]));
    let mut cams = vec![s.camera.clone()];
    cams.extend(ring_views(&s.camera, views, &center, None)?);
    let x0 = project_sequence(&s.seq3d, &s.camera)?;
    let mut items = Vec::with_capacity(views);
    for (v, cam) in cams.iter().enumerate() {
        let x = if v == 0 { s.seq2d.clone() } else { project_sequence(&s.seq3d, cam)? };
        let lines = if v == 0 {
            EpipolarLineSet::invalid(x.frames(), x.joints())
        } else {
            pair_lines(&x0, &s.camera, cam)?
        };
        items.push(TrainingItem::new(
            pack_canvas(&x, skel, &cam.intrinsics)?,
            s.source,
            Conditioning::new(cam, &lines)?.with_view(v),
            x.visibility().to_vec(),
            hips(skel),
        )?);
    }
    Ok(MultiViewItem { views: items })
}

/// Summary of a training command.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub manifest: RunManifest,
    /// Per-step training losses of the whole run (resumed runs included).
    pub losses: Vec<f64>,
    /// `(step, held-out loss)` at every validation point.
    pub validation: Vec<(usize, f64)>,
    /// Step count of the weights written to `best.json`.
    pub best_step: usize,
}

/// Trains in chunks of `every` steps, evaluating `validate` after each and
/// keeping the state with the lowest held-out loss.
fn train_with_validation(
    state: &mut TrainState,
    total: usize,
    every: usize,
    mut advance: impl FnMut(&mut TrainState, usize) -> Result<()>,
    mut validate: Option<&mut dyn FnMut(&DenoiserParams) -> Result<f64>>,
) -> Result<(TrainState, Vec<(usize, f64)>)> {
    let mut history = Vec::new();
    let mut best: Option<(f64, TrainState)> = None;
    while state.step < total {
        let next = ((state.step / every + 1) * every).min(total);
        advance(state, next)?;
        if let Some(f) = validate.as_mut() {
            let v = f(&state.params)?;
            history.push((state.step, v));
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, state.clone()));
            }
        }
    }
    let best = best.map(|(_, s)| s).unwrap_or_else(|| state.clone());
    Ok((best, history))
}

fn write_curves(run: &mut Run, losses: &[f64], validation: &[(usize, f64)]) -> Result<()> {
    let mut csv = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        csv.push_str(&format!("{i},{l}\n"));
    }
    let p = run.path("losses.csv");
    write_text(&p, &csv)?;
    run.artifact(&p);
    let mut csv = String::from("step,validation_loss\n");
    for (s, l) in validation {
        csv.push_str(&format!("{s},{l}\n"));
    }
    let p = run.path("validation.csv");
    write_text(&p, &csv)?;
    run.artifact(&p);
    Ok(())
}

fn save_states(run: &mut Run, last: &TrainState, best: &TrainState, seed: u64) -> Result<()> {
    let p = run.path("checkpoint.json");
    save_checkpoint(&p, last, seed)?;
    run.artifact(&p);
    let p = run.path("best.json");
    save_checkpoint(&p, best, seed)?;
    run.artifact(&p);
    Ok(())
}

fn check_dims(state: &TrainState, cfg: &Config, joints: usize, cross_view: bool) -> Result<()> {
    let want = cfg.dims(joints).with_cross_view(cross_view);
    if *state.params.dims() != want {
        return Err(Error::invalid(format!(
            "checkpoint shape `{}` does not match the configured `{}`",
            state.params.dims().shape_string(),
            want.shape_string()
        )));
    }
    Ok(())
}

/// Trains the single-view denoiser on the dataset's train split. With
/// `resume`, continues from that checkpoint to `training.sv_steps`.
/// Writes `checkpoint.json` (last state), `best.json` (lowest held-out
/// loss), `losses.csv` and `validation.csv`.
pub fn train_sv(cfg: &Config, dataset: &Path, resume: Option<&Path>, out: &Path) -> Result<TrainOutcome> {
    let mut run = Run::new("train-sv", out, cfg)?;
    let sched = cfg.schedule()?;
    let (train_seqs, val_seqs) = run.stage("load", |run| {
        let all = load_dataset(run, dataset)?;
        Ok(split_validation(all, cfg.training.validation_fraction))
    })?;
    let joints = train_seqs[0].seq2d.joints();
    let skel = skeleton_for(joints, None)?;
    let mut items = Vec::new();
    for s in &train_seqs {
        items.extend(single_view_items(s, &skel)?);
    }
    let mut val_items = Vec::new();
    for s in &val_seqs {
        val_items.extend(single_view_items(s, &skel)?);
    }

    let mut state = match resume {
        Some(p) => {
            run.input(p)?;
            let (s, _) = load_checkpoint(p)?;
            check_dims(&s, cfg, joints, false)?;
            s
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            TrainState::new(DenoiserParams::init(cfg.dims(joints), &mut rng)?)
        }
    };
    let tcfg_base = cfg.train_config(cfg.training.sv_steps, cfg.seed);
    let lw = cfg.training.line_weight;
    let seed = cfg.seed;
    let (best, validation) = run.stage("train", |_| {
        let mut validate = |p: &DenoiserParams| evaluate_loss(p, &val_items, &sched, lw, seed, 1);
        let v: Option<&mut dyn FnMut(&DenoiserParams) -> Result<f64>> =
            if val_items.is_empty() { None } else { Some(&mut validate) };
        train_with_validation(
            &mut state,
            tcfg_base.steps,
            cfg.training.validation_every,
            |st, next| {
                let mut c = tcfg_base.clone();
                c.steps = next;
                train(st, &items, &sched, &c, |_, _| {})
            },
            v,
        )
    })?;
    save_states(&mut run, &state, &best, cfg.seed)?;
    write_curves(&mut run, &state.losses, &validation)?;
    Ok(TrainOutcome {
        manifest: run.finish()?,
        losses: state.losses,
        validation,
        best_step: best.step,
    })
}

/// Trains the cross-view denoiser on ring renderings of the train split.
/// `from` is either a single-view checkpoint (its weights initialize the
/// shared layers) or a cross-view checkpoint to resume.
pub fn train_mv(cfg: &Config, dataset: &Path, from: Option<&Path>, out: &Path) -> Result<TrainOutcome> {
    let mut run = Run::new("train-mv", out, cfg)?;
    let sched = cfg.schedule()?;
    let (train_seqs, val_seqs) = run.stage("load", |run| {
        let all = load_dataset(run, dataset)?;
        Ok(split_validation(all, cfg.training.validation_fraction))
    })?;
    let joints = train_seqs[0].seq2d.joints();
    let skel = skeleton_for(joints, None)?;
    let views = cfg.model.views;
    let items = train_seqs
        .iter()
        .map(|s| multi_view_item(s, &skel, views))
        .collect::<Result<Vec<_>>>()?;
    let val_items = val_seqs
        .iter()
        .map(|s| multi_view_item(s, &skel, views))
        .collect::<Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = match from {
        Some(p) => {
            run.input(p)?;
            let (s, _) = load_checkpoint(p)?;
            if s.params.dims().cross_view {
                check_dims(&s, cfg, joints, true)?;
                s
            } else {
                check_dims(&s, cfg, joints, false)?;
                TrainState::new(s.params.with_cross_view(&mut rng)?)
            }
        }
        None => TrainState::new(DenoiserParams::init(cfg.dims(joints).with_cross_view(true), &mut rng)?),
    };
    let tcfg_base = cfg.train_config(cfg.training.mv_steps, cfg.seed);
    let lw = cfg.training.line_weight;
    let seed = cfg.seed;
    let (best, validation) = run.stage("train", |_| {
        let mut validate = |p: &DenoiserParams| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            Ok(multiview_training_loss(p, &val_items, &sched, &mut r, lw)?.loss)
        };
        let v: Option<&mut dyn FnMut(&DenoiserParams) -> Result<f64>> =
            if val_items.is_empty() { None } else { Some(&mut validate) };
        train_with_validation(
            &mut state,
            tcfg_base.steps,
            cfg.training.validation_every,
            |st, next| {
                let mut c = tcfg_base.clone();
                c.steps = next;
                train_multiview(st, &items, &sched, &c, |_, _| {})
            },
            v,
        )
    })?;
    save_states(&mut run, &state, &best, cfg.seed)?;
    write_curves(&mut run, &state.losses, &validation)?;
    Ok(TrainOutcome {
        manifest: run.finish()?,
        losses: state.losses,
        validation,
        best_step: best.step,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LiftStage {
    /// Score distillation with a single-view model.
    Sds,
    /// Joint reverse sampling with a cross-view model, input view clamped.
    Sampling,
}

#[derive(serde::Serialize)]
struct LiftReport {
    version: u32,
    stage: &'static str,
    views: usize,
    frames: usize,
    line_loss_px: f64,
    line_loss_px_per_frame: f64,
}

/// Lifts one 2D sequence to a multi-view bundle (`bundle.json` plus one
/// motion and camera file per view). Without `stage`, single-view
/// checkpoints use SDS and cross-view ones use sampling.
#[allow(clippy::too_many_arguments)]
pub fn lift(
    cfg: &Config,
    motion: &Path,
    camera: &Path,
    checkpoint: &Path,
    stage: Option<LiftStage>,
    hip_joints: Option<(usize, usize)>,
    object_canonical: Option<&Path>,
    out: &Path,
) -> Result<RunManifest> {
    let mut run = Run::new("lift", out, cfg)?;
    for p in [motion, camera, checkpoint] {
        run.input(p)?;
    }
    let (input, fps) = load_motion_2d(motion)?;
    let cam = load_camera(camera)?;
    let (state, _) = load_checkpoint(checkpoint)?;
    let k = input.joints();
    if state.params.dims().joints != k {
        return Err(Error::invalid(format!(
            "checkpoint expects {} joints, motion has {k}",
            state.params.dims().joints
        )));
    }
    let skel = skeleton_for(k, hip_joints)?;
    let stage = stage.unwrap_or(if state.params.dims().cross_view {
        LiftStage::Sampling
    } else {
        LiftStage::Sds
    });
    let sched = cfg.schedule()?;
    let sds = cfg.sds_config(cfg.seed);
    let lifted = run.stage("lift", |_| match stage {
        LiftStage::Sds => lift_single_to_multi(&input, &cam, &skel, &state.params, &sched, &sds),
        LiftStage::Sampling => {
            if !state.params.dims().cross_view {
                return Err(Error::invalid("sampling needs a cross-view checkpoint"));
            }
            lift_by_sampling(&input, &cam, &skel, &state.params, &sched, &sds)
        }
    })?;
    let views = lifted.sequences()?;
    let human_joints = if hip_joints.is_none() && k > 17 { 17 } else { k };
    let canon_name = match object_canonical {
        Some(p) => {
            run.input(p)?;
            let c = load_canonical(p)?;
            let dst = run.path("object_canonical.json");
            save_canonical(&dst, &c)?;
            run.artifact(&dst);
            Some("object_canonical.json")
        }
        None => None,
    };
    for p in save_bundle(&run.path("bundle.json"), &views, &lifted.cameras, fps, human_joints, canon_name)? {
        run.artifact(&p);
    }
    let line = lifted.line_loss_px()?;
    let report = LiftReport {
        version: SCHEMA_VERSION,
        stage: match stage {
            LiftStage::Sds => "sds",
            LiftStage::Sampling => "sampling",
        },
        views: views.len(),
        frames: input.frames(),
        line_loss_px: line,
        line_loss_px_per_frame: line / input.frames() as f64,
    };
    let p = run.path("lift_report.json");
    write_json(&p, &report)?;
    run.artifact(&p);
    run.finish()
}

#[derive(serde::Serialize)]
struct TriangulationReport {
    frames: usize,
    joints: usize,
    /// `[frame, joint]` entries without enough constraining views.
    flagged: Vec<[usize; 2]>,
    mean_residual_px: f64,
    max_residual_px: f64,
}

impl TriangulationReport {
    fn new(tri: &Triangulation) -> Self {
        let j = tri.points.joints();
        Self {
            frames: tri.points.frames(),
            joints: j,
            flagged: tri
                .flagged
                .iter()
                .enumerate()
                .filter(|(_, f)| **f)
                .map(|(i, _)| [i / j, i % j])
                .collect(),
            mean_residual_px: tri.mean_residual_px(),
            max_residual_px: tri.residual_px.iter().copied().fold(0.0, f64::max),
        }
    }
}

#[derive(serde::Serialize)]
struct ReconstructionReport {
    version: u32,
    views: usize,
    human: TriangulationReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    object: Option<TriangulationReport>,
}

fn split_views(views: &[KeypointSeq2D], at: usize) -> Result<(Vec<KeypointSeq2D>, Option<Vec<KeypointSeq2D>>)> {
    let mut human = Vec::with_capacity(views.len());
    let mut object = Vec::with_capacity(views.len());
    for v in views {
        let (h, o) = v.split_joints(at)?;
        human.push(h);
        if let Some(o) = o {
            object.push(o);
        }
    }
    Ok((human, (!object.is_empty()).then_some(object)))
}

/// Triangulates a bundle. Writes `motion3d.json` and
/// `reconstruction.json`; when the bundle carries object keypoints, also
/// `object_keypoints3d.json` and `object_pose.json`.
pub fn reconstruct(cfg: &Config, bundle: &Path, out: &Path) -> Result<RunManifest> {
    let mut run = Run::new("reconstruct", out, cfg)?;
    run.input(bundle)?;
    let index: BundleFile = read_json(bundle)?;
    let base = bundle.parent().unwrap_or(Path::new("."));
    for v in &index.views {
        run.input(&base.join(&v.motion))?;
        run.input(&base.join(&v.camera))?;
    }
    if let Some(c) = &index.object_canonical {
        run.input(&base.join(c))?;
    }
    let b = load_bundle(bundle)?;
    if b.views.len() < 2 {
        return Err(Error::UnderConstrained(format!(
            "reconstruction needs at least two views, bundle has {}",
            b.views.len()
        )));
    }
    let tcfg = cfg.triangulation();
    let (human, object) = split_views(&b.views, b.human_joints)?;
    let tri = run.stage("triangulate", |_| triangulate_sequence(&human, &b.cameras, &tcfg))?;
    if tri.flagged_count() == tri.flagged.len() {
        return Err(Error::UnderConstrained("no joint is constrained by the bundle's views".into()));
    }
    let p = run.path("motion3d.json");
    save_motion_3d(&p, &tri.points, b.fps)?;
    run.artifact(&p);

    let mut report = ReconstructionReport {
        version: SCHEMA_VERSION,
        views: b.views.len(),
        human: TriangulationReport::new(&tri),
        object: None,
    };
    if let Some(object) = object {
        let canon = b.object_canonical.as_ref().ok_or_else(|| {
            Error::schema(bundle.display().to_string(), "object keypoints present but `object_canonical` is missing")
        })?;
        if canon.len() != object[0].joints() {
            return Err(Error::schema(
                bundle.display().to_string(),
                "object keypoint count differs from the canonical keypoints",
            ));
        }
        let otri = run.stage("triangulate-object", |_| triangulate_sequence(&object, &b.cameras, &tcfg))?;
        // a keypoint takes part in the fit only if every frame triangulated it
        let m = canon.len();
        let visible: Vec<bool> = (0..m)
            .map(|j| (0..otri.points.frames()).all(|t| !otri.flagged[t * m + j]))
            .collect();
        let fit = run.stage("fit-object", |_| {
            fit_object_trajectory(&otri.points, canon, &visible, &cfg.object_fit())
        })?;
        let fitted = keypoints_from_pose(&fit.pose, canon)?;
        let per_frame = (0..fitted.frames())
            .map(|t| {
                let (mut s, mut n) = (0.0, 0usize);
                for j in 0..m {
                    if visible[j] {
                        let (a, q) = (fitted.get(t, j), otri.points.get(t, j));
                        s += ((a[0] - q[0]).powi(2) + (a[1] - q[1]).powi(2) + (a[2] - q[2]).powi(2)).sqrt();
                        n += 1;
                    }
                }
                if n == 0 {
                    0.0
                } else {
                    s / n as f64
                }
            })
            .collect();
        let p = run.path("object_keypoints3d.json");
        save_motion_3d(&p, &fitted, b.fps)?;
        run.artifact(&p);
        let p = run.path("object_pose.json");
        save_object_pose(
            &p,
            &fit.pose,
            Some(PoseResidual {
                per_frame,
                fit_loss: fit.fit_loss,
                smooth_loss: fit.smooth_loss,
            }),
        )?;
        run.artifact(&p);
        report.object = Some(TriangulationReport::new(&otri));
    }
    let p = run.path("reconstruction.json");
    write_json(&p, &report)?;
    run.artifact(&p);
    run.finish()
}

/// Fits a rigid mesh pose to each mask: the first frame from random
/// restarts, later frames warm-started from the previous solution.
/// Writes `object_pose.json` with the per-frame Chamfer loss as residual.
pub fn fit_object_mask(cfg: &Config, mesh: &Path, masks: &[PathBuf], camera: &Path, out: &Path) -> Result<RunManifest> {
    if masks.is_empty() {
        return Err(Error::invalid("at least one mask is required"));
    }
    let mut run = Run::new("fit-object-mask", out, cfg)?;
    run.input(mesh)?;
    run.input(camera)?;
    for m in masks {
        run.input(m)?;
    }
    let mesh = TriMesh::read_obj(mesh)?;
    let intr = load_camera(camera)?.intrinsics;
    let ccfg = cfg.chamfer();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut prev: Option<(Matrix3<f64>, nalgebra::Vector3<f64>)> = None;
    let mut pose = ObjectPose {
        rot6d: Vec::with_capacity(masks.len()),
        translation: Vec::with_capacity(masks.len()),
        scale: 1.0,
    };
    let mut losses = Vec::with_capacity(masks.len());
    for (t, m) in masks.iter().enumerate() {
        let mask = MaskImage::read_pgm(m)?;
        let fit = run.stage(&format!("frame_{t:04}"), |_| {
            chamfer_align_frame(&mesh, &mask, &intr, prev, &mut rng, &ccfg)
        })?;
        if !fit.loss.is_finite() {
            return Err(Error::Numerical(format!("alignment diverged at frame {t}")));
        }
        pose.rot6d.push(matrix_to_rot6d(&fit.rotation));
        pose.translation.push(fit.translation);
        losses.push(fit.loss);
        prev = Some((fit.rotation, fit.translation));
    }
    let smooth = if pose.frames() > 1 {
        (0..pose.frames() - 1)
            .map(|t| {
                let d: f64 = (0..6).map(|i| (pose.rot6d[t][i] - pose.rot6d[t + 1][i]).powi(2)).sum::<f64>()
                    + (pose.translation[t] - pose.translation[t + 1]).norm_squared();
                d.sqrt()
            })
            .sum::<f64>()
            / (pose.frames() - 1) as f64
    } else {
        0.0
    };
    let p = run.path("object_pose.json");
    save_object_pose(
        &p,
        &pose,
        Some(PoseResidual {
            fit_loss: losses.iter().sum::<f64>() / losses.len() as f64,
            per_frame: losses,
            smooth_loss: smooth,
        }),
    )?;
    run.artifact(&p);
    run.finish()
}

/// File lists for [`evaluate`]. `pred[i]` is scored against `gt[i]`; both
/// 2D or both 3D. Object lists are empty or parallel to `pred`.
#[derive(Debug, Clone, Default)]
pub struct EvaluateInputs {
    pub pred: Vec<PathBuf>,
    pub gt: Vec<PathBuf>,
    pub pred_object: Vec<PathBuf>,
    pub gt_object: Vec<PathBuf>,
    pub hips: Option<(usize, usize)>,
}

enum Loaded {
    Two(KeypointSeq2D),
    Three(Seq3D),
}

fn load_any(path: &Path, to_m: f64) -> Result<Loaded> {
    let f: MotionFile = read_json(path)?;
    let ctx = path.display().to_string();
    match f.dim {
        2 => Ok(Loaded::Two(f.to_2d(&ctx)?)),
        _ => {
            let s = f.to_3d(&ctx)?;
            if to_m == 1.0 {
                return Ok(Loaded::Three(s));
            }
            let coords = s.coords().iter().map(|p| [p[0] * to_m, p[1] * to_m, p[2] * to_m]).collect();
            Ok(Loaded::Three(Seq3D::new(s.frames(), s.joints(), coords)?))
        }
    }
}

fn load_3d_scaled(path: &Path, to_m: f64) -> Result<Seq3D> {
    match load_any(path, to_m)? {
        Loaded::Three(s) => Ok(s),
        Loaded::Two(_) => Err(Error::schema(path.display().to_string(), "expected a 3D motion")),
    }
}

/// Scores prediction files against ground truth and writes
/// `metrics.json` and `metrics.csv` (per sequence plus the mean row).
pub fn evaluate(cfg: &Config, inputs: &EvaluateInputs, out: &Path) -> Result<MetricsReport> {
    if inputs.pred.len() != inputs.gt.len() {
        return Err(Error::shape(format!(
            "{} prediction files but {} ground-truth files",
            inputs.pred.len(),
            inputs.gt.len()
        )));
    }
    if inputs.pred.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    let has_object = !inputs.pred_object.is_empty() || !inputs.gt_object.is_empty();
    if has_object && (inputs.pred_object.len() != inputs.pred.len() || inputs.gt_object.len() != inputs.pred.len()) {
        return Err(Error::shape("object file lists must match the prediction list"));
    }
    let mut run = Run::new("evaluate", out, cfg)?;
    let to_m = cfg.metrics.to_meters()?;
    let mut rows = Vec::with_capacity(inputs.pred.len());
    for (i, (pp, gp)) in inputs.pred.iter().zip(&inputs.gt).enumerate() {
        run.input(pp)?;
        run.input(gp)?;
        let pred = load_any(pp, to_m)?;
        let gt = load_any(gp, to_m)?;
        let mut eval = SequenceEval {
            name: relative_path(pp, out)?,
            ..SequenceEval::default()
        };
        let joints = match (&pred, &gt) {
            (Loaded::Two(p), Loaded::Two(g)) => {
                eval.pred_2d = Some(p);
                eval.gt_2d = Some(g);
                p.joints()
            }
            (Loaded::Three(p), Loaded::Three(g)) => {
                eval.pred_3d = Some(p);
                eval.gt_3d = Some(g);
                p.joints()
            }
            _ => {
                return Err(Error::shape(format!(
                    "{} and {} differ in dimension",
                    pp.display(),
                    gp.display()
                )))
            }
        };
        let skel = skeleton_for(joints, inputs.hips)?;
        let objects = if has_object {
            run.input(&inputs.pred_object[i])?;
            run.input(&inputs.gt_object[i])?;
            Some((
                load_3d_scaled(&inputs.pred_object[i], to_m)?,
                load_3d_scaled(&inputs.gt_object[i], to_m)?,
            ))
        } else {
            None
        };
        if let Some((po, go)) = &objects {
            eval.pred_object = Some(po);
            eval.gt_object = Some(go);
        }
        rows.push(evaluate_sequence_with(&eval, &skel, cfg.metrics.foot_height, &GroundPlane::default())?);
    }
    let report = MetricsReport::new(rows);
    let p = run.path("metrics.json");
    write_text(&p, &to_json_string(&report, "metrics")?)?;
    run.artifact(&p);
    let p = run.path("metrics.csv");
    write_text(&p, &report.to_csv())?;
    run.artifact(&p);
    run.finish()?;
    Ok(report)
}
