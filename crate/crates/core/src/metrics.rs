//! Evaluation metrics. 2D errors are in pixels, 3D errors in millimetres
//! (inputs are metres).

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{KeypointSeq2D, Seq3D, SkeletonSpec};
use crate::recon::umeyama;

fn same_shape_2d(a: &KeypointSeq2D, b: &KeypointSeq2D) -> Result<()> {
    if a.frames() != b.frames() || a.joints() != b.joints() {
        return Err(Error::shape(format!(
            "sequences are {}x{} and {}x{}",
            a.frames(),
            a.joints(),
            b.frames(),
            b.joints()
        )));
    }
    Ok(())
}

fn same_shape_3d(a: &Seq3D, b: &Seq3D) -> Result<()> {
    if a.frames() != b.frames() || a.joints() != b.joints() {
        return Err(Error::shape(format!(
            "sequences are {}x{} and {}x{}",
            a.frames(),
            a.joints(),
            b.frames(),
            b.joints()
        )));
    }
    Ok(())
}

fn v3(p: [f64; 3]) -> Vector3<f64> {
    Vector3::new(p[0], p[1], p[2])
}

fn dist3(a: [f64; 3], b: [f64; 3]) -> f64 {
    (v3(a) - v3(b)).norm()
}

fn mean(sum: f64, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::UnderConstrained("no valid entries to average".into()));
    }
    Ok(sum / n as f64)
}

/// Mean pixel distance over entries visible in both sequences.
pub fn j2d(pred: &KeypointSeq2D, gt: &KeypointSeq2D) -> Result<f64> {
    same_shape_2d(pred, gt)?;
    let (mut s, mut n) = (0.0, 0);
    for t in 0..gt.frames() {
        for k in 0..gt.joints() {
            if pred.is_visible(t, k) && gt.is_visible(t, k) {
                let (a, b) = (pred.get(t, k), gt.get(t, k));
                s += (a[0] - b[0]).hypot(a[1] - b[1]);
                n += 1;
            }
        }
    }
    mean(s, n)
}

fn hip_mean(seq: &KeypointSeq2D, skel: &SkeletonSpec, t: usize) -> Option<[f64; 2]> {
    let root = skel.pelvis.map_or(vec![skel.left_hip, skel.right_hip], |p| vec![p]);
    if !root.iter().all(|&k| seq.is_visible(t, k)) {
        return None;
    }
    let n = root.len() as f64;
    let sx: f64 = root.iter().map(|&k| seq.get(t, k)[0]).sum();
    let sy: f64 = root.iter().map(|&k| seq.get(t, k)[1]).sum();
    Some([sx / n, sy / n])
}

/// [`j2d`] after moving each frame's root to a common point. Frames whose
/// root is not visible in both sequences are skipped.
pub fn j2d_centered(pred: &KeypointSeq2D, gt: &KeypointSeq2D, skel: &SkeletonSpec) -> Result<f64> {
    same_shape_2d(pred, gt)?;
    if skel.joints() != gt.joints() {
        return Err(Error::shape("skeleton does not match the sequences"));
    }
    skel.validate()?;
    let (mut s, mut n) = (0.0, 0);
    for t in 0..gt.frames() {
        let (Some(rp), Some(rg)) = (hip_mean(pred, skel, t), hip_mean(gt, skel, t)) else {
            continue;
        };
        for k in 0..gt.joints() {
            if pred.is_visible(t, k) && gt.is_visible(t, k) {
                let (a, b) = (pred.get(t, k), gt.get(t, k));
                s += ((a[0] - rp[0]) - (b[0] - rg[0])).hypot((a[1] - rp[1]) - (b[1] - rg[1]));
                n += 1;
            }
        }
    }
    mean(s, n)
}

/// Mean per-joint position error in mm.
pub fn mpjpe(pred: &Seq3D, gt: &Seq3D) -> Result<f64> {
    same_shape_3d(pred, gt)?;
    let s: f64 = pred.coords().iter().zip(gt.coords()).map(|(a, b)| dist3(*a, *b)).sum();
    Ok(1000.0 * mean(s, gt.coords().len())?)
}

/// MPJPE after the best similarity transform of `pred` onto `gt` fitted
/// over the whole sequence.
pub fn pa_mpjpe(pred: &Seq3D, gt: &Seq3D) -> Result<f64> {
    same_shape_3d(pred, gt)?;
    let src: Vec<Vector3<f64>> = pred.coords().iter().map(|p| v3(*p)).collect();
    let dst: Vec<Vector3<f64>> = gt.coords().iter().map(|p| v3(*p)).collect();
    let sim = umeyama(&src, &dst, true)?;
    let s: f64 = src.iter().zip(&dst).map(|(p, q)| (sim.apply(p) - q).norm()).sum();
    Ok(1000.0 * mean(s, dst.len())?)
}

/// Per-frame root positions: the pelvis joint, else the hip midpoint.
pub fn pelvis_track(seq: &Seq3D, skel: &SkeletonSpec) -> Result<Vec<[f64; 3]>> {
    skel.validate()?;
    if skel.joints() != seq.joints() {
        return Err(Error::shape("skeleton does not match the sequence"));
    }
    Ok((0..seq.frames())
        .map(|t| match skel.pelvis {
            Some(p) => seq.get(t, p),
            None => {
                let (l, r) = (seq.get(t, skel.left_hip), seq.get(t, skel.right_hip));
                [0.5 * (l[0] + r[0]), 0.5 * (l[1] + r[1]), 0.5 * (l[2] + r[2])]
            }
        })
        .collect())
}

/// Per-frame centroid of all points; the object root.
pub fn centroid_track(seq: &Seq3D) -> Vec<[f64; 3]> {
    (0..seq.frames())
        .map(|t| {
            let f = seq.frame(t);
            let n = f.len() as f64;
            let c = f.iter().fold([0.0; 3], |acc, p| [acc[0] + p[0], acc[1] + p[1], acc[2] + p[2]]);
            [c[0] / n, c[1] / n, c[2] / n]
        })
        .collect()
}

/// Mean distance between two root trajectories in mm.
pub fn t_root(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::shape("root trajectories differ in length"));
    }
    let s: f64 = pred.iter().zip(gt).map(|(a, b)| dist3(*a, *b)).sum();
    Ok(1000.0 * mean(s, gt.len())?)
}

/// Height is `up . x - offset`; horizontal motion is the part orthogonal to
/// `up`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundPlane {
    pub up: Vector3<f64>,
    pub offset: f64,
}

impl Default for GroundPlane {
    fn default() -> Self {
        Self {
            up: Vector3::y(),
            offset: 0.0,
        }
    }
}

/// Foot sliding: per frame step and foot joint, horizontal displacement
/// weighted by `clamp(2 - 2^(h/H), 0, 1)` where `h` is the height at the
/// start of the step, zero when `h >= H`. Averaged over all steps and feet;
/// in metres.
pub fn foot_sliding(pred: &Seq3D, skel: &SkeletonSpec, height_threshold: f64, ground: &GroundPlane) -> Result<f64> {
    skel.validate()?;
    if skel.joints() != pred.joints() {
        return Err(Error::shape("skeleton does not match the sequence"));
    }
    if skel.foot_joints.is_empty() {
        return Err(Error::invalid("skeleton has no foot joints"));
    }
    if !(height_threshold > 0.0) {
        return Err(Error::invalid("height threshold must be positive"));
    }
    let up = ground.up.normalize();
    if pred.frames() < 2 {
        return Ok(0.0);
    }
    let mut s = 0.0;
    let mut n = 0;
    for t in 0..pred.frames() - 1 {
        for &f in &skel.foot_joints {
            let (a, b) = (v3(pred.get(t, f)), v3(pred.get(t + 1, f)));
            let h = up.dot(&a) - ground.offset;
            n += 1;
            if h >= height_threshold {
                continue;
            }
            let w = (2.0 - 2f64.powf(h / height_threshold)).clamp(0.0, 1.0);
            let d = b - a;
            s += w * (d - up * up.dot(&d)).norm();
        }
    }
    mean(s, n)
}

pub const DEFAULT_FOOT_HEIGHT: f64 = 0.05;

/// One row of the evaluation table. Missing inputs leave a metric unset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub name: String,
    pub j2d: Option<f64>,
    pub j2d_centered: Option<f64>,
    pub t_root: Option<f64>,
    pub mpjpe: Option<f64>,
    pub pa_mpjpe: Option<f64>,
    pub fs: Option<f64>,
    pub t_o_root: Option<f64>,
    pub o_mpjpe: Option<f64>,
}

impl MetricsRow {
    pub fn values(&self) -> [Option<f64>; 8] {
        [
            self.j2d,
            self.j2d_centered,
            self.t_root,
            self.mpjpe,
            self.pa_mpjpe,
            self.fs,
            self.t_o_root,
            self.o_mpjpe,
        ]
    }

    fn from_values(name: String, v: [Option<f64>; 8]) -> Self {
        Self {
            name,
            j2d: v[0],
            j2d_centered: v[1],
            t_root: v[2],
            mpjpe: v[3],
            pa_mpjpe: v[4],
            fs: v[5],
            t_o_root: v[6],
            o_mpjpe: v[7],
        }
    }
}

/// Inputs for evaluating one sequence; every field is optional.
#[derive(Debug, Clone, Default)]
pub struct SequenceEval<'a> {
    pub name: String,
    pub pred_2d: Option<&'a KeypointSeq2D>,
    pub gt_2d: Option<&'a KeypointSeq2D>,
    pub pred_3d: Option<&'a Seq3D>,
    pub gt_3d: Option<&'a Seq3D>,
    pub pred_object: Option<&'a Seq3D>,
    pub gt_object: Option<&'a Seq3D>,
}

pub fn evaluate_sequence(input: &SequenceEval, skel: &SkeletonSpec) -> Result<MetricsRow> {
    evaluate_sequence_with(input, skel, DEFAULT_FOOT_HEIGHT, &GroundPlane::default())
}

/// [`evaluate_sequence`] with an explicit foot-contact height and ground.
pub fn evaluate_sequence_with(
    input: &SequenceEval,
    skel: &SkeletonSpec,
    foot_height: f64,
    ground: &GroundPlane,
) -> Result<MetricsRow> {
    let mut row = MetricsRow {
        name: input.name.clone(),
        ..MetricsRow::default()
    };
    if let (Some(p), Some(g)) = (input.pred_2d, input.gt_2d) {
        row.j2d = Some(j2d(p, g)?);
        row.j2d_centered = Some(j2d_centered(p, g, skel)?);
    }
    if let Some(p) = input.pred_3d {
        if !skel.foot_joints.is_empty() {
            row.fs = Some(foot_sliding(p, skel, foot_height, ground)?);
        }
        if let Some(g) = input.gt_3d {
            row.t_root = Some(t_root(&pelvis_track(p, skel)?, &pelvis_track(g, skel)?)?);
            row.mpjpe = Some(mpjpe(p, g)?);
            row.pa_mpjpe = Some(pa_mpjpe(p, g)?);
        }
    }
    if let (Some(p), Some(g)) = (input.pred_object, input.gt_object) {
        same_shape_3d(p, g)?;
        row.t_o_root = Some(t_root(&centroid_track(p), &centroid_track(g))?);
        row.o_mpjpe = Some(mpjpe(p, g)?);
    }
    Ok(row)
}

/// Per-sequence rows plus their column-wise mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sequences: Vec<MetricsRow>,
    pub aggregate: MetricsRow,
}

impl MetricsReport {
    /// Aggregates each column over the rows where it is set.
    pub fn new(sequences: Vec<MetricsRow>) -> Self {
        let mut sums = [0.0; 8];
        let mut counts = [0usize; 8];
        for r in &sequences {
            for (i, v) in r.values().iter().enumerate() {
                if let Some(v) = v {
                    sums[i] += v;
                    counts[i] += 1;
                }
            }
        }
        let agg = std::array::from_fn(|i| (counts[i] > 0).then(|| sums[i] / counts[i] as f64));
        Self {
            aggregate: MetricsRow::from_values("mean".into(), agg),
            sequences,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::schema("metrics", e.to_string()))
    }

    pub const CSV_HEADER: &'static str = "sequence,J2D,J2D-C,T_root,MPJPE,PA-MPJPE,FS,T_O_root,O-MPJPE";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in self.sequences.iter().chain(std::iter::once(&self.aggregate)) {
            out.push_str(&r.name);
            for v in r.values() {
                out.push(',');
                if let Some(v) = v {
                    out.push_str(&format!("{v:.6}"));
                }
            }
            out.push('\n');
        }
        out
    }
}
