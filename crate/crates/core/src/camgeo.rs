//! Pinhole cameras, trajectory normalization, epipoles and epipolar lines.
//!
//! Extrinsics follow `x_cam = R * x_world + t`. Pixel coordinates use the
//! usual image convention (x right, y down) with `p = (cx + fx X/Z, cy + fy Y/Z)`.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::motion::{KeypointSeq2D, Seq3D};

/// Depth below which a projection is flagged invalid.
pub const Z_NEAR: f64 = 1e-6;

/// Squared norm of `(a, b)` below which a line is considered invalid.
const LINE_EPS: f64 = 1e-24;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: f64, height: f64) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Fixed focal length of 1000 px with the principal point at the image
    /// center; used for mask alignment.
    pub fn centered_f1000(width: f64, height: f64) -> Self {
        Self {
            fx: 1000.0,
            fy: 1000.0,
            cx: width / 2.0,
            cy: height / 2.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.fx, self.fy, self.cx, self.cy, self.width, self.height];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("intrinsics must be finite"));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 || self.width <= 0.0 || self.height <= 0.0 {
            return Err(Error::invalid("focal lengths and image size must be positive"));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    pub fn center(&self) -> [f64; 2] {
        [self.cx, self.cy]
    }

    /// Pixel to canvas units: `((x - cx) / (w/2), (y - cy) / (h/2))`.
    #[inline]
    pub fn to_canvas(&self, p: [f64; 2]) -> [f64; 2] {
        [(p[0] - self.cx) / (0.5 * self.width), (p[1] - self.cy) / (0.5 * self.height)]
    }

    #[inline]
    pub fn from_canvas(&self, u: [f64; 2]) -> [f64; 2] {
        [self.cx + 0.5 * self.width * u[0], self.cy + 0.5 * self.height * u[1]]
    }

    /// Re-expresses a pixel-space line in canvas units, renormalized.
    pub fn line_to_canvas(&self, l: [f64; 3]) -> [f64; 3] {
        if l[0] * l[0] + l[1] * l[1] < LINE_EPS {
            return [0.0; 3];
        }
        let (sx, sy) = (0.5 * self.width, 0.5 * self.height);
        normalize_line([l[0] * sx, l[1] * sy, l[0] * self.cx + l[1] * self.cy + l[2]])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraExtrinsic {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl CameraExtrinsic {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let e = Self {
            rotation,
            translation,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        if r.iter().chain(self.translation.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("extrinsic must be finite"));
        }
        let err = (r.transpose() * r - Matrix3::identity()).amax();
        if err >= 1e-6 || r.determinant() <= 0.0 {
            return Err(Error::invalid(format!(
                "rotation is not in SO(3) (orthogonality error {err:.3e})"
            )));
        }
        Ok(())
    }

    /// `[R | t]` flattened row-major: r00 r01 r02 t0 r10 ... t2.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t[0],
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t[1],
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t[2],
        ]
    }

    pub fn from_row_major(v: &[f64; 12]) -> Result<Self> {
        let rotation = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        let translation = Vector3::new(v[3], v[7], v[11]);
        Self::new(rotation, translation)
    }

    #[inline]
    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self` after `first`: maps through `first` then `self`.
    pub fn compose(&self, first: &CameraExtrinsic) -> Self {
        Self {
            rotation: self.rotation * first.rotation,
            translation: self.rotation * first.translation + self.translation,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraTrajectory {
    pub extrinsics: Vec<CameraExtrinsic>,
    pub intrinsics: CameraIntrinsics,
}

impl CameraTrajectory {
    pub fn new(extrinsics: Vec<CameraExtrinsic>, intrinsics: CameraIntrinsics) -> Result<Self> {
        if extrinsics.is_empty() {
            return Err(Error::shape("camera trajectory needs at least one frame"));
        }
        intrinsics.validate()?;
        for e in &extrinsics {
            e.validate()?;
        }
        Ok(Self {
            extrinsics,
            intrinsics,
        })
    }

    pub fn static_camera(ext: CameraExtrinsic, intrinsics: CameraIntrinsics, frames: usize) -> Self {
        Self {
            extrinsics: vec![ext; frames],
            intrinsics,
        }
    }

    pub fn frames(&self) -> usize {
        self.extrinsics.len()
    }

    pub fn require_frames(&self, frames: usize) -> Result<()> {
        if self.frames() != frames {
            return Err(Error::shape(format!(
                "camera has {} frames, motion has {frames}",
                self.frames()
            )));
        }
        Ok(())
    }
}

/// Result of projecting a set of points.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub points: Vec<[f64; 2]>,
    pub valid: Vec<bool>,
}

#[inline]
pub fn project_point(x: &Vector3<f64>, ext: &CameraExtrinsic, intr: &CameraIntrinsics) -> Option<[f64; 2]> {
    let c = ext.apply(x);
    if c.z <= Z_NEAR {
        return None;
    }
    Some([intr.cx + intr.fx * c.x / c.z, intr.cy + intr.fy * c.y / c.z])
}

/// Projects one frame of 3D points; invalid points keep `(0, 0)` and are
/// flagged.
pub fn project(points: &[[f64; 3]], ext: &CameraExtrinsic, intr: &CameraIntrinsics) -> Projection {
    let mut out = Projection {
        points: Vec::with_capacity(points.len()),
        valid: Vec::with_capacity(points.len()),
    };
    for p in points {
        match project_point(&Vector3::from(*p), ext, intr) {
            Some(uv) => {
                out.points.push(uv);
                out.valid.push(true);
            }
            None => {
                out.points.push([0.0, 0.0]);
                out.valid.push(false);
            }
        }
    }
    out
}

/// Projects a whole 3D sequence through a trajectory. Points behind the
/// camera are marked invisible.
pub fn project_sequence(seq: &Seq3D, traj: &CameraTrajectory) -> Result<KeypointSeq2D> {
    traj.require_frames(seq.frames())?;
    let mut coords = Vec::with_capacity(seq.frames() * seq.joints());
    let mut vis = Vec::with_capacity(seq.frames() * seq.joints());
    for t in 0..seq.frames() {
        let p = project(seq.frame(t), &traj.extrinsics[t], &traj.intrinsics);
        coords.extend(p.points);
        vis.extend(p.valid);
    }
    KeypointSeq2D::with_visibility(seq.frames(), seq.joints(), coords, vis)
}

/// Transform from camera `a`'s frame to camera `b`'s frame.
pub fn relative_transform(a: &CameraExtrinsic, b: &CameraExtrinsic) -> CameraExtrinsic {
    let rotation = b.rotation * a.rotation.transpose();
    let translation = b.translation - rotation * a.translation;
    CameraExtrinsic {
        rotation,
        translation,
    }
}

/// Expresses every frame relative to frame 0, making frame 0 the identity.
pub fn normalize_trajectory(traj: &CameraTrajectory) -> CameraTrajectory {
    let first = traj.extrinsics[0];
    let extrinsics = traj
        .extrinsics
        .iter()
        .map(|e| relative_transform(&first, e))
        .collect();
    CameraTrajectory {
        extrinsics,
        intrinsics: traj.intrinsics,
    }
}

/// Homogeneous 2D point; `w = 0` means a point at infinity.
pub type Homogeneous2 = [f64; 3];

/// Projection of camera `u`'s center into view `v`, where `rel` maps `u`'s
/// camera frame into `v`'s. Finite epipoles are scaled to `w = 1`; epipoles
/// at infinity keep a unit direction.
pub fn epipole(rel: &CameraExtrinsic, intr_v: &CameraIntrinsics) -> Homogeneous2 {
    let e = intr_v.matrix() * rel.translation;
    let scale = rel.translation.norm().max(f64::MIN_POSITIVE);
    if e.z.abs() > 1e-12 * scale {
        [e.x / e.z, e.y / e.z, 1.0]
    } else {
        let n = (e.x * e.x + e.y * e.y).sqrt();
        if n > 0.0 {
            [e.x / n, e.y / n, 0.0]
        } else {
            [0.0, 0.0, 0.0]
        }
    }
}

/// Scales a line so that `a^2 + b^2 = 1`; lines without a direction become
/// all zeros (invalid).
#[inline]
pub fn normalize_line(l: [f64; 3]) -> [f64; 3] {
    let n2 = l[0] * l[0] + l[1] * l[1];
    if n2 < LINE_EPS || !n2.is_finite() {
        return [0.0; 3];
    }
    let n = n2.sqrt();
    [l[0] / n, l[1] / n, l[2] / n]
}

#[inline]
fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Per-frame, per-keypoint lines `(a, b, c)` with `a x + b y + c = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpipolarLineSet {
    pub frames: usize,
    pub joints: usize,
    pub lines: Vec<[f64; 3]>,
}

impl EpipolarLineSet {
    pub fn invalid(frames: usize, joints: usize) -> Self {
        Self {
            frames,
            joints,
            lines: vec![[0.0; 3]; frames * joints],
        }
    }

    #[inline]
    pub fn get(&self, t: usize, k: usize) -> [f64; 3] {
        self.lines[t * self.joints + k]
    }

    #[inline]
    pub fn is_valid(&self, t: usize, k: usize) -> bool {
        let l = self.get(t, k);
        l[0] != 0.0 || l[1] != 0.0
    }

    /// Same lines re-expressed in canvas units of `intr`.
    pub fn to_canvas(&self, intr: &CameraIntrinsics) -> Self {
        Self {
            frames: self.frames,
            joints: self.joints,
            lines: self.lines.iter().map(|&l| intr.line_to_canvas(l)).collect(),
        }
    }
}

/// Lines through each keypoint and the epipole of its frame. `epipoles`
/// holds either one epipole shared by all frames or one per frame.
pub fn training_epipolar_lines(seq: &KeypointSeq2D, epipoles: &[Homogeneous2]) -> Result<EpipolarLineSet> {
    if epipoles.len() != 1 && epipoles.len() != seq.frames() {
        return Err(Error::shape("need one epipole or one per frame"));
    }
    let mut lines = Vec::with_capacity(seq.frames() * seq.joints());
    for t in 0..seq.frames() {
        let e = epipoles[if epipoles.len() == 1 { 0 } else { t }];
        for k in 0..seq.joints() {
            if !seq.is_visible(t, k) {
                lines.push([0.0; 3]);
                continue;
            }
            let p = seq.get(t, k);
            lines.push(normalize_line(cross([p[0], p[1], 1.0], e)));
        }
    }
    Ok(EpipolarLineSet {
        frames: seq.frames(),
        joints: seq.joints(),
        lines,
    })
}

/// Fixed epipoles simulated during training: the four image corners, the
/// four edge midpoints and the horizontal point at infinity.
pub fn training_epipole_bank(intr: &CameraIntrinsics) -> Vec<Homogeneous2> {
    let (w, h) = (intr.width, intr.height);
    vec![
        [0.0, 0.0, 1.0],
        [w, 0.0, 1.0],
        [0.0, h, 1.0],
        [w, h, 1.0],
        [w / 2.0, 0.0, 1.0],
        [w / 2.0, h, 1.0],
        [0.0, h / 2.0, 1.0],
        [w, h / 2.0, 1.0],
        [1.0, 0.0, 0.0],
    ]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FundamentalMatrix(pub Matrix3<f64>);

impl FundamentalMatrix {
    /// Line in view `v` for pixel `x_u`, normalized.
    #[inline]
    pub fn line_for(&self, x_u: [f64; 2]) -> [f64; 3] {
        let l = self.0 * Vector3::new(x_u[0], x_u[1], 1.0);
        normalize_line([l.x, l.y, l.z])
    }

    pub fn singular_value_ratio(&self) -> f64 {
        let s = self.0.singular_values();
        s.min() / s.max()
    }
}

#[inline]
fn skew(t: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0)
}

/// `F = K_v^{-T} [t]_x R K_u^{-1}` for `rel` mapping view `u` into view `v`,
/// scaled to unit Frobenius norm and projected onto rank 2.
pub fn fundamental_matrix(
    rel: &CameraExtrinsic,
    intr_u: &CameraIntrinsics,
    intr_v: &CameraIntrinsics,
) -> Result<FundamentalMatrix> {
    if rel.translation.norm() <= 1e-9 {
        return Err(Error::Degenerate("zero-baseline camera pair has no fundamental matrix".into()));
    }
    // Rank-2 projection on the well-scaled essential matrix; doing it on F
    // loses several digits to the pixel-scale conditioning.
    let mut svd = (skew(&rel.translation) * rel.rotation).svd(true, true);
    svd.singular_values[2] = 0.0;
    let e = svd
        .recompose()
        .map_err(|e| Error::Numerical(format!("essential matrix recomposition: {e}")))?;
    let f = intr_v.inverse_matrix().transpose() * e * intr_u.inverse_matrix();
    let n = f.norm();
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::Numerical("fundamental matrix vanished".into()));
    }
    Ok(FundamentalMatrix(f / n))
}

/// Epipolar lines in view `v` induced by the keypoints of view `u`.
/// `fmats` holds one matrix per frame or a single shared one.
pub fn cross_view_epipolar_lines(seq_u: &KeypointSeq2D, fmats: &[FundamentalMatrix]) -> Result<EpipolarLineSet> {
    if fmats.len() != 1 && fmats.len() != seq_u.frames() {
        return Err(Error::shape("need one fundamental matrix or one per frame"));
    }
    let mut lines = Vec::with_capacity(seq_u.frames() * seq_u.joints());
    for t in 0..seq_u.frames() {
        let f = &fmats[if fmats.len() == 1 { 0 } else { t }];
        for k in 0..seq_u.joints() {
            if seq_u.is_visible(t, k) {
                lines.push(f.line_for(seq_u.get(t, k)));
            } else {
                lines.push([0.0; 3]);
            }
        }
    }
    Ok(EpipolarLineSet {
        frames: seq_u.frames(),
        joints: seq_u.joints(),
        lines,
    })
}

/// Per-frame fundamental matrices between two trajectories (`u` into `v`).
pub fn trajectory_fundamentals(u: &CameraTrajectory, v: &CameraTrajectory) -> Result<Vec<FundamentalMatrix>> {
    if u.frames() != v.frames() {
        return Err(Error::shape("trajectories differ in length"));
    }
    u.extrinsics
        .iter()
        .zip(&v.extrinsics)
        .map(|(a, b)| fundamental_matrix(&relative_transform(a, b), &u.intrinsics, &v.intrinsics))
        .collect()
}

/// Point-line distances, their sum and the gradient with respect to the
/// keypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct LineResidual {
    pub loss: f64,
    /// Signed residual `a x + b y + c` per entry (0 where skipped).
    pub residuals: Vec<f64>,
    /// `sign(r) * (a, b)` per entry.
    pub grad: Vec<[f64; 2]>,
}

/// Sum of `|a x + b y + c|` over valid lines and visible keypoints.
pub fn point_line_residual(lines: &EpipolarLineSet, seq: &KeypointSeq2D) -> Result<LineResidual> {
    point_line_residual_raw(lines, seq.coords(), seq.visibility(), seq.frames(), seq.joints())
}

pub(crate) fn point_line_residual_raw(
    lines: &EpipolarLineSet,
    coords: &[[f64; 2]],
    visibility: &[bool],
    frames: usize,
    joints: usize,
) -> Result<LineResidual> {
    if lines.frames != frames || lines.joints != joints || coords.len() != frames * joints {
        return Err(Error::shape(format!(
            "lines are {}x{}, keypoints are {frames}x{joints}",
            lines.frames, lines.joints
        )));
    }
    let mut loss = 0.0;
    let mut residuals = vec![0.0; coords.len()];
    let mut grad = vec![[0.0; 2]; coords.len()];
    for (i, (&[a, b, c], p)) in lines.lines.iter().zip(coords).enumerate() {
        if !visibility[i] || (a == 0.0 && b == 0.0) {
            continue;
        }
        let r = a * p[0] + b * p[1] + c;
        residuals[i] = r;
        loss += r.abs();
        let s = if r > 0.0 {
            1.0
        } else if r < 0.0 {
            -1.0
        } else {
            0.0
        };
        grad[i] = [s * a, s * b];
    }
    Ok(LineResidual {
        loss,
        residuals,
        grad,
    })
}
