//! Synthetic camera trajectories: the six predefined movement modes, ring
//! placement of virtual views around a subject, and the bank/predefined
//! mixture used to pick training cameras.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use rand::Rng;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_6, PI};

use crate::camgeo::{normalize_trajectory, relative_transform, CameraExtrinsic, CameraIntrinsics, CameraTrajectory};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CameraMotion {
    ZoomIn,
    ZoomOut,
    MoveLeft,
    MoveRight,
    RotateCw,
    RotateCcw,
}

impl CameraMotion {
    pub const ALL: [CameraMotion; 6] = [
        CameraMotion::ZoomIn,
        CameraMotion::ZoomOut,
        CameraMotion::MoveLeft,
        CameraMotion::MoveRight,
        CameraMotion::RotateCw,
        CameraMotion::RotateCcw,
    ];

    pub fn is_rotation(self) -> bool {
        matches!(self, CameraMotion::RotateCw | CameraMotion::RotateCcw)
    }

    pub fn name(self) -> &'static str {
        match self {
            CameraMotion::ZoomIn => "zoom_in",
            CameraMotion::ZoomOut => "zoom_out",
            CameraMotion::MoveLeft => "move_left",
            CameraMotion::MoveRight => "move_right",
            CameraMotion::RotateCw => "rotate_cw",
            CameraMotion::RotateCcw => "rotate_ccw",
        }
    }
}

/// A predefined movement: mode, peak displacement (meters, or radians for
/// rotations) and the two randomized switches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredefinedMode {
    pub motion: CameraMotion,
    pub max_displacement: f64,
    pub return_to_origin: bool,
    pub track_pelvis: bool,
}

impl PredefinedMode {
    pub fn new(motion: CameraMotion, max_displacement: f64) -> Result<Self> {
        if !(max_displacement > 0.0 && max_displacement.is_finite()) {
            return Err(Error::invalid("max displacement must be positive"));
        }
        Ok(Self {
            motion,
            max_displacement,
            return_to_origin: false,
            track_pelvis: false,
        })
    }

    /// Draws a mode with randomized range and switches. Zoom and lateral
    /// moves use U(0.5, 2.0) m, rotations U(pi/6, pi/2) rad.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, allow_tracking: bool) -> Self {
        let motion = CameraMotion::ALL[rng.random_range(0..CameraMotion::ALL.len())];
        let max_displacement = if motion.is_rotation() {
            rng.random_range(FRAC_PI_6..FRAC_PI_2)
        } else {
            rng.random_range(0.5..2.0)
        };
        let return_to_origin = rng.random_bool(0.5);
        let track = rng.random_bool(0.5);
        Self {
            motion,
            max_displacement,
            return_to_origin,
            track_pelvis: allow_tracking && track,
        }
    }
}

/// Displacement profile in `[0, 1]`: a linear ramp, or a triangle that
/// peaks mid-sequence and returns to zero.
fn profile(t: usize, frames: usize, return_to_origin: bool) -> f64 {
    let s = t as f64 / (frames - 1) as f64;
    if return_to_origin {
        1.0 - (2.0 * s - 1.0).abs()
    } else {
        s
    }
}

/// World-to-camera rotation looking from `eye` at `target`, zero roll, with
/// the camera y axis kept in the plane spanned by world y and the view ray.
pub fn look_at_rotation(eye: &Vector3<f64>, target: &Vector3<f64>) -> Result<Matrix3<f64>> {
    let z = target - eye;
    let n = z.norm();
    if n < 1e-12 {
        return Err(Error::Degenerate("look-at target coincides with the eye".into()));
    }
    let z = z / n;
    let up = Vector3::y();
    let x = up.cross(&z);
    let xn = x.norm();
    if xn < 1e-9 {
        return Err(Error::Degenerate("look-at direction is vertical".into()));
    }
    let x = x / xn;
    let y = z.cross(&x);
    Ok(Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]))
}

/// Generates a predefined trajectory of `frames` frames. Frame 0 is the
/// identity. With pelvis tracking, rotations are re-aimed each frame so
/// the pelvis stays where it appeared in frame 0 (on the optical axis when
/// it started there); `pelvis` must then be given in the frame-0 camera
/// frame.
pub fn generate_predefined(
    mode: &PredefinedMode,
    frames: usize,
    pelvis: Option<&[Vector3<f64>]>,
    intrinsics: CameraIntrinsics,
) -> Result<CameraTrajectory> {
    if frames < 2 {
        return Err(Error::invalid("predefined trajectories need at least two frames"));
    }
    if !(mode.max_displacement > 0.0) {
        return Err(Error::invalid("max displacement must be positive"));
    }
    let pelvis = match (mode.track_pelvis, pelvis) {
        (true, None) => return Err(Error::invalid("pelvis tracking requested without a pelvis track")),
        (true, Some(p)) if p.len() != frames => {
            return Err(Error::shape("pelvis track length differs from frame count"))
        }
        (true, Some(p)) => Some(p),
        (false, _) => None,
    };

    let mut base = Vec::with_capacity(frames);
    for t in 0..frames {
        let d = mode.max_displacement * profile(t, frames, mode.return_to_origin);
        let (rotation, translation) = match mode.motion {
            CameraMotion::MoveRight => (Matrix3::identity(), Vector3::new(d, 0.0, 0.0)),
            CameraMotion::MoveLeft => (Matrix3::identity(), Vector3::new(-d, 0.0, 0.0)),
            CameraMotion::ZoomIn => (Matrix3::identity(), Vector3::new(0.0, 0.0, -d)),
            CameraMotion::ZoomOut => (Matrix3::identity(), Vector3::new(0.0, 0.0, d)),
            CameraMotion::RotateCw => (*Rotation3::from_axis_angle(&Vector3::y_axis(), d).matrix(), Vector3::zeros()),
            CameraMotion::RotateCcw => (*Rotation3::from_axis_angle(&Vector3::y_axis(), -d).matrix(), Vector3::zeros()),
        };
        base.push(CameraExtrinsic {
            rotation,
            translation,
        });
    }

    let extrinsics = match pelvis {
        None => base,
        Some(track) => {
            let centers: Vec<_> = base.iter().map(CameraExtrinsic::center).collect();
            let aim0 = look_at_rotation(&centers[0], &track[0])?;
            centers
                .iter()
                .zip(track)
                .map(|(c, p)| {
                    let rotation = aim0.transpose() * look_at_rotation(c, p)?;
                    Ok(CameraExtrinsic {
                        rotation,
                        translation: -(rotation * c),
                    })
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    Ok(normalize_trajectory(&CameraTrajectory {
        extrinsics,
        intrinsics,
    }))
}

/// Places `views - 1` virtual trajectories on a horizontal ring around
/// `subject_center`. View `k` sits at azimuth `2 pi k / views` from the
/// input camera (measured about the vertical axis through the subject), at
/// the input camera's height, looks at the subject in frame 0 and then
/// follows the input camera's frame-to-frame motion.
pub fn ring_views(
    input: &CameraTrajectory,
    views: usize,
    subject_center: &Vector3<f64>,
    radius: Option<f64>,
) -> Result<Vec<CameraTrajectory>> {
    if views < 2 {
        return Err(Error::invalid("ring needs at least two views"));
    }
    let c0 = input.extrinsics[0].center();
    let offset = c0 - subject_center;
    let horizontal = Vector3::new(offset.x, 0.0, offset.z);
    let radius = match radius {
        Some(r) => r,
        None => horizontal.norm(),
    };
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::invalid("ring radius must be positive"));
    }
    let phi0 = if horizontal.norm() > 1e-12 {
        horizontal.z.atan2(horizontal.x)
    } else {
        0.0
    };
    let height = offset.y;

    let mut out = Vec::with_capacity(views - 1);
    for k in 1..views {
        let phi = phi0 + 2.0 * PI * k as f64 / views as f64;
        let eye = subject_center + Vector3::new(radius * phi.cos(), height, radius * phi.sin());
        let r0 = look_at_rotation(&eye, subject_center)?;
        let first = CameraExtrinsic {
            rotation: r0,
            translation: -(r0 * eye),
        };
        let extrinsics = input
            .extrinsics
            .iter()
            .map(|e| relative_transform(&input.extrinsics[0], e).compose(&first))
            .collect();
        out.push(CameraTrajectory {
            extrinsics,
            intrinsics: input.intrinsics,
        });
    }
    Ok(out)
}

/// Azimuth of a camera center around the vertical axis through `center`,
/// in the convention used by [`ring_views`].
pub fn azimuth_about(center: &Vector3<f64>, camera_center: &Vector3<f64>) -> f64 {
    let d = camera_center - center;
    d.z.atan2(d.x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BankEntry {
    pub name: String,
    pub split: Split,
    pub trajectory: CameraTrajectory,
}

/// Camera trajectories tagged with a train/test split.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CameraBank {
    entries: Vec<BankEntry>,
}

impl CameraBank {
    pub fn new(entries: Vec<BankEntry>) -> Result<Self> {
        let bank = Self { entries };
        bank.check_disjoint()?;
        Ok(bank)
    }

    pub fn entries(&self) -> &[BankEntry] {
        &self.entries
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &BankEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Rejects duplicate names and trajectories shared between splits.
    pub fn check_disjoint(&self) -> Result<()> {
        for (i, a) in self.entries.iter().enumerate() {
            for b in &self.entries[i + 1..] {
                if a.name == b.name {
                    return Err(Error::invalid(format!("camera '{}' listed twice", a.name)));
                }
                if a.split != b.split && a.trajectory == b.trajectory {
                    return Err(Error::invalid(format!(
                        "cameras '{}' and '{}' are identical across splits",
                        a.name, b.name
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CameraSource {
    Predefined(PredefinedMode),
    Bank(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledCamera {
    pub trajectory: CameraTrajectory,
    pub source: CameraSource,
}

/// Resamples a trajectory to `frames` frames: longer ones are cropped at a
/// random start, shorter ones are stretched with translation lerp and
/// rotation slerp.
pub fn fit_length<R: Rng + ?Sized>(traj: &CameraTrajectory, frames: usize, rng: &mut R) -> CameraTrajectory {
    let n = traj.frames();
    let extrinsics = if n >= frames {
        let start = if n > frames { rng.random_range(0..=n - frames) } else { 0 };
        traj.extrinsics[start..start + frames].to_vec()
    } else if n == 1 {
        vec![traj.extrinsics[0]; frames]
    } else {
        (0..frames)
            .map(|t| {
                let s = t as f64 * (n - 1) as f64 / (frames - 1).max(1) as f64;
                let i = (s.floor() as usize).min(n - 2);
                let w = s - i as f64;
                let (a, b) = (&traj.extrinsics[i], &traj.extrinsics[i + 1]);
                let qa = UnitQuaternion::from_matrix(&a.rotation);
                let qb = UnitQuaternion::from_matrix(&b.rotation);
                let q = qa.slerp(&qb, w);
                CameraExtrinsic {
                    rotation: *q.to_rotation_matrix().matrix(),
                    translation: a.translation * (1.0 - w) + b.translation * w,
                }
            })
            .collect()
    };
    CameraTrajectory {
        extrinsics,
        intrinsics: traj.intrinsics,
    }
}

/// Draws a training camera: a random predefined mode with probability
/// `predefined_fraction`, otherwise a uniformly chosen train-split bank
/// trajectory. The result has `frames` frames and starts at the identity.
pub fn sample_training_camera<R: Rng + ?Sized>(
    bank: &CameraBank,
    predefined_fraction: f64,
    frames: usize,
    intrinsics: CameraIntrinsics,
    pelvis: Option<&[Vector3<f64>]>,
    rng: &mut R,
) -> Result<SampledCamera> {
    if !(0.0..=1.0).contains(&predefined_fraction) {
        return Err(Error::invalid("predefined fraction must lie in [0, 1]"));
    }
    let train: Vec<usize> = bank
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.split == Split::Train)
        .map(|(i, _)| i)
        .collect();
    if train.is_empty() {
        return Err(Error::invalid("camera bank has no train trajectories"));
    }
    let use_predefined = rng.random::<f64>() < predefined_fraction;
    if use_predefined && frames >= 2 {
        let mode = PredefinedMode::random(rng, pelvis.is_some());
        let trajectory = generate_predefined(&mode, frames, pelvis, intrinsics)?;
        return Ok(SampledCamera {
            trajectory,
            source: CameraSource::Predefined(mode),
        });
    }
    let idx = train[rng.random_range(0..train.len())];
    let fitted = fit_length(&bank.entries[idx].trajectory, frames, rng);
    Ok(SampledCamera {
        trajectory: normalize_trajectory(&fitted),
        source: CameraSource::Bank(idx),
    })
}
