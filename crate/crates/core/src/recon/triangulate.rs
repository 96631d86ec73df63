use nalgebra::{DMatrix, Matrix3, Matrix3x4, Vector2, Vector3, Vector4};

use crate::camgeo::{CameraExtrinsic, CameraIntrinsics, CameraTrajectory};
use crate::error::{Error, Result};
use crate::motion::{KeypointSeq2D, Seq3D};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangulationConfig {
    /// Gauss-Newton iterations after the linear solve.
    pub iterations: usize,
    /// Minimum ray angle between some pair of views (degrees).
    pub min_angle_deg: f64,
}

impl Default for TriangulationConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            min_angle_deg: 0.1,
        }
    }
}

/// Triangulated joints plus a per-entry flag for joints that could not be
/// constrained (those are left at the origin).
#[derive(Debug, Clone, PartialEq)]
pub struct Triangulation {
    pub points: Seq3D,
    /// `T x J`, true where the joint is under-constrained.
    pub flagged: Vec<bool>,
    /// RMS pixel reprojection error per entry (0 when flagged).
    pub residual_px: Vec<f64>,
}

impl Triangulation {
    pub fn flagged_count(&self) -> usize {
        self.flagged.iter().filter(|f| **f).count()
    }

    /// Mean RMS reprojection error over constrained entries.
    pub fn mean_residual_px(&self) -> f64 {
        let (sum, n) = self
            .residual_px
            .iter()
            .zip(&self.flagged)
            .filter(|(_, f)| !**f)
            .fold((0.0, 0usize), |(s, n), (r, _)| (s + r, n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

/// One camera observation of a point.
#[derive(Debug, Clone, Copy)]
pub struct Observation {
    pub pixel: [f64; 2],
    pub extrinsic: CameraExtrinsic,
    pub intrinsics: CameraIntrinsics,
}

impl Observation {
    fn projection(&self) -> Matrix3x4<f64> {
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.extrinsic.rotation);
        rt.set_column(3, &self.extrinsic.translation);
        self.intrinsics.matrix() * rt
    }

    fn reproject(&self, x: &Vector3<f64>) -> Option<(Vector2<f64>, Vector3<f64>)> {
        let c = self.extrinsic.apply(x);
        if c.z <= 0.0 {
            return None;
        }
        let k = &self.intrinsics;
        Some((Vector2::new(k.cx + k.fx * c.x / c.z, k.cy + k.fy * c.y / c.z), c))
    }
}

/// Outcome of triangulating a single point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PointEstimate {
    Solved { point: Vector3<f64>, rms_px: f64 },
    UnderConstrained(&'static str),
}

/// Largest angle between the back-projected pixel rays over all view pairs.
fn max_ray_angle(obs: &[Observation]) -> f64 {
    let dirs: Vec<Vector3<f64>> = obs
        .iter()
        .map(|o| {
            let k = &o.intrinsics;
            let d = Vector3::new((o.pixel[0] - k.cx) / k.fx, (o.pixel[1] - k.cy) / k.fy, 1.0);
            (o.extrinsic.rotation.transpose() * d).normalize()
        })
        .collect();
    let mut best: f64 = 0.0;
    for i in 0..dirs.len() {
        for j in i + 1..dirs.len() {
            best = best.max(dirs[i].dot(&dirs[j]).clamp(-1.0, 1.0).acos());
        }
    }
    best
}

/// Linear triangulation followed by Gauss-Newton on the squared pixel
/// reprojection error.
pub fn triangulate_point(obs: &[Observation], cfg: &TriangulationConfig) -> PointEstimate {
    if obs.len() < 2 {
        return PointEstimate::UnderConstrained("fewer than two observations");
    }
    if max_ray_angle(obs) < cfg.min_angle_deg.to_radians() {
        return PointEstimate::UnderConstrained("triangulation angle below threshold");
    }
    let mut a = DMatrix::zeros(2 * obs.len(), 4);
    for (i, o) in obs.iter().enumerate() {
        let p = o.projection();
        let r0 = p.row(2) * o.pixel[0] - p.row(0);
        let r1 = p.row(2) * o.pixel[1] - p.row(1);
        let n0 = r0.norm().max(1e-300);
        let n1 = r1.norm().max(1e-300);
        a.row_mut(2 * i).copy_from(&(r0 / n0));
        a.row_mut(2 * i + 1).copy_from(&(r1 / n1));
    }
    let svd = a.svd(false, true);
    let Some(v_t) = svd.v_t else {
        return PointEstimate::UnderConstrained("linear system failed");
    };
    let (imin, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |b, (i, &s)| if s < b.1 { (i, s) } else { b });
    let h = Vector4::from_fn(|i, _| v_t[(imin, i)]);
    if h.w.abs() < 1e-12 * h.norm() {
        return PointEstimate::UnderConstrained("point at infinity");
    }
    let mut x = Vector3::new(h.x / h.w, h.y / h.w, h.z / h.w);
    for _ in 0..cfg.iterations {
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for o in obs {
            let Some((uv, c)) = o.reproject(&x) else {
                return PointEstimate::UnderConstrained("point behind a camera");
            };
            let r = uv - Vector2::new(o.pixel[0], o.pixel[1]);
            let k = &o.intrinsics;
            let iz = 1.0 / c.z;
            let dc = nalgebra::Matrix2x3::new(
                k.fx * iz,
                0.0,
                -k.fx * c.x * iz * iz,
                0.0,
                k.fy * iz,
                -k.fy * c.y * iz * iz,
            );
            let j = dc * o.extrinsic.rotation;
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
        }
        let Some(step) = jtj.lu().solve(&jtr) else {
            break;
        };
        x -= step;
        if step.norm() < 1e-14 * x.norm().max(1.0) {
            break;
        }
    }
    let mut sq = 0.0;
    for o in obs {
        let Some((uv, _)) = o.reproject(&x) else {
            return PointEstimate::UnderConstrained("point behind a camera");
        };
        sq += (uv - Vector2::new(o.pixel[0], o.pixel[1])).norm_squared();
    }
    PointEstimate::Solved {
        point: x,
        rms_px: (sq / obs.len() as f64).sqrt(),
    }
}

/// Triangulates every frame and joint from `V >= 2` synchronized views.
pub fn triangulate_sequence(
    views: &[KeypointSeq2D],
    cameras: &[CameraTrajectory],
    cfg: &TriangulationConfig,
) -> Result<Triangulation> {
    if views.len() < 2 || views.len() != cameras.len() {
        return Err(Error::invalid("triangulation needs at least two views, one camera each"));
    }
    let (t_n, j_n) = (views[0].frames(), views[0].joints());
    for (v, c) in views.iter().zip(cameras) {
        if v.frames() != t_n || v.joints() != j_n {
            return Err(Error::shape("views disagree on frames or joints"));
        }
        c.require_frames(t_n)?;
    }
    let mut coords = Vec::with_capacity(t_n * j_n);
    let mut flagged = Vec::with_capacity(t_n * j_n);
    let mut residual_px = Vec::with_capacity(t_n * j_n);
    for t in 0..t_n {
        for j in 0..j_n {
            let obs: Vec<Observation> = views
                .iter()
                .zip(cameras)
                .filter(|(v, _)| v.is_visible(t, j))
                .map(|(v, c)| Observation {
                    pixel: v.get(t, j),
                    extrinsic: c.extrinsics[t],
                    intrinsics: c.intrinsics,
                })
                .collect();
            match triangulate_point(&obs, cfg) {
                PointEstimate::Solved { point, rms_px } => {
                    coords.push([point.x, point.y, point.z]);
                    flagged.push(false);
                    residual_px.push(rms_px);
                }
                PointEstimate::UnderConstrained(_) => {
                    coords.push([0.0; 3]);
                    flagged.push(true);
                    residual_px.push(0.0);
                }
            }
        }
    }
    Ok(Triangulation {
        points: Seq3D::new(t_n, j_n, coords)?,
        flagged,
        residual_px,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camgeo::project_sequence;
    use crate::camsim::look_at_rotation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ring(n: usize, t_n: usize) -> Vec<CameraTrajectory> {
        (0..n)
            .map(|i| {
                let a = i as f64 * 2.0 * std::f64::consts::PI / n as f64 + 0.3;
                let eye = Vector3::new(4.0 * a.cos(), 1.0, 4.0 * a.sin());
                let r = look_at_rotation(&eye, &Vector3::zeros()).unwrap();
                CameraTrajectory::static_camera(
                    CameraExtrinsic::new(r, -(r * eye)).unwrap(),
                    CameraIntrinsics::centered_f1000(1000.0, 1000.0),
                    t_n,
                )
            })
            .collect()
    }

    fn motion(rng: &mut ChaCha8Rng, t_n: usize, j_n: usize) -> Seq3D {
        let c = (0..t_n * j_n)
            .map(|_| [rng.random_range(-0.8..0.8), rng.random_range(-1.0..1.0), rng.random_range(-0.8..0.8)])
            .collect();
        Seq3D::new(t_n, j_n, c).unwrap()
    }

    #[test]
    fn exact_four_views() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let gt = motion(&mut rng, 5, 17);
        let cams = ring(4, 5);
        let views: Vec<_> = cams.iter().map(|c| project_sequence(&gt, c).unwrap()).collect();
        let tri = triangulate_sequence(&views, &cams, &TriangulationConfig::default()).unwrap();
        assert_eq!(tri.flagged_count(), 0);
        for (a, b) in tri.points.coords().iter().zip(gt.coords()) {
            let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
            assert!(d < 1e-9, "{d}");
        }
        assert!(tri.residual_px.iter().all(|r| *r < 1e-9));
    }

    #[test]
    fn noise_response() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gt = motion(&mut rng, 10, 17);
        let cams = ring(4, 10);
        let clean: Vec<_> = cams.iter().map(|c| project_sequence(&gt, c).unwrap()).collect();
        let mut errs = Vec::new();
        let mut resid = Vec::new();
        for sigma in [0.25, 0.5, 1.0] {
            let mut nrng = ChaCha8Rng::seed_from_u64(9);
            let views: Vec<_> = clean
                .iter()
                .map(|v| {
                    let mut v = v.clone();
                    let c = v
                        .coords()
                        .iter()
                        .map(|p| {
                            let n: [f64; 2] = [nrng.sample(rand_distr::StandardNormal), nrng.sample(rand_distr::StandardNormal)];
                            [p[0] + sigma * n[0], p[1] + sigma * n[1]]
                        })
                        .collect();
                    v.set_coords(c).unwrap();
                    v
                })
                .collect();
            let tri = triangulate_sequence(&views, &cams, &TriangulationConfig::default()).unwrap();
            let e: f64 = tri
                .points
                .coords()
                .iter()
                .zip(gt.coords())
                .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt())
                .sum::<f64>()
                / gt.coords().len() as f64;
            errs.push(e);
            resid.push(tri.mean_residual_px());
        }
        // same noise pattern scaled: error and residual scale linearly
        for i in 1..3 {
            let ratio = errs[i] / errs[i - 1];
            assert!((ratio - 2.0).abs() < 0.05, "error ratio {ratio}");
            let rr = resid[i] / resid[i - 1];
            assert!((rr - 2.0).abs() < 0.05, "residual ratio {rr}");
        }
        // 8 coordinates, 3 dof, 4 views: per-view RMS about sigma * sqrt(5/4)
        assert!(resid[2] > 0.9 && resid[2] < 1.2, "{}", resid[2]);
    }

    #[test]
    fn degenerate_geometry_flagged() {
        // two cameras on a line through the point: zero triangulation angle
        let intr = CameraIntrinsics::centered_f1000(1000.0, 1000.0);
        let a = CameraExtrinsic::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 5.0)).unwrap();
        let b = CameraExtrinsic::new(Matrix3::identity(), Vector3::new(0.001, 0.0, 5.0)).unwrap();
        let gt = Seq3D::new(1, 2, vec![[0.0, 0.0, 0.0], [0.1, 0.0, 0.0]]).unwrap();
        let cams = vec![CameraTrajectory::static_camera(a, intr, 1), CameraTrajectory::static_camera(b, intr, 1)];
        let views: Vec<_> = cams.iter().map(|c| project_sequence(&gt, c).unwrap()).collect();
        let tri = triangulate_sequence(&views, &cams, &TriangulationConfig::default()).unwrap();
        assert_eq!(tri.flagged, vec![true, true]);
        assert_eq!(tri.points.coords()[0], [0.0; 3]);
        // only one visible view
        let mut one = views.clone();
        one[1].set_visibility(vec![false, false]).unwrap();
        let tri = triangulate_sequence(&one, &cams, &TriangulationConfig::default()).unwrap();
        assert_eq!(tri.flagged, vec![true, true]);
        assert!(triangulate_sequence(&views[..1], &cams[..1], &TriangulationConfig::default()).is_err());
    }
}
