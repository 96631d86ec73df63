use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Similarity transform `y = s R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * x) + self.translation
    }
}

/// Least-squares alignment of `source` onto `target` (Umeyama). With
/// `with_scale = false` this is the Kabsch solution. The rotation always
/// has determinant +1.
pub fn umeyama(source: &[Vector3<f64>], target: &[Vector3<f64>], with_scale: bool) -> Result<Similarity> {
    let n = source.len();
    if n != target.len() {
        return Err(Error::shape("point sets differ in size"));
    }
    if n < 3 {
        return Err(Error::Degenerate(format!("alignment needs at least 3 points, got {n}")));
    }
    let inv = 1.0 / n as f64;
    let mx = source.iter().sum::<Vector3<f64>>() * inv;
    let my = target.iter().sum::<Vector3<f64>>() * inv;
    let mut cov = Matrix3::zeros();
    let mut src_cov = Matrix3::zeros();
    let mut var_x = 0.0;
    for (x, y) in source.iter().zip(target) {
        let dx = x - mx;
        cov += (y - my) * dx.transpose();
        src_cov += dx * dx.transpose();
        var_x += dx.norm_squared();
    }
    cov *= inv;
    var_x *= inv;
    let sv = src_cov.symmetric_eigenvalues();
    let mut ev: Vec<f64> = sv.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[0] > 0.0) || ev[1] <= 1e-12 * ev[0] {
        return Err(Error::Degenerate("source points are collinear or coincident".into()));
    }
    let svd = cov.svd(true, true);
    let u = svd.u.ok_or_else(|| Error::Numerical("SVD failed".into()))?;
    let v_t = svd.v_t.ok_or_else(|| Error::Numerical("SVD failed".into()))?;
    let d = (u.determinant() * v_t.determinant()).signum();
    let s_diag = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, if d < 0.0 { -1.0 } else { 1.0 }));
    let rotation = u * s_diag * v_t;
    let scale = if with_scale {
        let sv = svd.singular_values;
        let tr = sv[0] + sv[1] + if d < 0.0 { -sv[2] } else { sv[2] };
        tr / var_x
    } else {
        1.0
    };
    let translation = my - scale * (rotation * mx);
    Ok(Similarity {
        scale,
        rotation,
        translation,
    })
}

/// Rigid (rotation + translation) alignment.
pub fn kabsch(source: &[Vector3<f64>], target: &[Vector3<f64>]) -> Result<(Matrix3<f64>, Vector3<f64>)> {
    let s = umeyama(source, target, false)?;
    Ok((s.rotation, s.translation))
}

/// Gram-Schmidt map from two 3-vectors to a rotation with columns
/// `[b1 b2 b1 x b2]`.
pub fn rot6d_to_matrix(r: &[f64; 6]) -> Result<Matrix3<f64>> {
    Ok(Rot6dJacobian::new(r)?.matrix())
}

/// First two columns of `m`.
pub fn matrix_to_rot6d(m: &Matrix3<f64>) -> [f64; 6] {
    [m[(0, 0)], m[(1, 0)], m[(2, 0)], m[(0, 1)], m[(1, 1)], m[(2, 1)]]
}

/// Intermediate values of the Gram-Schmidt map, kept for the backward pass.
#[derive(Debug, Clone, Copy)]
pub struct Rot6dJacobian {
    a2: Vector3<f64>,
    n1: f64,
    nu: f64,
    b1: Vector3<f64>,
    b2: Vector3<f64>,
}

impl Rot6dJacobian {
    pub fn new(r: &[f64; 6]) -> Result<Self> {
        let a1 = Vector3::new(r[0], r[1], r[2]);
        let a2 = Vector3::new(r[3], r[4], r[5]);
        let n1 = a1.norm();
        if !(n1 > 1e-12) || !n1.is_finite() {
            return Err(Error::Degenerate("6D rotation has a vanishing first vector".into()));
        }
        let b1 = a1 / n1;
        let u = a2 - b1 * b1.dot(&a2);
        let nu = u.norm();
        if !(nu > 1e-12 * a2.norm().max(1.0)) || !nu.is_finite() {
            return Err(Error::Degenerate("6D rotation vectors are parallel".into()));
        }
        Ok(Self {
            a2,
            n1,
            nu,
            b1,
            b2: u / nu,
        })
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_columns(&[self.b1, self.b2, self.b1.cross(&self.b2)])
    }

    /// Pulls a gradient w.r.t. the matrix back to the six parameters.
    pub fn backward(&self, g: &Matrix3<f64>) -> [f64; 6] {
        let (b1, b2) = (self.b1, self.b2);
        let g3: Vector3<f64> = g.column(2).into();
        let mut gb1: Vector3<f64> = g.column(0).into_owned() + b2.cross(&g3);
        let gb2: Vector3<f64> = g.column(1).into_owned() + g3.cross(&b1);
        let gu = (gb2 - b2 * b2.dot(&gb2)) / self.nu;
        let gub1 = gu.dot(&b1);
        let ga2 = gu - b1 * gub1;
        gb1 -= self.a2 * gub1 + gu * b1.dot(&self.a2);
        let ga1 = (gb1 - b1 * b1.dot(&gb1)) / self.n1;
        [ga1.x, ga1.y, ga1.z, ga2.x, ga2.y, ga2.z]
    }
}

/// Geodesic angle between two rotations (radians).
pub fn geodesic_angle(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let c = ((a.transpose() * b).trace() - 1.0) * 0.5;
    c.clamp(-1.0, 1.0).acos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, UnitQuaternion};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ));
        q.to_rotation_matrix().into_inner()
    }

    #[test]
    fn identity_and_reflection() {
        let p: Vec<Vector3<f64>> = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 2.0, 0.0),
            Vector3::new(0.0, 0.0, 3.0),
        ];
        let s = umeyama(&p, &p, true).unwrap();
        assert!((s.rotation - Matrix3::identity()).norm() < 1e-12);
        assert!(s.translation.norm() < 1e-12 && (s.scale - 1.0).abs() < 1e-12);
        let mirrored: Vec<_> = p.iter().map(|x| Vector3::new(-x.x, x.y, x.z)).collect();
        let (r, _) = kabsch(&p, &mirrored).unwrap();
        assert!((r.determinant() - 1.0).abs() < 1e-12);
        let line: Vec<_> = (0..5).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(umeyama(&line, &line, true), Err(Error::Degenerate(_))));
        assert!(umeyama(&p[..2], &p[..2], true).is_err());
    }

    #[test]
    fn recovers_random_similarities() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let n = rng.random_range(3..20);
            let src: Vec<Vector3<f64>> = (0..n)
                .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            let r = random_rotation(&mut rng);
            let s = rng.random_range(0.2..5.0);
            let t = Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let dst: Vec<_> = src.iter().map(|x| s * (r * x) + t).collect();
            let est = umeyama(&src, &dst, true).unwrap();
            worst = worst
                .max((est.rotation - r).abs().max())
                .max((est.scale - s).abs())
                .max((est.translation - t).abs().max());
        }
        assert!(worst < 1e-9, "{worst}");
    }

    #[test]
    fn rot6d_identity_and_roundtrip() {
        let m = rot6d_to_matrix(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(m, Matrix3::identity());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let r = random_rotation(&mut rng);
            let back = rot6d_to_matrix(&matrix_to_rot6d(&r)).unwrap();
            assert!((back - r).abs().max() < 1e-9);
            let raw: [f64; 6] = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
            let m = rot6d_to_matrix(&raw).unwrap();
            assert!((m.transpose() * m - Matrix3::identity()).abs().max() < 1e-9);
            assert!((m.determinant() - 1.0).abs() < 1e-9);
        }
        assert!(rot6d_to_matrix(&[0.0, 0.0, 0.0, 0.0, 1.0, 0.0]).is_err());
        assert!(rot6d_to_matrix(&[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn rot6d_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let r: [f64; 6] = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
            let w = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let f = |r: &[f64; 6]| rot6d_to_matrix(r).unwrap().component_mul(&w).sum();
            let g = Rot6dJacobian::new(&r).unwrap().backward(&w);
            for i in 0..6 {
                let mut rp = r;
                rp[i] += 1e-6;
                let mut rm = r;
                rm[i] -= 1e-6;
                let fd = (f(&rp) - f(&rm)) / 2e-6;
                assert!((fd - g[i]).abs() < 1e-7 * fd.abs().max(1.0), "{i}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn geodesic() {
        let a = Rotation3::from_axis_angle(&Vector3::z_axis(), 0.3).into_inner();
        let b = Rotation3::from_axis_angle(&Vector3::z_axis(), -0.2).into_inner();
        assert!((geodesic_angle(&a, &b) - 0.5).abs() < 1e-12);
    }
}
