use rand::Rng;

use super::schedule::{posterior_coefficients, q_sample, standard_normal, NoiseSchedule};
use super::{Conditioning, Denoiser, MultiViewDenoiser};
use crate::error::{Error, Result};

/// Ancestral DDPM sampling from `X_N ~ N(0, I)` using the posterior mean
/// implied by each `x0` prediction. The final step returns the prediction
/// itself.
pub fn reverse_sample<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    denoiser: &D,
    cond: &Conditioning,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let len = cond.sample_len();
    let mut x = standard_normal(rng, len);
    for n in (1..=sched.steps()).rev() {
        let x0 = denoiser.predict_x0(&x, n, cond)?;
        if x0.len() != len {
            return Err(Error::shape("denoiser changed the sample length"));
        }
        if n == 1 {
            return Ok(x0);
        }
        let (c0, cn, var) = posterior_coefficients(n, sched);
        let sd = var.sqrt();
        let z = standard_normal(rng, len);
        for i in 0..len {
            x[i] = c0 * x0[i] + cn * x[i] + sd * z[i];
        }
    }
    unreachable!("schedules have at least one step")
}

/// Samples views `1..V` given a clean view 0. At every step view 0 is
/// replaced by a fresh forward-noised copy of `reference`, so the other
/// views are drawn conditionally on it. View 0 of the result is
/// `reference` unchanged.
pub fn reverse_sample_multiview<D: MultiViewDenoiser + ?Sized, R: Rng + ?Sized>(
    denoiser: &D,
    reference: &[f64],
    conds: &[Conditioning],
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if conds.is_empty() {
        return Err(Error::shape("need at least one view"));
    }
    let len = conds[0].sample_len();
    if reference.len() != len || conds.iter().any(|c| c.sample_len() != len) {
        return Err(Error::shape("views must share one sample shape"));
    }
    let mut xs: Vec<Vec<f64>> = conds.iter().map(|_| standard_normal(rng, len)).collect();
    for n in (1..=sched.steps()).rev() {
        let eps = standard_normal(rng, len);
        xs[0] = q_sample(reference, n, &eps, sched)?;
        let x0s = denoiser.predict_x0_views(&xs, n, conds)?;
        if n == 1 {
            let mut out = x0s;
            out[0] = reference.to_vec();
            return Ok(out);
        }
        let (c0, cn, var) = posterior_coefficients(n, sched);
        let sd = var.sqrt();
        for (x, x0) in xs.iter_mut().zip(&x0s).skip(1) {
            let z = standard_normal(rng, len);
            for i in 0..len {
                x[i] = c0 * x0[i] + cn * x[i] + sd * z[i];
            }
        }
    }
    unreachable!("schedules have at least one step")
}
