use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Linear DDPM variance schedule. Steps are 1-based: `alpha_bar(n)` is the
/// cumulative product of `1 - beta_m` for `m <= n`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    beta_start: f64,
    beta_end: f64,
}

impl NoiseSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 1 {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::invalid(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
            beta_start,
            beta_end,
        })
    }

    /// Default desk-scale schedule: 1000 steps, beta 1e-4 to 0.02.
    pub fn default_linear() -> Self {
        Self::linear(1000, 1e-4, 0.02).expect("valid default schedule")
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta_range(&self) -> (f64, f64) {
        (self.beta_start, self.beta_end)
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    #[inline]
    pub fn beta(&self, n: usize) -> f64 {
        self.betas[n - 1]
    }

    #[inline]
    pub fn alpha(&self, n: usize) -> f64 {
        self.alphas[n - 1]
    }

    /// `alpha_bar(0) = 1` by convention.
    #[inline]
    pub fn alpha_bar(&self, n: usize) -> f64 {
        if n == 0 {
            1.0
        } else {
            self.alpha_bars[n - 1]
        }
    }

    pub fn check_step(&self, n: usize) -> Result<()> {
        if n < 1 || n > self.steps() {
            return Err(Error::invalid(format!("diffusion step {n} outside 1..={}", self.steps())));
        }
        Ok(())
    }
}

/// Closed-form marginal `x_n = sqrt(ab) x0 + sqrt(1 - ab) eps`.
pub fn q_sample(x0: &[f64], n: usize, eps: &[f64], sched: &NoiseSchedule) -> Result<Vec<f64>> {
    sched.check_step(n)?;
    if x0.len() != eps.len() {
        return Err(Error::shape("noise and sample differ in length"));
    }
    let ab = sched.alpha_bar(n);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
}

/// One forward transition `q(x_n | x_{n-1})`.
pub fn q_step(x_prev: &[f64], n: usize, eps: &[f64], sched: &NoiseSchedule) -> Result<Vec<f64>> {
    sched.check_step(n)?;
    if x_prev.len() != eps.len() {
        return Err(Error::shape("noise and sample differ in length"));
    }
    let beta = sched.beta(n);
    let (a, b) = ((1.0 - beta).sqrt(), beta.sqrt());
    Ok(x_prev.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
}

/// Noise implied by an `x0` estimate.
pub fn x0_to_eps(xn: &[f64], x0_hat: &[f64], n: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
    let ab = sched.alpha_bar(n);
    if ab >= 1.0 {
        return Err(Error::Numerical("alpha_bar = 1 leaves the noise undetermined".into()));
    }
    if xn.len() != x0_hat.len() {
        return Err(Error::shape("x_n and x0 estimate differ in length"));
    }
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(xn.iter().zip(x0_hat).map(|(x, x0)| (x - a * x0) / b).collect())
}

/// Coefficients of the DDPM posterior `q(x_{n-1} | x_n, x0)`:
/// `mean = c_x0 * x0 + c_xn * x_n`, plus its variance.
pub fn posterior_coefficients(n: usize, sched: &NoiseSchedule) -> (f64, f64, f64) {
    let ab = sched.alpha_bar(n);
    let ab_prev = sched.alpha_bar(n - 1);
    let beta = sched.beta(n);
    let c_x0 = ab_prev.sqrt() * beta / (1.0 - ab);
    let c_xn = sched.alpha(n).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
    let var = beta * (1.0 - ab_prev) / (1.0 - ab);
    (c_x0, c_xn, var)
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}
