use super::{Conditioning, Denoiser, NoiseSchedule};
use crate::error::{Error, Result};

/// Posterior-mean denoiser for independent Gaussian data
/// `x0 ~ N(mean, var)`; the exact minimizer of the squared `x0` risk.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrior {
    pub mean: Vec<f64>,
    pub var: f64,
    pub schedule: NoiseSchedule,
}

impl GaussianPrior {
    pub fn new(mean: Vec<f64>, var: f64, schedule: NoiseSchedule) -> Result<Self> {
        if !(var >= 0.0) {
            return Err(Error::invalid("prior variance must be non-negative"));
        }
        Ok(Self {
            mean,
            var,
            schedule,
        })
    }

    /// `((1 - ab) mu + var sqrt(ab) x_n) / ((1 - ab) + ab var)`, elementwise.
    pub fn posterior_mean(xn: &[f64], mean: &[f64], var: f64, alpha_bar: f64) -> Vec<f64> {
        let denom = (1.0 - alpha_bar) + alpha_bar * var;
        if denom <= 0.0 {
            return xn.to_vec();
        }
        let sa = alpha_bar.sqrt();
        xn.iter()
            .zip(mean.iter().cycle())
            .map(|(x, m)| ((1.0 - alpha_bar) * m + var * sa * x) / denom)
            .collect()
    }
}

impl Denoiser for GaussianPrior {
    fn predict_x0(&self, xn: &[f64], n: usize, _cond: &Conditioning) -> Result<Vec<f64>> {
        self.schedule.check_step(n)?;
        if self.mean.is_empty() || (xn.len() % self.mean.len() != 0) {
            return Err(Error::shape("prior mean length does not divide the sample length"));
        }
        Ok(Self::posterior_mean(xn, &self.mean, self.var, self.schedule.alpha_bar(n)))
    }
}

/// Always returns the same clean sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedDenoiser(pub Vec<f64>);

impl Denoiser for FixedDenoiser {
    fn predict_x0(&self, xn: &[f64], _n: usize, _cond: &Conditioning) -> Result<Vec<f64>> {
        if xn.len() != self.0.len() {
            return Err(Error::shape("fixed denoiser length mismatch"));
        }
        Ok(self.0.clone())
    }
}

/// Dispatches to one denoiser per view index (`Conditioning::view`).
pub struct PerViewDenoiser<D> {
    pub views: Vec<D>,
}

impl<D: Denoiser> Denoiser for PerViewDenoiser<D> {
    fn predict_x0(&self, xn: &[f64], n: usize, cond: &Conditioning) -> Result<Vec<f64>> {
        let d = self
            .views
            .get(cond.view)
            .ok_or_else(|| Error::invalid(format!("no prior for view {}", cond.view)))?;
        d.predict_x0(xn, n, cond)
    }
}
