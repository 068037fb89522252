//! Standard-Bayes reference posteriors and error metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::GaussianPrior;

/// Conjugate posterior `(mean, variance)` for a Gaussian location with known
/// likelihood sd and a N(μ0, σ0²) prior. Empty data returns the prior.
pub fn conjugate_gaussian_posterior(prior_mean: f64, prior_var: f64, data: &[f64], likelihood_sd: f64) -> Result<(f64, f64)> {
    if !(prior_var > 0.0) || !(likelihood_sd > 0.0) {
        return Err(Error::invalid("variances must be positive"));
    }
    let lik_prec = 1.0 / (likelihood_sd * likelihood_sd);
    let precision = 1.0 / prior_var + data.len() as f64 * lik_prec;
    let sum: f64 = data.iter().sum();
    let mean = (prior_mean / prior_var + sum * lik_prec) / precision;
    Ok((mean, 1.0 / precision))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            min: -5.0,
            max: 12.0,
            points: 3401,
        }
    }
}

impl GridSpec {
    pub fn nodes(&self) -> Result<Vec<f64>> {
        if self.points < 2 || !(self.max > self.min) {
            return Err(Error::invalid("grid needs max > min and at least 2 points"));
        }
        let h = (self.max - self.min) / (self.points - 1) as f64;
        Ok((0..self.points).map(|i| self.min + i as f64 * h).collect())
    }

    pub fn spacing(&self) -> f64 {
        (self.max - self.min) / (self.points - 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPosterior {
    pub grid: Vec<f64>,
    pub log_weights: Vec<f64>,
    pub weights: Vec<f64>,
    pub normalized: bool,
    /// Set when no grid point is consistent with every observation and the
    /// likelihood floor shaped the posterior.
    pub degenerate: bool,
}

impl GridPosterior {
    /// Normalises `exp(log_weights)` over the grid.
    pub fn from_log_weights(grid: Vec<f64>, log_weights: Vec<f64>) -> Result<Self> {
        if grid.len() != log_weights.len() || grid.is_empty() {
            return Err(Error::invalid("grid and log-weights must be non-empty and equal length"));
        }
        let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::DegenerateData("posterior has no finite log-weight".into()));
        }
        let raw: Vec<f64> = log_weights.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = raw.iter().sum();
        let weights = raw.iter().map(|w| w / total).collect();
        Ok(Self {
            grid,
            log_weights,
            weights,
            normalized: true,
            degenerate: false,
        })
    }

    pub fn mean(&self) -> f64 {
        self.grid.iter().zip(&self.weights).map(|(t, w)| t * w).sum()
    }

    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        self.grid
            .iter()
            .zip(&self.weights)
            .map(|(t, w)| w * (t - mean) * (t - mean))
            .sum()
    }
}

fn log_normal_density(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((x - mean) * (x - mean) / var + (2.0 * std::f64::consts::PI * var).ln())
}

fn prior_1d(prior: &GaussianPrior) -> Result<(f64, f64)> {
    use crate::sampler::Prior;
    if prior.dim() != 1 {
        return Err(Error::invalid("grid posteriors need a one-dimensional prior"));
    }
    Ok((prior.mean()[0], prior.variances()[0]))
}

/// Standard-Bayes posterior for `y ~ U[θ - w, θ + w]` on a grid.
///
/// The exact likelihood vanishes whenever any datum falls outside the support,
/// so each datum's likelihood is floored at `floor`. The `degenerate` flag is
/// set when no grid point covers every datum.
pub fn grid_posterior_uniform(
    data: &[f64],
    prior: &GaussianPrior,
    half_width: f64,
    grid: &GridSpec,
    floor: f64,
) -> Result<GridPosterior> {
    if !(half_width > 0.0) || !(floor > 0.0) {
        return Err(Error::invalid("half width and likelihood floor must be positive"));
    }
    let (mu, var) = prior_1d(prior)?;
    let nodes = grid.nodes()?;
    let inside = (1.0 / (2.0 * half_width)).ln();
    let outside = floor.ln();
    let mut any_consistent = false;
    let log_weights = nodes
        .iter()
        .map(|&theta| {
            let misses = data.iter().filter(|y| (*y - theta).abs() > half_width).count();
            any_consistent |= misses == 0;
            let hits = data.len() - misses;
            log_normal_density(theta, mu, var) + hits as f64 * inside + misses as f64 * outside
        })
        .collect();
    let mut post = GridPosterior::from_log_weights(nodes, log_weights)?;
    post.degenerate = !any_consistent;
    Ok(post)
}

/// Standard-Bayes posterior for `y ~ N(θ, sd²)` on a grid.
pub fn grid_posterior_gaussian(data: &[f64], prior: &GaussianPrior, sd: f64, grid: &GridSpec) -> Result<GridPosterior> {
    let (mu, var) = prior_1d(prior)?;
    let nodes = grid.nodes()?;
    let log_weights = nodes
        .iter()
        .map(|&theta| {
            log_normal_density(theta, mu, var)
                + data.iter().map(|y| log_normal_density(*y, theta, sd * sd)).sum::<f64>()
        })
        .collect();
    GridPosterior::from_log_weights(nodes, log_weights)
}

/// Componentwise root mean square error of the estimates about `truth`.
pub fn rmse<E: AsRef<[f64]>>(estimates: &[E], truth: &[f64]) -> Result<Vec<f64>> {
    if estimates.is_empty() {
        return Err(Error::invalid("rmse needs at least one estimate"));
    }
    let mut acc = vec![0.0; truth.len()];
    for e in estimates {
        let e = e.as_ref();
        if e.len() != truth.len() {
            return Err(Error::invalid(format!(
                "estimate has dimension {}, truth has {}",
                e.len(),
                truth.len()
            )));
        }
        for ((a, x), t) in acc.iter_mut().zip(e).zip(truth) {
            *a += (x - t) * (x - t);
        }
    }
    let n = estimates.len() as f64;
    Ok(acc.into_iter().map(|s| (s / n).sqrt()).collect())
}
