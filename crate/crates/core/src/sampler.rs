//! Ensemble transform Langevin samplers for the MMD-Bayes posterior
//! `π(θ | Y) ∝ π_prior(θ) exp(-β MMD²(P_θ, P_data))`.
//!
//! Each particle is advanced by one Euler–Maruyama step of
//!
//! ```text
//! dθ = [ C ∇log π_prior(θ) - β g(θ) + (D+1)/M (θ - θ̄) ] ds + √2 C^{1/2} dW
//! ```
//!
//! where `C` and `C^{1/2}` are the ensemble covariance and its generalized
//! square root. In the gradient-free sampler `g` is the cross-covariance
//! contraction of the kernel gradients, which equals `C ∇MMD²` exactly when
//! the model is linear in θ. The gradient-based sampler uses `C ∇MMD²` with
//! the model Jacobian instead.
//!
//! All ensemble statistics are taken from the pre-step ensemble, and the J
//! latent draws of a step are shared by every particle.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{symmetric_sqrt, EnsembleStats, OutputBatch, ParticleEnsemble};
use crate::error::{Error, Result};
use crate::kernel::{add_kernel_gradient, mmd2_objective, KernelSpec, SampleBatch};
use crate::models::GenerativeModel;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentPolicy {
    /// Fresh latent draws every step, shared across particles within the step.
    ResampleEachStep,
    /// The step-0 draws are reused for the whole chain.
    Frozen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SqrtKind {
    /// D × M deviation factor with M-dimensional Brownian increments.
    Generalized,
    /// D × D eigen square root with D-dimensional increments.
    Symmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftMethod {
    GradientFree,
    ExactGradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// M
    pub particles: usize,
    /// J
    pub simulations: usize,
    /// Δs
    pub step_size: f64,
    pub beta: f64,
    pub n_steps: usize,
    pub seed: u64,
    pub latent_policy: LatentPolicy,
    /// Ridge λ added to C in the prior drift.
    pub jitter: f64,
    pub burn_in: usize,
    pub method: DriftMethod,
    pub sqrt: SqrtKind,
    /// Keep every k-th ensemble in the trajectory; 0 keeps none.
    pub record_every: usize,
    /// Report moments pooled over all steps after burn-in instead of the final ensemble.
    pub trajectory_average: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            particles: 10,
            simulations: 20,
            step_size: 1e-3,
            beta: 1.0,
            n_steps: 100,
            seed: 0,
            latent_policy: LatentPolicy::ResampleEachStep,
            jitter: 0.0,
            burn_in: 0,
            method: DriftMethod::GradientFree,
            sqrt: SqrtKind::Generalized,
            record_every: 0,
            trajectory_average: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles < 2 {
            return Err(Error::invalid("need at least 2 particles"));
        }
        if self.simulations < 2 {
            return Err(Error::invalid("need at least 2 simulations per particle"));
        }
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid("step size must be finite and non-negative"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid("beta must be finite and non-negative"));
        }
        if !(self.jitter >= 0.0) {
            return Err(Error::invalid("jitter must be non-negative"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Priors
// ---------------------------------------------------------------------------

pub trait Prior: Sync {
    fn dim(&self) -> usize;
    fn mean(&self) -> DVector<f64>;
    /// ∇_θ log π_prior(θ)
    fn grad_log_density(&self, theta: &DVector<f64>) -> DVector<f64>;
    fn sample(&self, rng: &mut dyn RngCore) -> DVector<f64>;
}

/// Gaussian prior with diagonal covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrior {
    mean: Vec<f64>,
    variances: Vec<f64>,
}

impl GaussianPrior {
    pub fn new(mean: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if mean.is_empty() || mean.len() != variances.len() {
            return Err(Error::invalid("prior mean and variances must have equal, positive length"));
        }
        if variances.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("prior variances must be positive"));
        }
        Ok(Self { mean, variances })
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }
}

impl Prior for GaussianPrior {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn mean(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.mean)
    }

    fn grad_log_density(&self, theta: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.mean.len(),
            theta
                .iter()
                .zip(&self.mean)
                .zip(&self.variances)
                .map(|((t, m), v)| -(t - m) / v),
        )
    }

    fn sample(&self, rng: &mut dyn RngCore) -> DVector<f64> {
        DVector::from_iterator(
            self.mean.len(),
            self.mean
                .iter()
                .zip(&self.variances)
                .map(|(m, v)| Normal::new(*m, v.sqrt()).expect("validated").sample(rng)),
        )
    }
}

/// A prior expressed in coordinates θ̃ with θ = A θ̃ + b.
pub struct AffinePrior<P> {
    inner: P,
    a: DMatrix<f64>,
    b: DVector<f64>,
    a_inv: DMatrix<f64>,
}

impl<P: Prior> AffinePrior<P> {
    pub fn new(inner: P, a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let a_inv = a
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::SingularMatrix("affine map is not invertible".into()))?;
        Ok(Self { inner, a, b, a_inv })
    }
}

impl<P: Prior> Prior for AffinePrior<P> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn mean(&self) -> DVector<f64> {
        &self.a_inv * (self.inner.mean() - &self.b)
    }

    fn grad_log_density(&self, theta: &DVector<f64>) -> DVector<f64> {
        let original = &self.a * theta + &self.b;
        self.a.transpose() * self.inner.grad_log_density(&original)
    }

    fn sample(&self, rng: &mut dyn RngCore) -> DVector<f64> {
        &self.a_inv * (self.inner.sample(rng) - &self.b)
    }
}

// ---------------------------------------------------------------------------
// Problem definition and per-step randomness
// ---------------------------------------------------------------------------

/// Everything that defines the target posterior.
#[derive(Clone, Copy)]
pub struct Target<'a> {
    pub model: &'a dyn GenerativeModel,
    pub data: &'a SampleBatch,
    pub prior: &'a dyn Prior,
    pub kernel: KernelSpec,
}

impl Target<'_> {
    fn check(&self) -> Result<()> {
        if self.data.dim() != self.model.output_dim() {
            return Err(Error::invalid(format!(
                "data dimension {} does not match model output dimension {}",
                self.data.dim(),
                self.model.output_dim()
            )));
        }
        if self.prior.dim() != self.model.param_dim() {
            return Err(Error::invalid("prior and model parameter dimensions differ"));
        }
        Ok(())
    }
}

/// The random inputs consumed by one sampler step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepNoise {
    /// J latent draws shared across particles.
    pub latents: Vec<Vec<f64>>,
    /// One standard-normal increment per particle (rows); M columns for the
    /// generalized root, D for the symmetric root.
    pub increments: DMatrix<f64>,
}

impl StepNoise {
    /// Draws the noise for `step` from streams derived from `seed`.
    pub fn draw(model: &dyn GenerativeModel, cfg: &SamplerConfig, seed_value: u64, step: usize) -> Self {
        Self {
            latents: draw_latents(model, cfg.simulations, seed_value, step),
            increments: draw_increments(cfg, model.param_dim(), seed_value, step),
        }
    }
}

pub fn draw_latents(model: &dyn GenerativeModel, count: usize, seed_value: u64, step: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|j| {
            let mut rng = seed::stream(seed_value, &[seed::DYNAMICS, step as u64, seed::LATENT, j as u64]);
            model.sample_latent(&mut rng)
        })
        .collect()
}

fn draw_increments(cfg: &SamplerConfig, dim: usize, seed_value: u64, step: usize) -> DMatrix<f64> {
    let width = match cfg.sqrt {
        SqrtKind::Generalized => cfg.particles,
        SqrtKind::Symmetric => dim,
    };
    let mut xi = DMatrix::zeros(cfg.particles, width);
    for m in 0..cfg.particles {
        let mut rng = seed::stream(seed_value, &[seed::DYNAMICS, step as u64, seed::NOISE, m as u64]);
        for c in 0..width {
            xi[(m, c)] = StandardNormal.sample(&mut rng);
        }
    }
    xi
}

// ---------------------------------------------------------------------------
// MMD gradient pieces
// ---------------------------------------------------------------------------

/// Simulates `x^{mj} = G_{θ^m}(u^j)` for every particle, in parallel.
pub fn simulate_outputs(
    model: &dyn GenerativeModel,
    ens: &ParticleEnsemble,
    latents: &[Vec<f64>],
) -> Result<OutputBatch> {
    let n = model.output_dim();
    let per_particle: Vec<Vec<f64>> = (0..ens.len())
        .into_par_iter()
        .map(|m| {
            let theta = ens.particle_vec(m);
            let mut buf = Vec::with_capacity(latents.len() * n);
            for u in latents {
                let x = model.simulate(&theta, u)?;
                if x.len() != n {
                    return Err(Error::invalid(format!(
                        "model returned {} outputs, expected {n}",
                        x.len()
                    )));
                }
                buf.extend_from_slice(&x);
            }
            Ok(buf)
        })
        .collect::<Result<_>>()?;
    OutputBatch::new(ens.len(), latents.len(), n, per_particle.concat())
}

/// For one particle's J outputs (J × N row-major), returns the J output-space
/// vectors
///
/// `v_j = 2/(J(J-1)) Σ_{l≠j} ∇_x k(x_j, x_l) - 2/(JN) Σ_n ∇_x k(x_j, y_n)`,
///
/// so that ∇_θ MMD² = Σ_j (∇_θ x_j)ᵀ v_j.
fn output_space_gradients(outputs: &[f64], n_out: usize, data: &SampleBatch, kernel: &KernelSpec) -> Vec<Vec<f64>> {
    let j_count = outputs.len() / n_out;
    let jj = j_count as f64;
    let w_within = 2.0 / (jj * (jj - 1.0));
    let w_data = 2.0 / (jj * data.rows() as f64);
    let row = |j: usize| &outputs[j * n_out..(j + 1) * n_out];
    (0..j_count)
        .map(|j| {
            let xj = row(j);
            let mut v = vec![0.0; n_out];
            for l in (0..j_count).filter(|&l| l != j) {
                add_kernel_gradient(xj, row(l), kernel, w_within, &mut v);
            }
            for y in data.iter_rows() {
                add_kernel_gradient(xj, y, kernel, -w_data, &mut v);
            }
            v
        })
        .collect()
}

fn check_simulations(j: usize) -> Result<()> {
    if j < 2 {
        return Err(Error::invalid(format!(
            "the U-statistic needs at least 2 simulations, got {j}"
        )));
    }
    Ok(())
}

/// The gradient-free MMD drift, one row per particle (M × D):
///
/// `g^m = Σ_j C^{θx^j} v_j^m` with `v_j^m` the output-space kernel gradients
/// of particle m.
pub fn mmd_drift_g(
    ens: &ParticleEnsemble,
    out: &OutputBatch,
    data: &SampleBatch,
    kernel: &KernelSpec,
    stats: &EnsembleStats,
) -> Result<DMatrix<f64>> {
    check_simulations(out.seeds())?;
    if out.particles() != ens.len() || stats.cross_covariances.len() != out.seeds() {
        return Err(Error::invalid("statistics, outputs and ensemble are inconsistent"));
    }
    if data.dim() != out.out_dim() {
        return Err(Error::invalid("data and output dimensions differ"));
    }
    let d = ens.dim();
    let rows: Vec<DVector<f64>> = (0..ens.len())
        .into_par_iter()
        .map(|m| {
            let v = output_space_gradients(out.particle_outputs(m), out.out_dim(), data, kernel);
            let mut g = DVector::zeros(d);
            for (cc, vj) in stats.cross_covariances.iter().zip(&v) {
                g += cc * DVector::from_column_slice(vj);
            }
            g
        })
        .collect();
    Ok(DMatrix::from_fn(ens.len(), d, |m, i| rows[m][i]))
}

/// ∇_θ of the U-statistic MMD² at θ, with the latent draws and data held fixed.
pub fn grad_mmd2_exact(
    theta: &[f64],
    model: &dyn GenerativeModel,
    latents: &[Vec<f64>],
    data: &SampleBatch,
    kernel: &KernelSpec,
) -> Result<DVector<f64>> {
    if !model.has_jacobian() {
        return Err(Error::Capability(format!(
            "model `{}` does not provide a Jacobian",
            model.name()
        )));
    }
    check_simulations(latents.len())?;
    let n = model.output_dim();
    let mut outputs = Vec::with_capacity(latents.len() * n);
    for u in latents {
        outputs.extend(model.simulate(theta, u)?);
    }
    let v = output_space_gradients(&outputs, n, data, kernel);
    let mut grad = DVector::zeros(theta.len());
    for (u, vj) in latents.iter().zip(&v) {
        let jac = model.jacobian(theta, u)?;
        grad += jac.transpose() * DVector::from_column_slice(vj);
    }
    Ok(grad)
}

/// Frozen-latent U-statistic MMD² between G_θ(u^{1..J}) and the data.
pub fn mmd2_at(
    theta: &[f64],
    model: &dyn GenerativeModel,
    latents: &[Vec<f64>],
    data: &SampleBatch,
    kernel: &KernelSpec,
) -> Result<f64> {
    check_simulations(latents.len())?;
    let rows = latents
        .iter()
        .map(|u| model.simulate(theta, u))
        .collect::<Result<Vec<_>>>()?;
    Ok(mmd2_objective(&SampleBatch::from_rows(&rows)?, data, kernel))
}

// ---------------------------------------------------------------------------
// Steps
// ---------------------------------------------------------------------------

struct StepOutcome {
    ensemble: ParticleEnsemble,
    outputs: Option<OutputBatch>,
}

fn as_divergence(step: usize, err: Error) -> Error {
    match err {
        Error::Divergence { detail, .. } => Error::Divergence {
            step,
            detail: format!("simulator: {detail}"),
        },
        other => other,
    }
}

fn step_inner(
    target: &Target<'_>,
    ens: &ParticleEnsemble,
    cfg: &SamplerConfig,
    noise: &StepNoise,
    step: usize,
    method: DriftMethod,
) -> Result<StepOutcome> {
    cfg.validate()?;
    target.check()?;
    let (m_count, d) = (ens.len(), ens.dim());
    if d != target.model.param_dim() {
        return Err(Error::invalid("ensemble and model dimensions differ"));
    }
    if method == DriftMethod::ExactGradient && !target.model.has_jacobian() {
        return Err(Error::Capability(format!(
            "model `{}` does not provide a Jacobian",
            target.model.name()
        )));
    }
    let width = match cfg.sqrt {
        SqrtKind::Generalized => m_count,
        SqrtKind::Symmetric => d,
    };
    if noise.increments.shape() != (m_count, width) {
        return Err(Error::invalid(format!(
            "expected {m_count}x{width} Brownian increments, got {:?}",
            noise.increments.shape()
        )));
    }

    let mut stats = EnsembleStats::parameters(ens);
    let mut cov = stats.covariance.clone();
    if cfg.jitter > 0.0 {
        cov += DMatrix::identity(d, d) * cfg.jitter;
    }

    let mut outputs = None;
    let mmd_drift = if cfg.beta > 0.0 {
        match method {
            DriftMethod::GradientFree => {
                let out = simulate_outputs(target.model, ens, &noise.latents).map_err(|e| as_divergence(step, e))?;
                stats = EnsembleStats::compute(ens, &out)?;
                let g = mmd_drift_g(ens, &out, target.data, &target.kernel, &stats)?;
                outputs = Some(out);
                g
            }
            DriftMethod::ExactGradient => {
                let grads: Vec<DVector<f64>> = (0..m_count)
                    .into_par_iter()
                    .map(|m| {
                        grad_mmd2_exact(&ens.particle_vec(m), target.model, &noise.latents, target.data, &target.kernel)
                            .map_err(|e| as_divergence(step, e))
                    })
                    .collect::<Result<_>>()?;
                DMatrix::from_fn(m_count, d, |m, i| (&cov * &grads[m])[i])
            }
        }
    } else {
        DMatrix::zeros(m_count, d)
    };

    let diffusion = match cfg.sqrt {
        SqrtKind::Generalized => stats.sqrt.clone(),
        SqrtKind::Symmetric => symmetric_sqrt(&stats.covariance),
    };
    let correction = (d as f64 + 1.0) / m_count as f64;
    let ds = cfg.step_size;
    let noise_scale = (2.0 * ds).sqrt();

    let mut next = ens.matrix().clone();
    for m in 0..m_count {
        let theta = ens.particle(m);
        let prior_drift = &cov * target.prior.grad_log_density(&theta);
        let xi = noise.increments.row(m).transpose();
        let kick = &diffusion * xi;
        for i in 0..d {
            let drift = prior_drift[i] - cfg.beta * mmd_drift[(m, i)] + correction * (theta[i] - stats.mean[i]);
            next[(m, i)] = theta[i] + ds * drift + noise_scale * kick[i];
        }
    }
    if let Some(bad) = next.iter().position(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            step,
            detail: format!("particle {} became non-finite", bad % m_count),
        });
    }
    Ok(StepOutcome {
        ensemble: ParticleEnsemble::new(next)?,
        outputs,
    })
}

/// One Euler–Maruyama step of the gradient-free sampler. Never calls the
/// model's Jacobian.
pub fn gf_etld_step(
    target: &Target<'_>,
    ens: &ParticleEnsemble,
    cfg: &SamplerConfig,
    noise: &StepNoise,
    step: usize,
) -> Result<ParticleEnsemble> {
    step_inner(target, ens, cfg, noise, step, DriftMethod::GradientFree).map(|o| o.ensemble)
}

/// One Euler–Maruyama step using the exact MMD² gradient `C ∇MMD²`.
pub fn gradient_etld_step(
    target: &Target<'_>,
    ens: &ParticleEnsemble,
    cfg: &SamplerConfig,
    noise: &StepNoise,
    step: usize,
) -> Result<ParticleEnsemble> {
    step_inner(target, ens, cfg, noise, step, DriftMethod::ExactGradient).map(|o| o.ensemble)
}

/// Draws M particles i.i.d. from the prior using the run's init stream.
pub fn initial_ensemble(prior: &dyn Prior, particles: usize, seed_value: u64) -> Result<ParticleEnsemble> {
    let mut rng = seed::stream(seed_value, &[seed::INIT]);
    let d = prior.dim();
    let draws: Vec<DVector<f64>> = (0..particles).map(|_| prior.sample(&mut rng)).collect();
    ParticleEnsemble::new(DMatrix::from_fn(particles, d, |m, i| draws[m][i]))
}

/// Open interval constraint on one coordinate of an initial particle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitBound {
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
}

/// Acceptance rules for [`initial_ensemble_screened`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitScreen {
    /// Latent bundles each candidate must simulate without diverging; 0 skips the check.
    pub pilots: usize,
    pub bounds: Vec<InitBound>,
}

impl InitScreen {
    pub fn is_trivial(&self) -> bool {
        self.pilots == 0 && self.bounds.is_empty()
    }

    fn check(&self, dim: usize) -> Result<()> {
        for b in &self.bounds {
            if b.index >= dim {
                return Err(Error::invalid(format!(
                    "init bound index {} out of range for dimension {dim}",
                    b.index
                )));
            }
            if let (Some(l), Some(u)) = (b.lower, b.upper) {
                if !(l < u) {
                    return Err(Error::invalid(format!("init bound on {} is empty", b.index)));
                }
            }
        }
        Ok(())
    }

    fn in_box(&self, theta: &DVector<f64>) -> bool {
        self.bounds.iter().all(|b| {
            let t = theta[b.index];
            b.lower.is_none_or(|l| t > l) && b.upper.is_none_or(|u| t < u)
        })
    }
}

/// Prior draws kept only when they pass `screen`; rejected candidates are
/// replaced by further draws. Gives up after `max_draws` candidates.
/// Returns the ensemble and the number of rejected candidates.
pub fn initial_ensemble_screened(
    prior: &dyn Prior,
    model: &dyn GenerativeModel,
    particles: usize,
    seed_value: u64,
    screen: &InitScreen,
    max_draws: usize,
) -> Result<(ParticleEnsemble, usize)> {
    if model.param_dim() != prior.dim() {
        return Err(Error::invalid("prior and model dimensions differ"));
    }
    let d = prior.dim();
    screen.check(d)?;
    let mut rng = seed::stream(seed_value, &[seed::INIT]);
    let mut accepted: Vec<DVector<f64>> = Vec::with_capacity(particles);
    let mut tried = 0usize;
    while accepted.len() < particles {
        if tried >= max_draws {
            return Err(Error::DegenerateData(format!(
                "only {} of {particles} prior draws passed screening after {max_draws} candidates",
                accepted.len()
            )));
        }
        let theta = prior.sample(&mut rng);
        let candidate = tried as u64;
        tried += 1;
        if !screen.in_box(&theta) {
            continue;
        }
        let stable = (0..screen.pilots as u64)
            .into_par_iter()
            .map(|p| {
                let mut latent_rng = seed::stream(seed_value, &[seed::INIT, seed::LATENT, candidate, p]);
                let u = model.sample_latent(&mut latent_rng);
                match model.simulate(theta.as_slice(), &u) {
                    Ok(y) => Ok(y.iter().all(|v| v.is_finite())),
                    Err(Error::Divergence { .. }) => Ok(false),
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<Vec<bool>>>()?;
        if stable.into_iter().all(|ok| ok) {
            accepted.push(theta);
        }
    }
    let ens = ParticleEnsemble::new(DMatrix::from_fn(particles, d, |m, i| accepted[m][i]))?;
    Ok((ens, tried - particles))
}

#[derive(Debug, Clone)]
pub struct ChainResult {
    pub final_ensemble: ParticleEnsemble,
    /// Ensembles at steps `0, k, 2k, ...` when `record_every = k > 0`.
    pub trajectory: Vec<ParticleEnsemble>,
    pub posterior_mean: DVector<f64>,
    pub posterior_covariance: DMatrix<f64>,
    /// Mean over particles of the per-particle MMD² estimate at each step.
    /// Empty when β = 0 (nothing is simulated).
    pub mmd2_trace: Vec<f64>,
}

fn mean_particle_mmd2(out: &OutputBatch, data: &SampleBatch, kernel: &KernelSpec) -> Result<f64> {
    let vals: Vec<f64> = (0..out.particles())
        .into_par_iter()
        .map(|m| {
            let batch = SampleBatch::new(out.seeds(), out.out_dim(), out.particle_outputs(m).to_vec())?;
            Ok(mmd2_objective(&batch, data, kernel))
        })
        .collect::<Result<_>>()?;
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

pub fn run_chain(target: &Target<'_>, cfg: &SamplerConfig) -> Result<ChainResult> {
    let ens = initial_ensemble(target.prior, cfg.particles, cfg.seed)?;
    run_chain_from(target, cfg, ens)
}

/// As [`run_chain`], starting from a supplied ensemble of `cfg.particles`
/// particles instead of a prior draw.
pub fn run_chain_from(target: &Target<'_>, cfg: &SamplerConfig, initial: ParticleEnsemble) -> Result<ChainResult> {
    cfg.validate()?;
    target.check()?;
    if initial.len() != cfg.particles || initial.dim() != target.prior.dim() {
        return Err(Error::invalid(format!(
            "initial ensemble is {}x{}, expected {}x{}",
            initial.len(),
            initial.dim(),
            cfg.particles,
            target.prior.dim()
        )));
    }
    let mut ens = initial;
    let frozen = match cfg.latent_policy {
        LatentPolicy::Frozen => Some(draw_latents(target.model, cfg.simulations, cfg.seed, 0)),
        LatentPolicy::ResampleEachStep => None,
    };

    let d = ens.dim();
    let mut trajectory = Vec::new();
    let mut mmd2_trace = Vec::new();
    let mut pooled_sum = DVector::zeros(d);
    let mut pooled_outer = DMatrix::zeros(d, d);
    let mut pooled_count = 0usize;

    for step in 0..cfg.n_steps {
        if cfg.record_every > 0 && step % cfg.record_every == 0 {
            trajectory.push(ens.clone());
        }
        let noise = StepNoise {
            latents: match &frozen {
                Some(l) => l.clone(),
                None => draw_latents(target.model, cfg.simulations, cfg.seed, step),
            },
            increments: draw_increments(cfg, d, cfg.seed, step),
        };
        let outcome = step_inner(target, &ens, cfg, &noise, step, cfg.method)?;
        if let Some(out) = &outcome.outputs {
            mmd2_trace.push(mean_particle_mmd2(out, target.data, &target.kernel)?);
        }
        ens = outcome.ensemble;
        if cfg.trajectory_average && step + 1 > cfg.burn_in {
            for m in 0..ens.len() {
                let p = ens.particle(m);
                pooled_outer += &p * p.transpose();
                pooled_sum += p;
            }
            pooled_count += ens.len();
        }
    }
    if cfg.record_every > 0 && cfg.n_steps % cfg.record_every == 0 {
        trajectory.push(ens.clone());
    }

    let (posterior_mean, posterior_covariance) = if cfg.trajectory_average && pooled_count > 0 {
        let n = pooled_count as f64;
        let mean = pooled_sum / n;
        let cov = pooled_outer / n - &mean * mean.transpose();
        (mean, cov)
    } else {
        let stats = EnsembleStats::parameters(&ens);
        (stats.mean, stats.covariance)
    };

    Ok(ChainResult {
        final_ensemble: ens,
        trajectory,
        posterior_mean,
        posterior_covariance,
        mmd2_trace,
    })
}

// ---------------------------------------------------------------------------
// Minimum-MMD point estimate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct MinimumMmd {
    pub theta: DVector<f64>,
    /// Frozen-latent MMD² before each iteration and after the last.
    pub objective: Vec<f64>,
}

/// Fixed-step gradient descent on the frozen-latent U-statistic.
pub fn minimum_mmd_estimate(
    model: &dyn GenerativeModel,
    data: &SampleBatch,
    latents: &[Vec<f64>],
    theta0: &[f64],
    step: f64,
    iters: usize,
    kernel: &KernelSpec,
) -> Result<MinimumMmd> {
    if iters == 0 {
        return Err(Error::invalid("need at least one iteration"));
    }
    if theta0.len() != model.param_dim() {
        return Err(Error::invalid("initial point has the wrong dimension"));
    }
    let mut theta = theta0.to_vec();
    let mut objective = Vec::with_capacity(iters + 1);
    for it in 0..iters {
        objective.push(mmd2_at(&theta, model, latents, data, kernel)?);
        let grad = grad_mmd2_exact(&theta, model, latents, data, kernel)?;
        for (t, g) in theta.iter_mut().zip(grad.iter()) {
            *t -= step * g;
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step: it,
                detail: "minimum-MMD iterate became non-finite".into(),
            });
        }
    }
    objective.push(mmd2_at(&theta, model, latents, data, kernel)?);
    Ok(MinimumMmd {
        theta: DVector::from_vec(theta),
        objective,
    })
}
