//! Generative models `x = G_θ(u)` and data contamination.
//!
//! A model is a deterministic map from parameters and a latent draw to an
//! output vector. Randomness lives entirely in the latent draw, which lets the
//! sampler share latent seeds across particles.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::SampleBatch;

pub trait GenerativeModel: Sync {
    fn name(&self) -> &str;

    /// Parameter dimension D.
    fn param_dim(&self) -> usize;

    /// Output dimension N.
    fn output_dim(&self) -> usize;

    fn latent_dim(&self) -> usize;

    /// Draws one latent input u from the model's base distribution.
    fn sample_latent(&self, rng: &mut dyn RngCore) -> Vec<f64>;

    fn simulate(&self, theta: &[f64], u: &[f64]) -> Result<Vec<f64>>;

    fn has_jacobian(&self) -> bool {
        false
    }

    /// ∇_θ G_θ(u) as an N × D matrix.
    fn jacobian(&self, _theta: &[f64], _u: &[f64]) -> Result<DMatrix<f64>> {
        Err(Error::Capability(format!(
            "model `{}` does not provide a Jacobian",
            self.name()
        )))
    }
}

fn expect_scalar(theta: &[f64], u: &[f64]) -> Result<(f64, f64)> {
    match (theta, u) {
        ([t], [v]) => Ok((*t, *v)),
        _ => Err(Error::invalid(format!(
            "location model takes scalar θ and u, got lengths {} and {}",
            theta.len(),
            u.len()
        ))),
    }
}

/// G_θ(u) = θ + u with u ~ N(0, 1).
pub fn simulate_gaussian_location(theta: f64, u: f64) -> f64 {
    theta + u
}

/// G_θ(u) = θ + (2u - 1) with u ~ U(0, 1), i.e. x ~ U[θ - 1, θ + 1].
pub fn simulate_uniform_location(theta: f64, u: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::invalid(format!("uniform latent must lie in [0, 1], got {u}")));
    }
    Ok(theta + (2.0 * u - 1.0))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GaussianLocation;

impl GenerativeModel for GaussianLocation {
    fn name(&self) -> &str {
        "gaussian_location"
    }
    fn param_dim(&self) -> usize {
        1
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn latent_dim(&self) -> usize {
        1
    }
    fn sample_latent(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        vec![StandardNormal.sample(rng)]
    }
    fn simulate(&self, theta: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let (t, v) = expect_scalar(theta, u)?;
        Ok(vec![simulate_gaussian_location(t, v)])
    }
    fn has_jacobian(&self) -> bool {
        true
    }
    fn jacobian(&self, theta: &[f64], u: &[f64]) -> Result<DMatrix<f64>> {
        expect_scalar(theta, u)?;
        Ok(DMatrix::identity(1, 1))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct UniformLocation;

impl GenerativeModel for UniformLocation {
    fn name(&self) -> &str {
        "uniform_location"
    }
    fn param_dim(&self) -> usize {
        1
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn latent_dim(&self) -> usize {
        1
    }
    fn sample_latent(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        vec![Uniform::new_inclusive(0.0, 1.0).expect("valid range").sample(rng)]
    }
    fn simulate(&self, theta: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let (t, v) = expect_scalar(theta, u)?;
        Ok(vec![simulate_uniform_location(t, v)?])
    }
    fn has_jacobian(&self) -> bool {
        true
    }
    fn jacobian(&self, theta: &[f64], u: &[f64]) -> Result<DMatrix<f64>> {
        expect_scalar(theta, u)?;
        Ok(DMatrix::identity(1, 1))
    }
}

// ---------------------------------------------------------------------------
// Stochastic Lorenz96
// ---------------------------------------------------------------------------

/// Largest |φ| the Lorenz96 model adapter passes to the simulator.
pub const PHI_LIMIT: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lorenz96Params {
    pub b0: f64,
    pub b1: f64,
    pub phi: f64,
    pub sigma_e: f64,
}

impl Lorenz96Params {
    pub fn new(b0: f64, b1: f64, phi: f64, sigma_e: f64) -> Result<Self> {
        if !(phi.abs() < 1.0) {
            return Err(Error::invalid(format!("|phi| must be < 1, got {phi}")));
        }
        if !(sigma_e > 0.0) {
            return Err(Error::invalid(format!("sigma_e must be > 0, got {sigma_e}")));
        }
        Ok(Self { b0, b1, phi, sigma_e })
    }

    pub fn to_vec(&self) -> Vec<f64> {
        vec![self.b0, self.b1, self.phi, self.sigma_e]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Lorenz96Config {
    pub state_dim: usize,
    pub forcing: f64,
    pub dt: f64,
    pub horizon: f64,
    pub spinup_steps: usize,
    pub shared_residual: bool,
    /// RK4 steps of length Δt / rk4_substeps per observation step, with the
    /// forcing held fixed across all of them.
    pub rk4_substeps: usize,
}

impl Default for Lorenz96Config {
    fn default() -> Self {
        Self {
            state_dim: 8,
            forcing: 10.0,
            dt: 3.0 / 40.0,
            horizon: 2.5,
            spinup_steps: 100,
            shared_residual: false,
            rk4_substeps: 1,
        }
    }
}

impl Lorenz96Config {
    /// floor(T / Δt), guarded against the quotient landing a hair below an integer.
    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt + 1e-9).floor() as usize
    }

    pub fn output_dim(&self) -> usize {
        self.n_steps() * self.state_dim
    }

    fn validate(&self) -> Result<()> {
        if self.state_dim < 4 {
            return Err(Error::invalid(format!(
                "Lorenz96 needs at least 4 variables, got {}",
                self.state_dim
            )));
        }
        if !(self.dt > 0.0) || !(self.horizon > 0.0) || self.n_steps() == 0 {
            return Err(Error::invalid("Lorenz96 needs dt > 0 and horizon >= dt"));
        }
        if self.rk4_substeps == 0 {
            return Err(Error::invalid("rk4_substeps must be at least 1"));
        }
        Ok(())
    }

    /// y_k = F everywhere, +0.01 on the first component, then `spinup_steps`
    /// deterministic RK4 steps.
    pub fn initial_state(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let mut y = vec![self.forcing; self.state_dim];
        y[0] += 0.01;
        let zeros = vec![0.0; self.state_dim];
        for _ in 0..self.spinup_steps {
            y = rk4_step(&y, self.forcing, &zeros, self.dt);
        }
        Ok(y)
    }
}

#[inline]
fn drift_unchecked(y: &[f64], forcing: f64, g: &[f64], out: &mut [f64]) {
    let k = y.len();
    for i in 0..k {
        let ym1 = y[(i + k - 1) % k];
        let ym2 = y[(i + k - 2) % k];
        let yp1 = y[(i + 1) % k];
        out[i] = -ym1 * (ym2 - yp1) - y[i] + forcing - g[i];
    }
}

/// dy_k/dt = -y_{k-1}(y_{k-2} - y_{k+1}) - y_k + F - g_k, indices cyclic.
pub fn lorenz96_drift(y: &[f64], forcing: f64, g: &[f64]) -> Result<Vec<f64>> {
    if y.len() < 4 {
        return Err(Error::invalid(format!(
            "Lorenz96 needs at least 4 variables, got {}",
            y.len()
        )));
    }
    if g.len() != y.len() {
        return Err(Error::invalid("forcing vector length must match state"));
    }
    let mut out = vec![0.0; y.len()];
    drift_unchecked(y, forcing, g, &mut out);
    Ok(out)
}

/// One classical RK4 step with the stochastic forcing `g` held fixed.
pub fn rk4_step(y: &[f64], forcing: f64, g: &[f64], dt: f64) -> Vec<f64> {
    let k = y.len();
    let mut k1 = vec![0.0; k];
    let mut k2 = vec![0.0; k];
    let mut k3 = vec![0.0; k];
    let mut k4 = vec![0.0; k];
    let mut tmp = vec![0.0; k];

    drift_unchecked(y, forcing, g, &mut k1);
    for i in 0..k {
        tmp[i] = y[i] + 0.5 * dt * k1[i];
    }
    drift_unchecked(&tmp, forcing, g, &mut k2);
    for i in 0..k {
        tmp[i] = y[i] + 0.5 * dt * k2[i];
    }
    drift_unchecked(&tmp, forcing, g, &mut k3);
    for i in 0..k {
        tmp[i] = y[i] + dt * k3[i];
    }
    drift_unchecked(&tmp, forcing, g, &mut k4);
    (0..k)
        .map(|i| y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

#[inline]
fn ar1_unchecked(r: f64, phi: f64, sigma_e: f64, eta: f64) -> f64 {
    phi * r + sigma_e * (1.0 - phi * phi).sqrt() * eta
}

/// r(t) = φ r(t - Δt) + σe √(1 - φ²) η(t).
pub fn ar1_update(r: f64, phi: f64, sigma_e: f64, eta: f64) -> Result<f64> {
    if !(phi.abs() < 1.0) {
        return Err(Error::invalid(format!("|phi| must be < 1, got {phi}")));
    }
    Ok(ar1_unchecked(r, phi, sigma_e, eta))
}

/// g = b0 + b1 y_k + φ r(t - Δt) + σe √(1 - φ²) η(t).
pub fn stochastic_forcing(y_k: f64, r_prev: f64, eta: f64, p: &Lorenz96Params) -> Result<f64> {
    Ok(p.b0 + p.b1 * y_k + ar1_update(r_prev, p.phi, p.sigma_e, eta)?)
}

/// Integrates from `y0`, returning the time-major trajectory (n_steps × K).
///
/// Per macro-step the forcing is computed once from the step's start state and
/// the advanced AR(1) residual, then held fixed across the RK4 stages. `eta`
/// holds K standard normals per step.
fn integrate_stochastic(
    b0: f64,
    b1: f64,
    phi: f64,
    sigma_e: f64,
    cfg: &Lorenz96Config,
    y0: &[f64],
    eta: &[f64],
) -> Result<Vec<f64>> {
    let k = cfg.state_dim;
    let steps = cfg.n_steps();
    if eta.len() != steps * k {
        return Err(Error::invalid(format!(
            "expected {} latent normals, got {}",
            steps * k,
            eta.len()
        )));
    }
    let n_resid = if cfg.shared_residual { 1 } else { k };
    let mut resid = vec![0.0; n_resid];
    let mut g = vec![0.0; k];
    let mut y = y0.to_vec();
    let mut traj = Vec::with_capacity(steps * k);
    for t in 0..steps {
        let noise = &eta[t * k..(t + 1) * k];
        for (i, r) in resid.iter_mut().enumerate() {
            *r = ar1_unchecked(*r, phi, sigma_e, noise[i]);
        }
        for i in 0..k {
            let r = if cfg.shared_residual { resid[0] } else { resid[i] };
            g[i] = b0 + b1 * y[i] + r;
        }
        let h = cfg.dt / cfg.rk4_substeps as f64;
        for _ in 0..cfg.rk4_substeps {
            y = rk4_step(&y, cfg.forcing, &g, h);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step: t,
                detail: "Lorenz96 state became non-finite".into(),
            });
        }
        traj.extend_from_slice(&y);
    }
    Ok(traj)
}

/// Flattened trajectory of length `n_steps · K` for validated parameters.
pub fn simulate_lorenz96(params: &Lorenz96Params, cfg: &Lorenz96Config, eta: &[f64]) -> Result<Vec<f64>> {
    let y0 = cfg.initial_state()?;
    integrate_stochastic(params.b0, params.b1, params.phi, params.sigma_e, cfg, &y0, eta)
}

/// Lorenz96 as a [`GenerativeModel`] with θ = (b0, b1, φ, σe).
///
/// Particles can wander outside the parameter domain, so φ is clipped to
/// `[-PHI_LIMIT, PHI_LIMIT]` and σe is used with its sign (the law of the
/// output is symmetric in σe).
#[derive(Debug, Clone)]
pub struct Lorenz96Model {
    cfg: Lorenz96Config,
    initial_state: Vec<f64>,
}

impl Lorenz96Model {
    pub fn new(cfg: Lorenz96Config) -> Result<Self> {
        let initial_state = cfg.initial_state()?;
        Ok(Self { cfg, initial_state })
    }

    pub fn config(&self) -> &Lorenz96Config {
        &self.cfg
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.initial_state
    }
}

impl GenerativeModel for Lorenz96Model {
    fn name(&self) -> &str {
        "lorenz96_stochastic"
    }
    fn param_dim(&self) -> usize {
        4
    }
    fn output_dim(&self) -> usize {
        self.cfg.output_dim()
    }
    fn latent_dim(&self) -> usize {
        self.cfg.n_steps() * self.cfg.state_dim
    }
    fn sample_latent(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        (0..self.latent_dim()).map(|_| StandardNormal.sample(rng)).collect()
    }
    fn simulate(&self, theta: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let [b0, b1, phi, sigma_e] = theta else {
            return Err(Error::invalid(format!(
                "Lorenz96 takes 4 parameters, got {}",
                theta.len()
            )));
        };
        let phi = phi.clamp(-PHI_LIMIT, PHI_LIMIT);
        integrate_stochastic(*b0, *b1, phi, *sigma_e, &self.cfg, &self.initial_state, u)
    }
}

// ---------------------------------------------------------------------------
// Wrappers
// ---------------------------------------------------------------------------

/// Counts calls into the wrapped model.
#[derive(Debug, Default)]
pub struct CountingModel<M> {
    inner: M,
    simulate_calls: AtomicUsize,
    jacobian_calls: AtomicUsize,
}

impl<M> CountingModel<M> {
    pub fn new(inner: M) -> Self {
        Self {
            inner,
            simulate_calls: AtomicUsize::new(0),
            jacobian_calls: AtomicUsize::new(0),
        }
    }

    pub fn simulate_calls(&self) -> usize {
        self.simulate_calls.load(Ordering::Relaxed)
    }

    pub fn jacobian_calls(&self) -> usize {
        self.jacobian_calls.load(Ordering::Relaxed)
    }
}

impl<M: GenerativeModel> GenerativeModel for CountingModel<M> {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn param_dim(&self) -> usize {
        self.inner.param_dim()
    }
    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }
    fn latent_dim(&self) -> usize {
        self.inner.latent_dim()
    }
    fn sample_latent(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.inner.sample_latent(rng)
    }
    fn simulate(&self, theta: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.simulate_calls.fetch_add(1, Ordering::Relaxed);
        self.inner.simulate(theta, u)
    }
    fn has_jacobian(&self) -> bool {
        self.inner.has_jacobian()
    }
    fn jacobian(&self, theta: &[f64], u: &[f64]) -> Result<DMatrix<f64>> {
        self.jacobian_calls.fetch_add(1, Ordering::Relaxed);
        self.inner.jacobian(theta, u)
    }
}

/// The model seen in coordinates θ̃ where θ = A θ̃ + b.
#[derive(Debug, Clone)]
pub struct Reparameterized<M> {
    inner: M,
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl<M: GenerativeModel> Reparameterized<M> {
    pub fn new(inner: M, a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let d = inner.param_dim();
        if a.shape() != (d, d) || b.len() != d {
            return Err(Error::invalid(format!("affine map must be {d}x{d}")));
        }
        Ok(Self { inner, a, b })
    }

    fn to_original(&self, theta: &[f64]) -> Vec<f64> {
        (&self.a * DVector::from_column_slice(theta) + &self.b)
            .iter()
            .copied()
            .collect()
    }
}

impl<M: GenerativeModel> GenerativeModel for Reparameterized<M> {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn param_dim(&self) -> usize {
        self.inner.param_dim()
    }
    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }
    fn latent_dim(&self) -> usize {
        self.inner.latent_dim()
    }
    fn sample_latent(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.inner.sample_latent(rng)
    }
    fn simulate(&self, theta: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.inner.simulate(&self.to_original(theta), u)
    }
    fn has_jacobian(&self) -> bool {
        self.inner.has_jacobian()
    }
    fn jacobian(&self, theta: &[f64], u: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.inner.jacobian(&self.to_original(theta), u)? * &self.a)
    }
}

// ---------------------------------------------------------------------------
// Contamination
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContaminationSpec {
    pub epsilon: f64,
    pub outlier_mean: f64,
    pub outlier_sd: f64,
}

impl ContaminationSpec {
    pub fn new(epsilon: f64, outlier_mean: f64, outlier_sd: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::invalid(format!("epsilon must lie in [0, 1], got {epsilon}")));
        }
        if !(outlier_sd > 0.0) {
            return Err(Error::invalid("outlier sd must be positive"));
        }
        Ok(Self {
            epsilon,
            outlier_mean,
            outlier_sd,
        })
    }

    pub fn outlier_count(&self, rows: usize) -> usize {
        (self.epsilon * rows as f64).round() as usize
    }
}

/// Replaces exactly `round(ε · rows)` rows with draws from N(z, sd²).
/// Returns the contaminated batch and the sorted replaced row indices.
pub fn contaminate_indexed(
    clean: &SampleBatch,
    spec: &ContaminationSpec,
    rng: &mut dyn RngCore,
) -> Result<(SampleBatch, Vec<usize>)> {
    let spec = ContaminationSpec::new(spec.epsilon, spec.outlier_mean, spec.outlier_sd)?;
    let count = spec.outlier_count(clean.rows());
    let mut out = clean.clone();
    if count == 0 {
        return Ok((out, Vec::new()));
    }
    let mut idx = rand::seq::index::sample(rng, clean.rows(), count).into_vec();
    idx.sort_unstable();
    let law = Normal::new(spec.outlier_mean, spec.outlier_sd)
        .map_err(|e| Error::invalid(e.to_string()))?;
    let dim = clean.dim();
    let values = out.values_mut();
    for &i in &idx {
        for v in &mut values[i * dim..(i + 1) * dim] {
            *v = law.sample(rng);
        }
    }
    Ok((out, idx))
}

pub fn contaminate(clean: &SampleBatch, spec: &ContaminationSpec, rng: &mut dyn RngCore) -> Result<SampleBatch> {
    contaminate_indexed(clean, spec, rng).map(|(b, _)| b)
}
