//! Empirical moments of a particle ensemble and its simulated outputs.
//!
//! All normalisations use 1/M. The generalized square root is the D × M
//! matrix of scaled deviations, so `C = S Sᵀ` holds by construction and no
//! factorisation is ever needed.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// M particles in R^D, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    particles: DMatrix<f64>,
}

impl ParticleEnsemble {
    pub fn new(particles: DMatrix<f64>) -> Result<Self> {
        if particles.nrows() < 2 {
            return Err(Error::invalid(format!(
                "ensemble needs at least 2 particles, got {}",
                particles.nrows()
            )));
        }
        if particles.ncols() == 0 {
            return Err(Error::invalid("ensemble dimension must be positive"));
        }
        if let Some(bad) = particles.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite entry in particle {}",
                bad % particles.nrows()
            )));
        }
        Ok(Self { particles })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let d = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        if rows.iter().any(|r| r.as_ref().len() != d) {
            return Err(Error::invalid("particles have differing dimensions"));
        }
        Self::new(DMatrix::from_fn(rows.len(), d, |m, i| rows[m].as_ref()[i]))
    }

    /// Number of particles M.
    pub fn len(&self) -> usize {
        self.particles.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.nrows() == 0
    }

    /// Parameter dimension D.
    pub fn dim(&self) -> usize {
        self.particles.ncols()
    }

    pub fn particle(&self, m: usize) -> DVector<f64> {
        self.particles.row(m).transpose()
    }

    pub fn particle_vec(&self, m: usize) -> Vec<f64> {
        self.particles.row(m).iter().copied().collect()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.particles
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.particles
    }
}

/// Simulated outputs `x^{mj} = G_{θ^m}(u^j)` for M particles and J shared latent draws.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputBatch {
    particles: usize,
    seeds: usize,
    out_dim: usize,
    values: Vec<f64>,
}

impl OutputBatch {
    pub fn new(particles: usize, seeds: usize, out_dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != particles * seeds * out_dim {
            return Err(Error::invalid(format!(
                "output batch {particles}x{seeds}x{out_dim} needs {} values, got {}",
                particles * seeds * out_dim,
                values.len()
            )));
        }
        Ok(Self {
            particles,
            seeds,
            out_dim,
            values,
        })
    }

    pub fn particles(&self) -> usize {
        self.particles
    }

    pub fn seeds(&self) -> usize {
        self.seeds
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn output(&self, m: usize, j: usize) -> &[f64] {
        let start = (m * self.seeds + j) * self.out_dim;
        &self.values[start..start + self.out_dim]
    }

    /// All J outputs of particle m, contiguous (J × N row-major).
    pub fn particle_outputs(&self, m: usize) -> &[f64] {
        let len = self.seeds * self.out_dim;
        &self.values[m * len..(m + 1) * len]
    }
}

pub fn ensemble_mean(ens: &ParticleEnsemble) -> DVector<f64> {
    let m = ens.len() as f64;
    ens.particles.row_sum().transpose() / m
}

/// D × M matrix whose columns are `θ^m - θ̄`.
pub fn deviations(ens: &ParticleEnsemble) -> DMatrix<f64> {
    let mean = ensemble_mean(ens);
    let mut dev = ens.particles.transpose();
    for mut col in dev.column_iter_mut() {
        col -= &mean;
    }
    dev
}

/// C = (1/M) Σ (θ^m - θ̄)(θ^m - θ̄)ᵀ.
pub fn ensemble_covariance(ens: &ParticleEnsemble) -> DMatrix<f64> {
    let dev = deviations(ens);
    let mut c = &dev * dev.transpose() / ens.len() as f64;
    symmetrize(&mut c);
    c
}

/// The D × M generalized square root `(1/√M) Θ′`.
pub fn generalized_sqrt(ens: &ParticleEnsemble) -> DMatrix<f64> {
    deviations(ens) / (ens.len() as f64).sqrt()
}

/// Symmetric D × D square root of a PSD matrix by eigendecomposition.
/// Negative round-off eigenvalues are clamped to zero.
pub fn symmetric_sqrt(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = cov.clone().symmetric_eigen();
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let q = &eig.eigenvectors;
    let mut out = q * DMatrix::from_diagonal(&roots) * q.transpose();
    symmetrize(&mut out);
    out
}

fn symmetrize(c: &mut DMatrix<f64>) {
    let n = c.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (c[(i, j)] + c[(j, i)]);
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
}

/// Per-seed output means x̄^j as a J × N matrix.
pub fn output_means(out: &OutputBatch) -> DMatrix<f64> {
    let mut means = DMatrix::zeros(out.seeds, out.out_dim);
    for m in 0..out.particles {
        for j in 0..out.seeds {
            for (k, v) in out.output(m, j).iter().enumerate() {
                means[(j, k)] += v;
            }
        }
    }
    means / out.particles as f64
}

fn check_pairing(ens: &ParticleEnsemble, out: &OutputBatch) -> Result<()> {
    if out.particles != ens.len() {
        return Err(Error::invalid(format!(
            "output batch has {} particles, ensemble has {}",
            out.particles,
            ens.len()
        )));
    }
    Ok(())
}

fn cross_covariance_with(dev: &DMatrix<f64>, out: &OutputBatch, out_mean: &[f64], j: usize) -> DMatrix<f64> {
    let (d, n, m_count) = (dev.nrows(), out.out_dim, out.particles);
    let mut cc = DMatrix::zeros(d, n);
    for m in 0..m_count {
        let x = out.output(m, j);
        for k in 0..n {
            let dx = x[k] - out_mean[k];
            for i in 0..d {
                cc[(i, k)] += dev[(i, m)] * dx;
            }
        }
    }
    cc / m_count as f64
}

/// C^{θx^j} = (1/M) Σ_m (θ^m - θ̄)(x^{mj} - x̄^j)ᵀ, a D × N matrix. `j` is 0-based.
pub fn cross_covariance(ens: &ParticleEnsemble, out: &OutputBatch, j: usize) -> Result<DMatrix<f64>> {
    check_pairing(ens, out)?;
    if j >= out.seeds {
        return Err(Error::invalid(format!(
            "seed index {j} out of range for {} seeds",
            out.seeds
        )));
    }
    let dev = deviations(ens);
    let mut mean = vec![0.0; out.out_dim];
    for m in 0..out.particles {
        for (acc, v) in mean.iter_mut().zip(out.output(m, j)) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= out.particles as f64);
    Ok(cross_covariance_with(&dev, out, &mean, j))
}

/// Moments of an ensemble and its outputs, all taken from the same snapshot.
#[derive(Debug, Clone)]
pub struct EnsembleStats {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// Generalized square root, D × M.
    pub sqrt: DMatrix<f64>,
    /// x̄^j, J × N. Empty when computed without outputs.
    pub output_means: DMatrix<f64>,
    /// One D × N matrix per latent seed.
    pub cross_covariances: Vec<DMatrix<f64>>,
}

impl EnsembleStats {
    /// Parameter moments only.
    pub fn parameters(ens: &ParticleEnsemble) -> Self {
        let mean = ensemble_mean(ens);
        let sqrt = deviations(ens) / (ens.len() as f64).sqrt();
        let mut covariance = &sqrt * sqrt.transpose();
        symmetrize(&mut covariance);
        Self {
            mean,
            covariance,
            sqrt,
            output_means: DMatrix::zeros(0, 0),
            cross_covariances: Vec::new(),
        }
    }

    pub fn compute(ens: &ParticleEnsemble, out: &OutputBatch) -> Result<Self> {
        check_pairing(ens, out)?;
        let mut stats = Self::parameters(ens);
        let dev = deviations(ens);
        let means = output_means(out);
        stats.cross_covariances = (0..out.seeds)
            .map(|j| {
                let row: Vec<f64> = means.row(j).iter().copied().collect();
                cross_covariance_with(&dev, out, &row, j)
            })
            .collect();
        stats.output_means = means;
        Ok(stats)
    }
}

/// Which way [`affine_transform`] maps particles under `θ = A θ̃ + b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AffineDirection {
    /// θ̃ ↦ A θ̃ + b
    Forward,
    /// θ ↦ A⁻¹ (θ - b)
    Inverse,
}

pub fn affine_transform(
    ens: &ParticleEnsemble,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    direction: AffineDirection,
) -> Result<ParticleEnsemble> {
    let d = ens.dim();
    if a.shape() != (d, d) || b.len() != d {
        return Err(Error::invalid(format!(
            "affine map must be {d}x{d} with a length-{d} shift"
        )));
    }
    let lu = a.clone().lu();
    if !lu.is_invertible() {
        return Err(Error::SingularMatrix("affine map is not invertible".into()));
    }
    let cols = ens.particles.transpose();
    let mapped = match direction {
        AffineDirection::Forward => {
            let mut y = a * cols;
            for mut c in y.column_iter_mut() {
                c += b;
            }
            y
        }
        AffineDirection::Inverse => {
            let mut shifted = cols;
            for mut c in shifted.column_iter_mut() {
                c -= b;
            }
            lu.solve(&shifted)
                .ok_or_else(|| Error::SingularMatrix("affine map is not invertible".into()))?
        }
    };
    ParticleEnsemble::new(mapped.transpose())
}
