//! Gaussian RKHS kernel and MMD² estimators.
//!
//! The kernel is `k(x, y) = exp(-‖x - y‖² / (2γ²))`. Two estimators of the
//! squared MMD are provided:
//!
//! * [`mmd2_unbiased`]: the U-statistic, diagonal pairs excluded from the
//!   within-sample sums. Can be negative.
//! * [`mmd2_vstat`]: the V-statistic (squared distance between empirical mean
//!   embeddings). Always non-negative.
//!
//! All Gram sums use compensated (Neumaier) accumulation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gaussian kernel with scalar bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    bandwidth: f64,
}

impl KernelSpec {
    pub fn new(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::invalid(format!(
                "bandwidth must be positive and finite, got {bandwidth}"
            )));
        }
        Ok(Self { bandwidth })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    #[inline]
    fn inv_two_gamma_sq(&self) -> f64 {
        0.5 / (self.bandwidth * self.bandwidth)
    }
}

/// A batch of samples in R^dim, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    rows: usize,
    dim: usize,
    values: Vec<f64>,
}

impl SampleBatch {
    pub fn new(rows: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || dim == 0 {
            return Err(Error::invalid("sample batch needs at least one row and one column"));
        }
        if values.len() != rows * dim {
            return Err(Error::invalid(format!(
                "expected {} values for a {rows}x{dim} batch, got {}",
                rows * dim,
                values.len()
            )));
        }
        Ok(Self { rows, dim, values })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut values = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::invalid(format!(
                    "row {i} has dimension {}, expected {dim}",
                    r.len()
                )));
            }
            values.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, values)
    }

    /// One-dimensional batch, one row per value.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::new(values.len(), 1, values.to_vec())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.dim)
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    #[inline]
    pub(crate) fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub(crate) fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

#[inline]
pub(crate) fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Kernel evaluation without the dimension check. Callers guarantee equal lengths.
#[inline]
pub(crate) fn kernel_unchecked(x: &[f64], y: &[f64], spec: &KernelSpec) -> f64 {
    (-sq_dist(x, y) * spec.inv_two_gamma_sq()).exp()
}

/// Adds `scale * ∇_x k(x, y)` into `out`.
#[inline]
pub(crate) fn add_kernel_gradient(x: &[f64], y: &[f64], spec: &KernelSpec, scale: f64, out: &mut [f64]) {
    let k = kernel_unchecked(x, y, spec);
    let c = -scale * k / (spec.bandwidth * spec.bandwidth);
    for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
        *o += c * (a - b);
    }
}

fn check_dims(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    Ok(())
}

pub fn eval_kernel(x: &[f64], y: &[f64], spec: &KernelSpec) -> Result<f64> {
    check_dims(x, y)?;
    Ok(kernel_unchecked(x, y, spec))
}

/// ∇_x k(x, y) = -((x - y) / γ²) k(x, y).
pub fn kernel_gradient_x(x: &[f64], y: &[f64], spec: &KernelSpec) -> Result<Vec<f64>> {
    check_dims(x, y)?;
    let mut out = vec![0.0; x.len()];
    add_kernel_gradient(x, y, spec, 1.0, &mut out);
    Ok(out)
}

/// Median of all pairwise Euclidean distances between rows.
pub fn median_heuristic_bandwidth(data: &SampleBatch) -> Result<KernelSpec> {
    let n = data.rows();
    if n < 2 {
        return Err(Error::DegenerateData(
            "median heuristic needs at least two samples".into(),
        ));
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            dists.push(sq_dist(data.row(i), data.row(j)).sqrt());
        }
    }
    dists.sort_by(f64::total_cmp);
    let len = dists.len();
    let median = if len % 2 == 1 {
        dists[len / 2]
    } else {
        0.5 * (dists[len / 2 - 1] + dists[len / 2])
    };
    if !(median > 0.0) {
        return Err(Error::DegenerateData(
            "median pairwise distance is zero".into(),
        ));
    }
    KernelSpec::new(median)
}

/// Sum of k over all ordered off-diagonal pairs within one batch.
fn within_sum_offdiag(x: &SampleBatch, spec: &KernelSpec) -> f64 {
    let mut acc = CompensatedSum::default();
    for i in 0..x.rows() {
        for j in (i + 1)..x.rows() {
            acc.add(kernel_unchecked(x.row(i), x.row(j), spec));
        }
    }
    2.0 * acc.value()
}

fn cross_sum(x: &SampleBatch, y: &SampleBatch, spec: &KernelSpec) -> f64 {
    let mut acc = CompensatedSum::default();
    for xi in x.iter_rows() {
        for yj in y.iter_rows() {
            acc.add(kernel_unchecked(xi, yj, spec));
        }
    }
    acc.value()
}

fn check_batches(x: &SampleBatch, y: &SampleBatch) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::invalid(format!(
            "batch dimension mismatch: {} vs {}",
            x.dim(),
            y.dim()
        )));
    }
    Ok(())
}

/// Unbiased U-statistic estimate of MMD²(P, Q) from X ~ P and Y ~ Q.
pub fn mmd2_unbiased(x: &SampleBatch, y: &SampleBatch, spec: &KernelSpec) -> Result<f64> {
    check_batches(x, y)?;
    if x.rows() < 2 || y.rows() < 2 {
        return Err(Error::invalid(
            "unbiased MMD² needs at least two rows in each batch",
        ));
    }
    Ok(mmd2_objective(x, y, spec))
}

/// The U-statistic used as the sampler's data-fit term.
///
/// Identical to [`mmd2_unbiased`] except that a single observed sample is
/// allowed: the data-data term is then taken as 0 (it does not depend on θ).
/// Requires `x.rows() >= 2` and matching dimensions; not checked.
pub(crate) fn mmd2_objective(x: &SampleBatch, y: &SampleBatch, spec: &KernelSpec) -> f64 {
    let (j, n) = (x.rows() as f64, y.rows() as f64);
    let xx = within_sum_offdiag(x, spec) / (j * (j - 1.0));
    let yy = if y.rows() >= 2 {
        within_sum_offdiag(y, spec) / (n * (n - 1.0))
    } else {
        0.0
    };
    let xy = cross_sum(x, y, spec) / (j * n);
    xx + yy - 2.0 * xy
}

/// Biased V-statistic estimate of MMD², diagonals included.
pub fn mmd2_vstat(x: &SampleBatch, y: &SampleBatch, spec: &KernelSpec) -> Result<f64> {
    check_batches(x, y)?;
    let (j, n) = (x.rows() as f64, y.rows() as f64);
    // k(x, x) = 1 on the diagonal
    let xx = (within_sum_offdiag(x, spec) + j) / (j * j);
    let yy = (within_sum_offdiag(y, spec) + n) / (n * n);
    let xy = cross_sum(x, y, spec) / (j * n);
    Ok((xx + yy - 2.0 * xy).max(0.0))
}
