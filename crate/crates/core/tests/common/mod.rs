#![allow(dead_code)]

use gfetld::models::GenerativeModel;
use gfetld::Result;
use nalgebra::DMatrix;
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

pub fn gauss(x: &[f64], y: &[f64], gamma: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (-d2 / (2.0 * gamma * gamma)).exp()
}

/// Unbiased squared MMD by explicit double loops.
pub fn brute_mmd2_u(x: &[Vec<f64>], y: &[Vec<f64>], gamma: f64) -> f64 {
    let (j, n) = (x.len() as f64, y.len() as f64);
    let mut xx = 0.0;
    for a in 0..x.len() {
        for b in 0..x.len() {
            if a != b {
                xx += gauss(&x[a], &x[b], gamma);
            }
        }
    }
    let mut yy = 0.0;
    for a in 0..y.len() {
        for b in 0..y.len() {
            if a != b {
                yy += gauss(&y[a], &y[b], gamma);
            }
        }
    }
    let mut xy = 0.0;
    for a in x {
        for b in y {
            xy += gauss(a, b, gamma);
        }
    }
    let yy = if y.len() > 1 { yy / (n * (n - 1.0)) } else { 0.0 };
    xx / (j * (j - 1.0)) + yy - 2.0 * xy / (j * n)
}

/// Biased (V-statistic) squared MMD by explicit double loops.
pub fn brute_mmd2_v(x: &[Vec<f64>], y: &[Vec<f64>], gamma: f64) -> f64 {
    let (j, n) = (x.len() as f64, y.len() as f64);
    let mean = |p: &[Vec<f64>], q: &[Vec<f64>]| {
        let mut s = 0.0;
        for a in p {
            for b in q {
                s += gauss(a, b, gamma);
            }
        }
        s
    };
    mean(x, x) / (j * j) + mean(y, y) / (n * n) - 2.0 * mean(x, y) / (j * n)
}

/// Sum of the magnitudes of the three kernel means, the natural error scale of an MMD estimate.
pub fn mmd_scale(x: &[Vec<f64>], y: &[Vec<f64>], gamma: f64) -> f64 {
    let mean = |p: &[Vec<f64>], q: &[Vec<f64>]| {
        p.iter().flat_map(|a| q.iter().map(move |b| gauss(a, b, gamma))).sum::<f64>() / (p.len() * q.len()) as f64
    };
    mean(x, x) + mean(y, y) + 2.0 * mean(x, y)
}

pub fn central_difference(f: impl Fn(&[f64]) -> f64, theta: &[f64], h: f64) -> Vec<f64> {
    (0..theta.len())
        .map(|i| {
            let mut p = theta.to_vec();
            let mut m = theta.to_vec();
            p[i] += h;
            m[i] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}

/// Nonlinear D → D test model: x_i = θ_i + 0.3 θ_{i+1}² + (1 + 0.1 θ_i²)^{1/2} u_i.
#[derive(Debug, Clone, Copy)]
pub struct Bent(pub usize);

impl GenerativeModel for Bent {
    fn name(&self) -> &str {
        "bent"
    }
    fn param_dim(&self) -> usize {
        self.0
    }
    fn output_dim(&self) -> usize {
        self.0
    }
    fn latent_dim(&self) -> usize {
        self.0
    }
    fn sample_latent(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        (0..self.0).map(|_| StandardNormal.sample(rng)).collect()
    }
    fn simulate(&self, theta: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let d = self.0;
        Ok((0..d)
            .map(|i| {
                let next = theta[(i + 1) % d];
                theta[i] + 0.3 * next * next + (1.0 + 0.1 * theta[i] * theta[i]).sqrt() * u[i]
            })
            .collect())
    }
    fn has_jacobian(&self) -> bool {
        true
    }
    fn jacobian(&self, theta: &[f64], u: &[f64]) -> Result<DMatrix<f64>> {
        let d = self.0;
        let mut j = DMatrix::zeros(d, d);
        for i in 0..d {
            let s = (1.0 + 0.1 * theta[i] * theta[i]).sqrt();
            j[(i, i)] += 1.0 + 0.1 * theta[i] / s * u[i];
            j[(i, (i + 1) % d)] += 0.6 * theta[(i + 1) % d];
        }
        Ok(j)
    }
}

pub fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-12)
}
