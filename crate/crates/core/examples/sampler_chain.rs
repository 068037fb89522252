//! Drives the gradient-free sampler by hand on a Gaussian location model and
//! prints the ensemble moments and the MMD trace.

use gfetld::kernel::{KernelSpec, SampleBatch};
use gfetld::models::{GaussianLocation, GenerativeModel};
use gfetld::sampler::{run_chain, GaussianPrior, SamplerConfig, Target};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> gfetld::Result<()> {
    let model = GaussianLocation;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let rows: Vec<Vec<f64>> = (0..100)
        .map(|_| model.simulate(&[1.5], &model.sample_latent(&mut rng)))
        .collect::<gfetld::Result<_>>()?;
    let data = SampleBatch::from_rows(&rows)?;
    let prior = GaussianPrior::new(vec![0.0], vec![4.0])?;
    let target = Target {
        model: &model,
        data: &data,
        prior: &prior,
        kernel: KernelSpec::new(1.0)?,
    };
    let cfg = SamplerConfig {
        particles: 20,
        simulations: 20,
        beta: 500.0,
        n_steps: 200,
        seed: 3,
        ..SamplerConfig::default()
    };
    let res = run_chain(&target, &cfg)?;
    for (step, v) in res.mmd2_trace.iter().enumerate().step_by(25) {
        println!("step {step:4}  mean particle MMD² {v:.5}");
    }
    println!(
        "posterior mean {:.4}, variance {:.5}",
        res.posterior_mean[0],
        res.posterior_covariance[(0, 0)]
    );
    Ok(())
}
