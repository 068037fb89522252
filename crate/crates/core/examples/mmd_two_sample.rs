//! Squared MMD between two Gaussian samples as their means drift apart.

use gfetld::kernel::{median_heuristic_bandwidth, mmd2_unbiased, mmd2_vstat, SampleBatch};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn sample(rng: &mut ChaCha8Rng, mean: f64, n: usize) -> Vec<Vec<f64>> {
    let normal = Normal::new(mean, 1.0).unwrap();
    (0..n).map(|_| vec![normal.sample(rng), normal.sample(rng)]).collect()
}

fn main() -> gfetld::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = SampleBatch::from_rows(&sample(&mut rng, 0.0, 200))?;
    let kernel = median_heuristic_bandwidth(&x)?;
    println!("median-heuristic bandwidth {:.4}", kernel.bandwidth());
    println!("shift,mmd2_u,mmd2_v");
    for shift in [0.0, 0.25, 0.5, 1.0, 2.0] {
        let y = SampleBatch::from_rows(&sample(&mut rng, shift, 200))?;
        let u = mmd2_unbiased(&x, &y, &kernel)?;
        let v = mmd2_vstat(&x, &y, &kernel)?;
        println!("{shift},{u:.6},{v:.6}");
    }
    Ok(())
}
