//! Reduced Lorenz96 parameter recovery from a single trajectory.
//! Pass `full` to run the default (much slower) configuration.

use gfetld::experiment::{run_experiment, ExperimentConfig, GF_ETLD};

fn main() -> gfetld::Result<()> {
    let full = std::env::args().any(|a| a == "full");
    let overrides: Vec<String> = if full {
        vec![]
    } else {
        ["repetitions=1", "sampler.particles=40", "sampler.n_steps=150", "init.pilots=5"]
            .map(String::from)
            .to_vec()
    };
    let cfg = ExperimentConfig::from_toml_str("experiment = \"lorenz96\"\n", &overrides)?;
    let report = run_experiment(&cfg)?;
    for run in &report.runs {
        println!(
            "rep {} bandwidth {:.2} rejected init draws {} status {:?}",
            run.repetition,
            run.bandwidth.unwrap_or(f64::NAN),
            run.rejected_init_draws,
            run.status
        );
    }
    let s = report.summary(0.0, GF_ETLD).expect("summary");
    if let (Some(m), Some(r)) = (&s.posterior_mean, &s.rmse) {
        for (i, label) in report.param_labels.iter().enumerate() {
            println!("{label:8} truth {:6.3}  mean {:6.3}  rmse {:.3}", cfg.true_theta[i], m[i], r[i]);
        }
    }
    println!("sampler time {:.1} s", report.timing.sampler_seconds.iter().sum::<f64>());
    Ok(())
}
