//! Contamination sweep for the Gaussian or uniform location experiment.
//!
//! cargo run --release --example robustness_sweep -- uniform-location

use gfetld::experiment::{run_experiment, ExperimentConfig, GF_ETLD, STANDARD_BAYES};

fn main() -> gfetld::Result<()> {
    let kind = std::env::args().nth(1).unwrap_or_else(|| "gaussian-location".into());
    let cfg = ExperimentConfig::from_toml_str(
        &format!("experiment = \"{kind}\"\nepsilons = [0.0, 0.1, 0.2, 0.3, 0.4]\nrepetitions = 5\n"),
        &[],
    )?;
    let report = run_experiment(&cfg)?;
    println!("epsilon  method           mean      rmse");
    for s in &report.summaries {
        if s.method != GF_ETLD && s.method != STANDARD_BAYES {
            continue;
        }
        let (Some(m), Some(r)) = (&s.posterior_mean, &s.rmse) else {
            println!("{:<8} {:<16} (no successful runs)", s.epsilon, s.method);
            continue;
        };
        println!("{:<8} {:<16} {:<9.4} {:.4}", s.epsilon, s.method, m[0], r[0]);
    }
    Ok(())
}
