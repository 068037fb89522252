//! Acceptance suite. Runs every criterion, prints one line each and exits
//! nonzero if any criterion fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::{brute_mmd2_u, brute_mmd2_v, central_difference, mmd_scale, Bent};
use gfetld::ensemble::{affine_transform, AffineDirection};
use gfetld::experiment::{emit_outputs, generate_data, run_experiment, ExperimentConfig, ExperimentKind, ExperimentReport, GF_ETLD, STANDARD_BAYES};
use gfetld::kernel::{mmd2_unbiased, mmd2_vstat, KernelSpec, SampleBatch};
use gfetld::models::{rk4_step, CountingModel, GaussianLocation, GenerativeModel, Lorenz96Config, Lorenz96Model, Reparameterized, UniformLocation};
use gfetld::sampler::*;
use gfetld::Error;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn estimators() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let d = rng.random_range(1..=5);
        let gen = |rng: &mut ChaCha8Rng, n: usize| -> Vec<Vec<f64>> {
            (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
        };
        let (j, n) = (rng.random_range(2..=10), rng.random_range(2..=10));
        let x = gen(&mut rng, j);
        let y = gen(&mut rng, n);
        let g = rng.random_range(0.3..3.0);
        let k = KernelSpec::new(g).unwrap();
        let (bx, by) = (SampleBatch::from_rows(&x).unwrap(), SampleBatch::from_rows(&y).unwrap());
        let scale = mmd_scale(&x, &y, g);
        for (got, want) in [
            (mmd2_unbiased(&bx, &by, &k).unwrap(), brute_mmd2_u(&x, &y, g)),
            (mmd2_vstat(&bx, &by, &k).unwrap(), brute_mmd2_v(&x, &y, g)),
        ] {
            worst = worst.max((got - want).abs() / want.abs().max(scale));
        }
    }
    ensure(worst <= 1e-12, format!("max error relative to max(|value|, kernel-term scale) {worst:.2e} over 50 instances"))
}

fn gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let model: &dyn GenerativeModel = if i % 2 == 0 { &GaussianLocation } else { &UniformLocation };
        let theta = [rng.random_range(-1.5..1.5)];
        let latents: Vec<Vec<f64>> = (0..5).map(|_| model.sample_latent(&mut rng)).collect();
        let data: Vec<Vec<f64>> = (0..7).map(|_| vec![rng.random_range(-2.0..2.0)]).collect();
        let g = rng.random_range(0.5..2.0);
        let k = KernelSpec::new(g).unwrap();
        let exact = grad_mmd2_exact(&theta, model, &latents, &SampleBatch::from_rows(&data).unwrap(), &k).unwrap();
        let f = |t: &[f64]| {
            let sims: Vec<Vec<f64>> = latents.iter().map(|u| model.simulate(t, u).unwrap()).collect();
            brute_mmd2_u(&sims, &data, g)
        };
        let fd = central_difference(f, &theta, 1e-5);
        worst = worst.max((exact[0] - fd[0]).abs());
    }
    ensure(worst <= 1e-6, format!("max |exact - finite difference| {worst:.2e} over 20 instances"))
}

fn location_data(n: usize, seed_value: u64) -> SampleBatch {
    let model = GaussianLocation;
    let mut rng = ChaCha8Rng::seed_from_u64(seed_value);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| model.simulate(&[0.0], &model.sample_latent(&mut rng)).unwrap())
        .collect();
    SampleBatch::from_rows(&rows).unwrap()
}

fn linear_exactness() -> Outcome {
    let data = location_data(150, 3);
    let prior = GaussianPrior::new(vec![2.0], vec![1.0]).unwrap();
    let model = GaussianLocation;
    let target = Target {
        model: &model,
        data: &data,
        prior: &prior,
        kernel: KernelSpec::new(1.0).unwrap(),
    };
    let cfg = SamplerConfig {
        particles: 10,
        simulations: 10,
        beta: 2000.0,
        ..SamplerConfig::default()
    };
    let mut a = initial_ensemble(&prior, 10, 3).unwrap();
    let mut b = a.clone();
    let mut worst = 0.0f64;
    for step in 0..50 {
        let noise = StepNoise::draw(&model, &cfg, 3, step);
        a = gf_etld_step(&target, &a, &cfg, &noise, step).map_err(|e| e.to_string())?;
        b = gradient_etld_step(&target, &b, &cfg, &noise, step).map_err(|e| e.to_string())?;
        for (x, y) in a.matrix().iter().zip(b.matrix().iter()) {
            worst = worst.max((x - y).abs() / x.abs().max(y.abs()).max(1e-300));
        }
    }
    ensure(worst <= 1e-8, format!("max relative gap {worst:.2e} over 50 steps"))
}

fn affine_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for d in [2usize, 4] {
        for _ in 0..5 {
            let a = loop {
                let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-2.0..2.0));
                let sv = a.clone().svd(false, false).singular_values;
                if sv.max() / sv.min() < 50.0 {
                    break a;
                }
            };
            let b = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
            let model = Bent(d);
            let rows: Vec<Vec<f64>> = (0..10)
                .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let data = SampleBatch::from_rows(&rows).unwrap();
            let prior = GaussianPrior::new(vec![0.3; d], vec![1.5; d]).unwrap();
            let t_model = Reparameterized::new(model, a.clone(), b.clone()).unwrap();
            let t_prior = AffinePrior::new(prior.clone(), a.clone(), b.clone()).unwrap();
            let kernel = KernelSpec::new(1.2).unwrap();
            let orig = Target {
                model: &model,
                data: &data,
                prior: &prior,
                kernel,
            };
            let mapped = Target {
                model: &t_model,
                data: &data,
                prior: &t_prior,
                kernel,
            };
            let cfg = SamplerConfig {
                particles: 10,
                simulations: 8,
                beta: 20.0,
                latent_policy: LatentPolicy::Frozen,
                ..SamplerConfig::default()
            };
            let seed_value = rng.random();
            let latents = draw_latents(&model, 8, seed_value, 0);
            let mut x = initial_ensemble(&prior, 10, seed_value).unwrap();
            let mut z = affine_transform(&x, &a, &b, AffineDirection::Inverse).unwrap();
            for step in 0..20 {
                let mut noise = StepNoise::draw(&model, &cfg, seed_value, step);
                noise.latents = latents.clone();
                x = gf_etld_step(&orig, &x, &cfg, &noise, step).map_err(|e| e.to_string())?;
                z = gf_etld_step(&mapped, &z, &cfg, &noise, step).map_err(|e| e.to_string())?;
                let back = affine_transform(&z, &a, &b, AffineDirection::Forward).unwrap();
                for (p, q) in x.matrix().iter().zip(back.matrix().iter()) {
                    worst = worst.max((p - q).abs() / p.abs().max(q.abs()).max(1e-300));
                }
            }
        }
    }
    ensure(worst <= 1e-8, format!("max relative gap {worst:.2e} over 10 transforms x 20 steps"))
}

fn prior_recovery() -> Outcome {
    let data = location_data(10, 5);
    let prior = GaussianPrior::new(vec![2.0], vec![1.0]).unwrap();
    let model = GaussianLocation;
    let target = Target {
        model: &model,
        data: &data,
        prior: &prior,
        kernel: KernelSpec::new(1.0).unwrap(),
    };
    let cfg = SamplerConfig {
        particles: 200,
        beta: 0.0,
        step_size: 1e-3,
        n_steps: 5000,
        seed: 5,
        ..SamplerConfig::default()
    };
    let res = run_chain(&target, &cfg).map_err(|e| e.to_string())?;
    let (m, v) = (res.posterior_mean[0], res.posterior_covariance[(0, 0)]);
    ensure(
        (m - 2.0).abs() <= 0.25 && (0.7..=1.3).contains(&v),
        format!("final mean {m:.4}, variance {v:.4}"),
    )
}

fn gf_mean(r: &ExperimentReport, eps: f64, method: &str) -> Option<(f64, f64)> {
    let s = r.summary(eps, method)?;
    Some((s.posterior_mean.as_ref()?[0], s.rmse.as_ref()?[0]))
}

fn reproducible(cfg: &ExperimentConfig, first: &ExperimentReport) -> Result<bool, String> {
    let second = run_experiment(cfg).map_err(|e| e.to_string())?;
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    emit_outputs(first, a.path()).map_err(|e| e.to_string())?;
    emit_outputs(&second, b.path()).map_err(|e| e.to_string())?;
    let mut same = first.to_json_without_timing().unwrap() == second.to_json_without_timing().unwrap();
    for f in ["ensemble_final.csv", "rmse.csv", "sweep.csv"] {
        let (pa, pb) = (a.path().join(f), b.path().join(f));
        same &= std::fs::read(&pa).ok() == std::fs::read(&pb).ok();
    }
    Ok(same)
}

fn gaussian_location(determinism: &mut Vec<(&'static str, bool)>) -> Outcome {
    let epsilons = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.7];
    let cfg = ExperimentConfig {
        epsilons: epsilons.to_vec(),
        ..ExperimentConfig::defaults(ExperimentKind::GaussianLocation)
    };
    let report = run_experiment(&cfg).map_err(|e| e.to_string())?;
    determinism.push(("gaussian-location", reproducible(&cfg, &report)?));
    let model = GaussianLocation;
    let mut worst_mean = 0.0f64;
    let mut detail = Vec::new();
    for &e in &epsilons[..6] {
        let (m, _) = gf_mean(&report, e, GF_ETLD).ok_or(format!("no successful runs at epsilon {e}"))?;
        worst_mean = worst_mean.max(m.abs());
    }
    let (_, r02) = gf_mean(&report, 0.2, GF_ETLD).unwrap();
    let (_, r07) = gf_mean(&report, 0.7, GF_ETLD).unwrap();
    let ratio = r07 / r02;
    let mut conj_gap = 0.0f64;
    let mut conj_sum = 0.0;
    for run in report.runs.iter().filter(|r| r.epsilon == 0.2) {
        let data = generate_data(&cfg, &model, 2, run.repetition).unwrap();
        let analytic = (2.0 + data.values().iter().sum::<f64>()) / 151.0;
        let got = run.baseline_mean.as_ref().unwrap()[0];
        conj_sum += got / cfg.repetitions as f64;
        conj_gap = conj_gap.max((got - analytic).abs());
    }
    detail.push(format!("max |mean| for eps<=0.5 {worst_mean:.3} (<0.5)"));
    detail.push(format!("RMSE(0.7)/RMSE(0.2) = {r07:.3}/{r02:.3} = {ratio:.2} (>=3)"));
    detail.push(format!("conjugate mean at 0.2 {conj_sum:.3}, max gap to analytic {conj_gap:.1e} (<0.3)"));
    ensure(worst_mean < 0.5 && ratio >= 3.0 && conj_gap < 0.3, detail.join("; "))
}

fn uniform_location(determinism: &mut Vec<(&'static str, bool)>) -> Outcome {
    let epsilons = [0.0, 0.1, 0.2, 0.3, 0.4];
    let cfg = ExperimentConfig {
        epsilons: epsilons.to_vec(),
        ..ExperimentConfig::defaults(ExperimentKind::UniformLocation)
    };
    let report = run_experiment(&cfg).map_err(|e| e.to_string())?;
    determinism.push(("uniform-location", reproducible(&cfg, &report)?));
    let mut ordered = true;
    let mut pairs = Vec::new();
    for &e in &epsilons {
        let (_, gf) = gf_mean(&report, e, GF_ETLD).ok_or(format!("no successful runs at epsilon {e}"))?;
        let (_, sb) = gf_mean(&report, e, STANDARD_BAYES).unwrap();
        if e >= 0.1 {
            ordered &= gf < sb;
        }
        pairs.push(format!("{e}: {gf:.3} vs {sb:.3}"));
    }
    let (_, gf04) = gf_mean(&report, 0.4, GF_ETLD).unwrap();
    let (_, sb04) = gf_mean(&report, 0.4, STANDARD_BAYES).unwrap();
    ensure(
        ordered && gf04 < 0.5 && sb04 > 1.0,
        format!(
            "RMSE gf_etld vs standard_bayes [{}]; need gf < sb for eps>=0.1, gf(0.4)<0.5, sb(0.4)>1",
            pairs.join(", ")
        ),
    )
}

fn lorenz96(determinism: &mut Vec<(&'static str, bool)>) -> Outcome {
    let cfg = ExperimentConfig::defaults(ExperimentKind::Lorenz96);
    let t = Instant::now();
    let report = run_experiment(&cfg).map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();
    determinism.push(("lorenz96", reproducible(&cfg, &report)?));
    if report.failed_runs() > 0 {
        return Err(format!("{} of {} runs failed", report.failed_runs(), report.runs.len()));
    }
    let limits = [0.2, 0.2, 0.2, 0.4];
    let mut worst = [0.0f64; 4];
    for run in &report.runs {
        let m = run.posterior_mean.as_ref().unwrap();
        for i in 0..4 {
            worst[i] = worst[i].max((m[i] - cfg.true_theta[i]).abs());
        }
    }
    let ok = worst.iter().zip(&limits).all(|(w, l)| w < l);
    ensure(
        ok && secs < 900.0,
        format!(
            "max abs error over 3 runs b0 {:.3}, b1 {:.3}, phi {:.3}, sigma_e {:.3} (limits 0.2/0.2/0.2/0.4); {secs:.0} s; M={} J={} steps={} beta={} gamma={:.2}",
            worst[0],
            worst[1],
            worst[2],
            worst[3],
            cfg.sampler.particles,
            cfg.sampler.simulations,
            cfg.sampler.n_steps,
            cfg.sampler.beta,
            report.runs[0].bandwidth.unwrap_or(f64::NAN)
        ),
    )
}

fn no_jacobian() -> Outcome {
    let cfg = ExperimentConfig::defaults(ExperimentKind::GaussianLocation);
    let model = CountingModel::new(GaussianLocation);
    let data = generate_data(&cfg, &model, 0, 0).unwrap();
    let prior = GaussianPrior::new(cfg.prior_mean.clone(), cfg.prior_var.clone()).unwrap();
    let target = Target {
        model: &model,
        data: &data,
        prior: &prior,
        kernel: KernelSpec::new(1.0).unwrap(),
    };
    for rep in 0..cfg.repetitions {
        let sampler = SamplerConfig {
            seed: cfg.sampler_seed(rep),
            ..cfg.sampler.clone()
        };
        run_chain(&target, &sampler).map_err(|e| e.to_string())?;
    }
    let calls = model.jacobian_calls();
    let sims = model.simulate_calls();

    let l96 = Lorenz96Model::new(Lorenz96Config::default()).unwrap();
    let y = l96.simulate(&[2.0, 0.8, 0.9, 1.7], &draw_latents(&l96, 1, 0, 0)[0]).unwrap();
    let ydata = SampleBatch::from_rows(&[y]).unwrap();
    let lprior = GaussianPrior::new(vec![1.0, 0.0, 0.0, 1.0], vec![2.0, 1.0, 2.0, 1.0]).unwrap();
    let ltarget = Target {
        model: &l96,
        data: &ydata,
        prior: &lprior,
        kernel: KernelSpec::new(30.0).unwrap(),
    };
    let lcfg = SamplerConfig {
        particles: 5,
        simulations: 2,
        ..SamplerConfig::default()
    };
    let ens = gfetld::ensemble::ParticleEnsemble::from_rows(&[
        [1.0, 0.5, 0.1, 1.0],
        [1.2, 0.4, 0.2, 1.1],
        [0.8, 0.6, 0.0, 0.9],
        [1.1, 0.3, 0.3, 1.2],
        [0.9, 0.7, -0.1, 0.8],
    ])
    .unwrap();
    let err = gradient_etld_step(&ltarget, &ens, &lcfg, &StepNoise::draw(&l96, &lcfg, 0, 0), 0);
    let capability = matches!(err, Err(Error::Capability(_)));
    ensure(
        calls == 0 && sims > 0 && capability,
        format!("{calls} Jacobian calls over {sims} simulations; Lorenz96 gradient step capability error: {capability}"),
    )
}

fn rk4_convergence() -> Outcome {
    let cfg = Lorenz96Config::default();
    let y0 = cfg.initial_state().unwrap();
    let zeros = vec![0.0; cfg.state_dim];
    let integrate = |h: f64, n: usize| {
        let mut y = y0.clone();
        for _ in 0..n {
            y = rk4_step(&y, cfg.forcing, &zeros, h);
        }
        y
    };
    let t = cfg.dt;
    let reference = integrate(t / 16.0, 16);
    let err = |y: Vec<f64>| {
        y.iter()
            .zip(&reference)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    let e1 = err(integrate(t, 1));
    let e2 = err(integrate(t / 2.0, 2));
    let ratio = e1 / e2;
    ensure((12.0..=20.0).contains(&ratio), format!("error ratio {ratio:.2} ({e1:.2e} / {e2:.2e})"))
}

fn main() -> ExitCode {
    let mut determinism = Vec::new();
    let mut results: Vec<(u32, &str, Outcome, f64)> = Vec::new();
    let mut run = |n: u32, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let out = f();
        let secs = t.elapsed().as_secs_f64();
        let (tag, detail) = match &out {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {n:2} [{tag}] {name}: {detail} ({secs:.1} s)");
        results.push((n, name, out, secs));
    };
    run(1, "estimator correctness", &mut estimators);
    run(2, "gradient correctness", &mut gradients);
    run(3, "linear exactness", &mut linear_exactness);
    run(4, "affine invariance", &mut affine_invariance);
    run(5, "prior recovery", &mut prior_recovery);
    run(6, "gaussian-location robustness", &mut || gaussian_location(&mut determinism));
    run(7, "uniform-location robustness", &mut || uniform_location(&mut determinism));
    run(8, "lorenz96 recovery", &mut || lorenz96(&mut determinism));
    run(9, "no-jacobian guarantee", &mut no_jacobian);
    run(10, "determinism", &mut || {
        let all = determinism.len() == 3 && determinism.iter().all(|(_, ok)| *ok);
        let list: Vec<String> = determinism.iter().map(|(n, ok)| format!("{n} {ok}")).collect();
        ensure(all, format!("identical reruns: {}", list.join(", ")))
    });
    run(11, "rk4 convergence", &mut rk4_convergence);
    let failed: Vec<u32> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        results.len() - failed.len(),
        failed.len(),
        if failed.is_empty() { String::new() } else { format!(" ({failed:?})") }
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
