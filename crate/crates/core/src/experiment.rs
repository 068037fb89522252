//! Experiment drivers: configuration, repeated runs over contamination levels,
//! baselines and report files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::baselines::{conjugate_gaussian_posterior, grid_posterior_gaussian, grid_posterior_uniform, rmse, GridSpec};
use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};
use crate::kernel::{median_heuristic_bandwidth, KernelSpec, SampleBatch};
use crate::models::{
    contaminate, ContaminationSpec, GaussianLocation, GenerativeModel, Lorenz96Config, Lorenz96Model, UniformLocation,
};
use crate::sampler::{
    draw_latents, initial_ensemble_screened, run_chain_from, GaussianPrior, InitBound, InitScreen, Prior, SamplerConfig, Target,
};
use crate::seed;

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "GFETLD_OUTPUT_DIR";

const SAMPLER: u64 = 0x_5a3b;
const PILOT: u64 = 0x_9170;
const MAX_INIT_DRAWS_PER_PARTICLE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    GaussianLocation,
    UniformLocation,
    Lorenz96,
}

impl ExperimentKind {
    pub fn model_name(self) -> &'static str {
        match self {
            Self::GaussianLocation => "gaussian_location",
            Self::UniformLocation => "uniform_location",
            Self::Lorenz96 => "lorenz96_stochastic",
        }
    }

    pub fn param_labels(self) -> Vec<String> {
        match self {
            Self::Lorenz96 => ["b0", "b1", "phi", "sigma_e"].map(String::from).to_vec(),
            _ => vec!["theta".into()],
        }
    }
}

/// Kernel bandwidth: the median heuristic on the observed data, or a fixed γ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Median,
    Fixed(f64),
}

impl Serialize for Bandwidth {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Self::Median => s.serialize_str("median"),
            Self::Fixed(g) => s.serialize_f64(*g),
        }
    }
}

impl<'de> Deserialize<'de> for Bandwidth {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Name(String),
            Int(i64),
            Value(f64),
        }
        match Raw::deserialize(d)? {
            Raw::Name(s) if s == "median" => Ok(Self::Median),
            Raw::Name(s) => Err(serde::de::Error::custom(format!(
                "bandwidth must be \"median\" or a positive number, got {s:?}"
            ))),
            Raw::Int(v) => Ok(Self::Fixed(v as f64)),
            Raw::Value(v) => Ok(Self::Fixed(v)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub sampler: SamplerConfig,
    /// Contamination levels; every level is run `repetitions` times.
    pub epsilons: Vec<f64>,
    pub outlier_mean: f64,
    pub outlier_sd: f64,
    /// Observations per dataset.
    pub n_obs: usize,
    pub true_theta: Vec<f64>,
    pub prior_mean: Vec<f64>,
    pub prior_var: Vec<f64>,
    pub repetitions: usize,
    /// Master seed; sampler and data seeds derive from it.
    pub seed: u64,
    /// Overrides the data seed alone; the prior draw and dynamics are unaffected.
    pub data_seed: Option<u64>,
    pub bandwidth: Bandwidth,
    pub init: InitScreen,
    pub lorenz96: Lorenz96Config,
    pub grid: GridSpec,
    pub likelihood_floor: f64,
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn defaults(kind: ExperimentKind) -> Self {
        let base = Self {
            experiment: kind,
            sampler: SamplerConfig {
                particles: 10,
                simulations: 20,
                step_size: 1e-3,
                beta: 2000.0,
                n_steps: 12,
                ..SamplerConfig::default()
            },
            epsilons: vec![0.0],
            outlier_mean: 10.0,
            outlier_sd: 1.0,
            n_obs: 150,
            true_theta: vec![0.0],
            prior_mean: vec![2.0],
            prior_var: vec![1.0],
            repetitions: 10,
            seed: 20240,
            data_seed: None,
            bandwidth: Bandwidth::Fixed(1.0),
            init: InitScreen::default(),
            lorenz96: Lorenz96Config::default(),
            grid: GridSpec::default(),
            likelihood_floor: 1e-12,
            output_dir: None,
        };
        match kind {
            ExperimentKind::GaussianLocation => base,
            ExperimentKind::UniformLocation => Self {
                n_obs: 100,
                true_theta: vec![1.0],
                ..base
            },
            ExperimentKind::Lorenz96 => Self {
                sampler: SamplerConfig {
                    particles: 200,
                    simulations: 10,
                    step_size: 1e-3,
                    beta: 300.0,
                    n_steps: 600,
                    ..SamplerConfig::default()
                },
                n_obs: 1,
                true_theta: vec![2.0, 0.8, 0.9, 1.7],
                prior_mean: vec![1.0, 0.0, 0.0, 1.0],
                prior_var: vec![2.0, 1.0, 2.0, 1.0],
                repetitions: 3,
                bandwidth: Bandwidth::Median,
                init: InitScreen {
                    pilots: 20,
                    bounds: vec![InitBound {
                        index: 1,
                        lower: Some(-1.0),
                        upper: None,
                    }],
                },
                lorenz96: Lorenz96Config {
                    rk4_substeps: 4,
                    ..Lorenz96Config::default()
                },
                ..base
            },
        }
    }

    /// Parses flat `key = value` text (dotted keys address nested fields) over
    /// the defaults of the named experiment, then applies `key=value`
    /// overrides in order.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for ov in overrides {
            apply_override(&mut table, ov)?;
        }
        Self::from_table(table)
    }

    /// Reads a config echo from a report or a standalone JSON config.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let value = value.get("config").cloned().unwrap_or(value);
        let cfg: Self = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            let mut cfg = Self::from_json_str(&text)?;
            if !overrides.is_empty() {
                let mut table = toml::Table::try_from(&cfg).map_err(|e| Error::Config(e.to_string()))?;
                for ov in overrides {
                    apply_override(&mut table, ov)?;
                }
                cfg = Self::from_table(table)?;
            }
            return Ok(cfg);
        }
        Self::from_toml_str(&text, overrides)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        let kind = match table.get("experiment") {
            Some(v) => v
                .clone()
                .try_into::<ExperimentKind>()
                .map_err(|e| Error::Config(format!("experiment: {e}")))?,
            None => return Err(Error::Config("missing required key `experiment`".into())),
        };
        let mut merged = toml::Table::try_from(Self::defaults(kind)).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut merged, table);
        let cfg: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(m));
        self.sampler.validate().map_err(|e| Error::Config(format!("sampler: {e}")))?;
        if self.repetitions == 0 {
            return cfg_err("repetitions must be at least 1".into());
        }
        if self.epsilons.is_empty() {
            return cfg_err("epsilons must not be empty".into());
        }
        if let Some(e) = self.epsilons.iter().find(|e| !(0.0..=1.0).contains(*e)) {
            return cfg_err(format!("epsilon {e} outside [0, 1]"));
        }
        if self.n_obs == 0 {
            return cfg_err("n_obs must be at least 1".into());
        }
        let d = match self.experiment {
            ExperimentKind::Lorenz96 => 4,
            _ => 1,
        };
        for (name, v) in [
            ("true_theta", &self.true_theta),
            ("prior_mean", &self.prior_mean),
            ("prior_var", &self.prior_var),
        ] {
            if v.len() != d {
                return cfg_err(format!("{name} needs {d} entries, got {}", v.len()));
            }
        }
        if let Bandwidth::Fixed(g) = self.bandwidth {
            if !(g > 0.0 && g.is_finite()) {
                return cfg_err(format!("bandwidth must be positive, got {g}"));
            }
        }
        if !(self.outlier_sd > 0.0) {
            return cfg_err("outlier_sd must be positive".into());
        }
        if self.experiment == ExperimentKind::Lorenz96 && self.epsilons.iter().any(|e| *e != 0.0) {
            return cfg_err("contamination is only defined for the location experiments".into());
        }
        Ok(())
    }

    fn prior(&self) -> Result<GaussianPrior> {
        GaussianPrior::new(self.prior_mean.clone(), self.prior_var.clone())
    }

    fn build_model(&self) -> Result<Box<dyn GenerativeModel>> {
        Ok(match self.experiment {
            ExperimentKind::GaussianLocation => Box::new(GaussianLocation),
            ExperimentKind::UniformLocation => Box::new(UniformLocation),
            ExperimentKind::Lorenz96 => Box::new(Lorenz96Model::new(self.lorenz96.clone())?),
        })
    }

    fn data_master(&self) -> u64 {
        self.data_seed.unwrap_or_else(|| seed::derive(self.seed, &[seed::DATA]))
    }

    /// Sampler seed for repetition `rep`; shared across contamination levels.
    pub fn sampler_seed(&self, rep: usize) -> u64 {
        seed::derive(self.seed, &[SAMPLER, rep as u64])
    }
}

fn apply_override(table: &mut toml::Table, ov: &str) -> Result<()> {
    let (key, raw) = ov
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {ov:?} is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::Config(format!("empty key in {ov:?}")))?;
    let mut cur = table;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {ov:?}: `{p}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "detail")]
pub enum RunStatus {
    Ok,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub epsilon: f64,
    pub repetition: usize,
    pub sampler_seed: u64,
    pub status: RunStatus,
    pub bandwidth: Option<f64>,
    pub rejected_init_draws: usize,
    pub posterior_mean: Option<Vec<f64>>,
    pub posterior_variance: Option<Vec<f64>>,
    /// Standard-Bayes posterior mean, where a baseline exists.
    pub baseline_mean: Option<Vec<f64>>,
    pub baseline_degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub epsilon: f64,
    pub method: String,
    pub successful_runs: usize,
    /// Posterior mean averaged over successful runs.
    pub posterior_mean: Option<Vec<f64>>,
    pub rmse: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub sampler_seconds: Vec<f64>,
    pub baseline_seconds: Vec<f64>,
    pub data_seconds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub model: String,
    pub param_labels: Vec<String>,
    pub runs: Vec<RunRecord>,
    pub summaries: Vec<MethodSummary>,
    /// Final ensemble of the first successful run at the first contamination level.
    pub final_ensemble: Option<Vec<Vec<f64>>>,
    pub timing: Timing,
}

impl ExperimentReport {
    pub fn failed_runs(&self) -> usize {
        self.runs.iter().filter(|r| r.status != RunStatus::Ok).count()
    }

    pub fn all_failed(&self) -> bool {
        self.failed_runs() == self.runs.len()
    }

    pub fn summary(&self, epsilon: f64, method: &str) -> Option<&MethodSummary> {
        self.summaries
            .iter()
            .find(|s| s.epsilon == epsilon && s.method == method)
    }

    /// Report as JSON with the timing block removed.
    pub fn to_json_without_timing(&self) -> Result<String> {
        let mut v = serde_json::to_value(self).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(o) = v.as_object_mut() {
            o.remove("timing");
        }
        serde_json::to_string_pretty(&v).map_err(|e| Error::Config(e.to_string()))
    }
}

pub const GF_ETLD: &str = "gf_etld";
pub const STANDARD_BAYES: &str = "standard_bayes";

/// Generates the dataset for contamination level `eps_index` and repetition
/// `rep`. The clean part is shared across contamination levels.
pub fn generate_data(cfg: &ExperimentConfig, model: &dyn GenerativeModel, eps_index: usize, rep: usize) -> Result<SampleBatch> {
    let master = cfg.data_master();
    let mut rng = seed::stream(master, &[rep as u64]);
    let rows: Vec<Vec<f64>> = (0..cfg.n_obs)
        .map(|_| {
            let u = model.sample_latent(&mut rng);
            model.simulate(&cfg.true_theta, &u)
        })
        .collect::<Result<_>>()?;
    let clean = SampleBatch::from_rows(&rows)?;
    let eps = cfg.epsilons[eps_index];
    if eps == 0.0 {
        return Ok(clean);
    }
    let spec = ContaminationSpec::new(eps, cfg.outlier_mean, cfg.outlier_sd)?;
    let mut crng = seed::stream(master, &[seed::CONTAMINATION, rep as u64, eps_index as u64]);
    contaminate(&clean, &spec, &mut crng)
}

/// Resolves the kernel for one dataset. With a single observation the median
/// heuristic pools the data with simulations at the prior mean.
pub fn resolve_kernel(
    cfg: &ExperimentConfig,
    model: &dyn GenerativeModel,
    data: &SampleBatch,
    sampler_seed: u64,
) -> Result<KernelSpec> {
    match cfg.bandwidth {
        Bandwidth::Fixed(g) => KernelSpec::new(g),
        Bandwidth::Median if data.rows() >= 2 => median_heuristic_bandwidth(data),
        Bandwidth::Median => {
            let mut rows: Vec<Vec<f64>> = data.iter_rows().map(<[f64]>::to_vec).collect();
            let mut rng = seed::stream(sampler_seed, &[PILOT]);
            for _ in 0..cfg.sampler.simulations.max(2) {
                let u = model.sample_latent(&mut rng as &mut dyn RngCore);
                rows.push(model.simulate(&cfg.prior_mean, &u)?);
            }
            median_heuristic_bandwidth(&SampleBatch::from_rows(&rows)?)
        }
    }
}

fn baseline_mean(cfg: &ExperimentConfig, data: &SampleBatch, prior: &GaussianPrior) -> Result<Option<(f64, bool)>> {
    let ys = data.values();
    match cfg.experiment {
        ExperimentKind::GaussianLocation => {
            let (m, _) = conjugate_gaussian_posterior(cfg.prior_mean[0], cfg.prior_var[0], ys, 1.0)?;
            Ok(Some((m, false)))
        }
        ExperimentKind::UniformLocation => {
            let g = grid_posterior_uniform(ys, prior, 1.0, &cfg.grid, cfg.likelihood_floor)?;
            Ok(Some((g.mean(), g.degenerate)))
        }
        ExperimentKind::Lorenz96 => Ok(None),
    }
}

struct RunOutcome {
    record: RunRecord,
    ensemble: Option<ParticleEnsemble>,
    sampler_seconds: f64,
    baseline_seconds: f64,
    data_seconds: f64,
}

fn run_one(
    cfg: &ExperimentConfig,
    model: &dyn GenerativeModel,
    prior: &GaussianPrior,
    eps_index: usize,
    rep: usize,
) -> RunOutcome {
    let sampler_seed = cfg.sampler_seed(rep);
    let mut record = RunRecord {
        epsilon: cfg.epsilons[eps_index],
        repetition: rep,
        sampler_seed,
        status: RunStatus::Ok,
        bandwidth: None,
        rejected_init_draws: 0,
        posterior_mean: None,
        posterior_variance: None,
        baseline_mean: None,
        baseline_degenerate: false,
    };
    let mut out = RunOutcome {
        record: record.clone(),
        ensemble: None,
        sampler_seconds: 0.0,
        baseline_seconds: 0.0,
        data_seconds: 0.0,
    };

    let t = Instant::now();
    let data = generate_data(cfg, model, eps_index, rep);
    out.data_seconds = t.elapsed().as_secs_f64();
    let data = match data {
        Ok(d) => d,
        Err(e) => {
            record.status = RunStatus::Failed(format!("data generation: {e}"));
            out.record = record;
            return out;
        }
    };

    let t = Instant::now();
    match baseline_mean(cfg, &data, prior) {
        Ok(Some((m, degenerate))) => {
            record.baseline_mean = Some(vec![m]);
            record.baseline_degenerate = degenerate;
        }
        Ok(None) => {}
        Err(e) => record.status = RunStatus::Failed(format!("baseline: {e}")),
    }
    out.baseline_seconds = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let chain = (|| {
        let kernel = resolve_kernel(cfg, model, &data, sampler_seed)?;
        record.bandwidth = Some(kernel.bandwidth());
        let sampler = SamplerConfig {
            seed: sampler_seed,
            ..cfg.sampler.clone()
        };
        let max_draws = MAX_INIT_DRAWS_PER_PARTICLE * sampler.particles;
        let (init, rejected) = initial_ensemble_screened(prior, model, sampler.particles, sampler_seed, &cfg.init, max_draws)?;
        record.rejected_init_draws = rejected;
        let target = Target {
            model,
            data: &data,
            prior,
            kernel,
        };
        run_chain_from(&target, &sampler, init)
    })();
    out.sampler_seconds = t.elapsed().as_secs_f64();
    match chain {
        Ok(res) => {
            record.posterior_mean = Some(res.posterior_mean.iter().copied().collect());
            record.posterior_variance = Some(res.posterior_covariance.diagonal().iter().copied().collect());
            out.ensemble = Some(res.final_ensemble);
        }
        Err(e) => record.status = RunStatus::Failed(e.to_string()),
    }
    out.record = record;
    out
}

fn summarize(cfg: &ExperimentConfig, runs: &[RunRecord], d: usize) -> Result<Vec<MethodSummary>> {
    let mut out = Vec::new();
    for &eps in &cfg.epsilons {
        let at_eps: Vec<&RunRecord> = runs.iter().filter(|r| r.epsilon == eps).collect();
        let mut methods: Vec<(&str, Vec<Vec<f64>>)> = vec![(
            GF_ETLD,
            at_eps
                .iter()
                .filter(|r| r.status == RunStatus::Ok)
                .filter_map(|r| r.posterior_mean.clone())
                .collect(),
        )];
        if cfg.experiment != ExperimentKind::Lorenz96 {
            methods.push((STANDARD_BAYES, at_eps.iter().filter_map(|r| r.baseline_mean.clone()).collect()));
        }
        for (method, means) in methods {
            let (posterior_mean, err) = if means.is_empty() {
                (None, None)
            } else {
                let n = means.len() as f64;
                let avg = (0..d).map(|i| means.iter().map(|m| m[i]).sum::<f64>() / n).collect();
                (Some(avg), Some(rmse(&means, &cfg.true_theta)?))
            };
            out.push(MethodSummary {
                epsilon: eps,
                method: method.to_string(),
                successful_runs: means.len(),
                posterior_mean,
                rmse: err,
            });
        }
    }
    Ok(out)
}

/// Runs every (contamination level, repetition) pair. A run that fails is
/// recorded as failed and the others continue.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let model = cfg.build_model()?;
    let prior = cfg.prior()?;
    let d = prior.dim();

    let mut runs = Vec::new();
    let mut timing = Timing::default();
    let mut final_ensemble = None;
    for eps_index in 0..cfg.epsilons.len() {
        for rep in 0..cfg.repetitions {
            let o = run_one(cfg, model.as_ref(), &prior, eps_index, rep);
            timing.sampler_seconds.push(o.sampler_seconds);
            timing.baseline_seconds.push(o.baseline_seconds);
            timing.data_seconds.push(o.data_seconds);
            if final_ensemble.is_none() && eps_index == 0 {
                final_ensemble = o
                    .ensemble
                    .map(|e| (0..e.len()).map(|m| e.particle_vec(m)).collect::<Vec<_>>());
            }
            runs.push(o.record);
        }
    }
    let summaries = summarize(cfg, &runs, d)?;
    Ok(ExperimentReport {
        config: cfg.clone(),
        model: cfg.experiment.model_name().to_string(),
        param_labels: cfg.experiment.param_labels(),
        runs,
        summaries,
        final_ensemble,
        timing,
    })
}

/// Formats a real with 17 significant digits.
pub fn fmt_real(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Writes `ensemble_final.csv`, `rmse.csv`, `sweep.csv` (more than one
/// contamination level only), `report.json` and `timing.csv`.
pub fn emit_outputs(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let d = report.param_labels.len();

    let mut s = (1..=d).map(|i| format!("theta_{i}")).collect::<Vec<_>>().join(",");
    s.push('\n');
    for row in report.final_ensemble.iter().flatten() {
        s.push_str(&row.iter().map(|v| fmt_real(*v)).collect::<Vec<_>>().join(","));
        s.push('\n');
    }
    written.push(write_file(dir, "ensemble_final.csv", &s)?);

    let mut s = String::from("param,rmse\n");
    let first = report.config.epsilons[0];
    let rm = report.summary(first, GF_ETLD).and_then(|m| m.rmse.clone());
    for (i, label) in report.param_labels.iter().enumerate() {
        let v = rm.as_ref().map_or_else(|| "NaN".to_string(), |r| fmt_real(r[i]));
        let _ = writeln!(s, "{label},{v}");
    }
    written.push(write_file(dir, "rmse.csv", &s)?);

    if report.config.epsilons.len() > 1 {
        let mut s = String::from("epsilon,method,posterior_mean,rmse\n");
        for m in &report.summaries {
            for i in 0..d {
                let method = if d == 1 {
                    m.method.clone()
                } else {
                    format!("{}:{}", m.method, report.param_labels[i])
                };
                let mean = m.posterior_mean.as_ref().map_or_else(|| "NaN".into(), |v| fmt_real(v[i]));
                let err = m.rmse.as_ref().map_or_else(|| "NaN".into(), |v| fmt_real(v[i]));
                let _ = writeln!(s, "{},{method},{mean},{err}", fmt_real(m.epsilon));
            }
        }
        written.push(write_file(dir, "sweep.csv", &s)?);
    }

    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Config(e.to_string()))?;
    written.push(write_file(dir, "report.json", &(json + "\n"))?);

    let particles = report.config.sampler.particles;
    let runs = report.runs.len().max(1);
    let mut s = String::from("method,seconds_total,seconds_per_sample\n");
    for (method, secs) in [
        (GF_ETLD, &report.timing.sampler_seconds),
        (STANDARD_BAYES, &report.timing.baseline_seconds),
        ("data_generation", &report.timing.data_seconds),
    ] {
        if method == STANDARD_BAYES && report.config.experiment == ExperimentKind::Lorenz96 {
            continue;
        }
        let total: f64 = secs.iter().sum();
        let per = if method == GF_ETLD {
            total / (runs * particles) as f64
        } else {
            total / runs as f64
        };
        let _ = writeln!(s, "{method},{},{}", fmt_real(total), fmt_real(per));
    }
    written.push(write_file(dir, "timing.csv", &s)?);
    Ok(written)
}

/// Output directory: the configured one, else `$GFETLD_OUTPUT_DIR`, else `./gfetld-out`.
pub fn output_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir
        .clone()
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("gfetld-out"))
}

/// Reads a numeric CSV of samples, one row per sample. A first row that does
/// not parse as numbers is treated as a header.
pub fn read_samples_csv(path: &Path) -> Result<SampleBatch> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if i == 0 => continue,
            Err(e) => {
                return Err(Error::invalid(format!(
                    "{}: row {}: {e}",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::DegenerateData(format!("{} holds no samples", path.display())));
    }
    SampleBatch::from_rows(&rows)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::invalid(format!("{}: {other:?}", path.display())),
    }
}

/// Latent bundles for a frozen-latent estimate at repetition 0.
pub fn estimate_latents(cfg: &ExperimentConfig, model: &dyn GenerativeModel) -> Vec<Vec<f64>> {
    draw_latents(model, cfg.sampler.simulations, cfg.sampler_seed(0), 0)
}

pub fn model_for(cfg: &ExperimentConfig) -> Result<Box<dyn GenerativeModel>> {
    cfg.build_model()
}

/// Standard-Bayes grid posterior for the Gaussian model, for cross-checks.
pub fn gaussian_grid_mean(cfg: &ExperimentConfig, data: &SampleBatch) -> Result<f64> {
    Ok(grid_posterior_gaussian(data.values(), &cfg.prior()?, 1.0, &cfg.grid)?.mean())
}
