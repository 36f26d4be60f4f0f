//! Multi-trial experiments and parameter sweeps built from a configuration.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::index;
use rayon::prelude::*;
use serde::Serialize;

use crate::baselines::BaselineKind;
use crate::checkpoint::write_checkpoint;
use crate::config::{
    AggregationKind, EventsConfig, ExperimentConfig, LoadedConfig, MethodName, NoiseConfig, ProblemConfig,
    ScheduleConfig, ServerRate, Weighting,
};
use crate::data::{
    absdev_suite, dirichlet_partition, load_idx, synthetic_quadratic_suite, Dataset, Partition, Split,
    DATA_DIR_ENV, MNIST_TEST_IMAGES, MNIST_TEST_LABELS, MNIST_TRAIN_IMAGES, MNIST_TRAIN_LABELS,
};
use crate::error::{AreaError, Result};
use crate::math::{LogReg, ModelVector, NoiseModel, Objective, ProblemConstants};
use crate::metrics::{summarize, write_metrics_csv, MetricsRow, Rho, Summary};
use crate::protocol::{AggregationCriterion, DivergenceGuard};
use crate::rng::{stream, trial_seed};
use crate::scheduler::EventModel;
use crate::schedules::{optimal_lambda_s, theorem1_d, ConvexRateInputs, StepSchedule};
use crate::trial::{run_trial, MetricCadence, Method, Problem, StopRule, TrialOutcome, TrialSpec};

/// Default location of the MNIST files relative to the working directory.
pub const DEFAULT_DATA_DIR: &str = "data/mnist";

/// Config value, then `AREA_DATA_DIR`, then [`DEFAULT_DATA_DIR`].
pub fn resolve_data_dir(configured: Option<&Path>) -> PathBuf {
    configured
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR))
}

/// A label-skewed logistic regression problem on MNIST.
#[derive(Clone, Debug, PartialEq)]
pub struct MnistSetup {
    pub data_dir: PathBuf,
    pub clients: usize,
    pub dirichlet: f64,
    pub ridge: f64,
    pub train_samples: Option<usize>,
    pub test_samples: Option<usize>,
    pub weighting: Weighting,
}

pub struct MnistProblem {
    pub problem: Problem,
    pub partition: Partition,
}

pub fn load_mnist(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train = load_idx(&dir.join(MNIST_TRAIN_IMAGES), &dir.join(MNIST_TRAIN_LABELS), Split::Train)?;
    let test = load_idx(&dir.join(MNIST_TEST_IMAGES), &dir.join(MNIST_TEST_LABELS), Split::Test)?;
    Ok((train, test))
}

/// Builds the problem from already loaded splits. The training subset and
/// the partition are drawn from streams keyed on `seed`.
pub fn mnist_problem_from(setup: &MnistSetup, train: &Dataset, test: &Dataset, seed: u64) -> Result<MnistProblem> {
    let classes = train.classes().max(test.classes());
    let train = match setup.train_samples {
        Some(s) if s < train.len() => {
            let mut rows = index::sample(&mut stream(seed, "train-subset", &[]), train.len(), s).into_vec();
            rows.sort_unstable();
            train.select(&rows)?
        }
        _ => train.clone(),
    };
    let test = match setup.test_samples {
        Some(s) => test.head(s)?,
        None => test.clone(),
    };
    let train = Arc::new(train.with_classes(classes)?);
    let test = Arc::new(test.with_classes(classes)?);
    let partition = dirichlet_partition(
        train.labels(),
        classes,
        setup.dirichlet,
        setup.clients,
        &mut stream(seed, "partition", &[]),
    )?;
    let objectives: Vec<Objective> = (0..setup.clients)
        .map(|i| Objective::LogReg(LogReg::new(train.clone(), partition.client_samples(i).to_vec(), setup.ridge)))
        .collect();
    let dim = classes * train.feature_dim();
    // Softmax cross-entropy has Hessian norm at most ½‖a‖² per sample.
    let constants = ProblemConstants {
        mu: setup.ridge,
        lipschitz_l: setup.ridge + 0.5 * train.max_feature_norm_sq(),
        lipschitz_b: f64::INFINITY,
        sigma: f64::NAN,
        zeta: f64::NAN,
        x_star: None,
        u_stars: None,
        f_star: None,
    };
    let problem = Problem::new(objectives, constants, ModelVector::zeros(dim))?;
    let problem = match setup.weighting {
        Weighting::Sample => problem.with_sample_weights()?,
        Weighting::Uniform => problem,
    };
    Ok(MnistProblem {
        problem: problem.with_test_set(test),
        partition,
    })
}

pub fn mnist_problem(setup: &MnistSetup, seed: u64) -> Result<MnistProblem> {
    let (train, test) = load_mnist(&setup.data_dir)?;
    mnist_problem_from(setup, &train, &test, seed)
}

/// The problem a configuration describes. Random suites and partitions are
/// drawn from streams keyed on the experiment seed, so every trial shares them.
pub fn build_problem(cfg: &ExperimentConfig) -> Result<Problem> {
    match &cfg.problem {
        ProblemConfig::Quadratic {
            clients,
            dim,
            mu,
            lipschitz_l,
            zeta,
            x0,
        } => {
            let suite = synthetic_quadratic_suite(
                *clients,
                *dim,
                mu.uniform("mu")?,
                lipschitz_l.uniform("lipschitz_l")?,
                *zeta,
                &mut stream(cfg.seed, "suite", &[]),
            )?;
            let x0 = x0.clone().map_or_else(|| ModelVector::zeros(*dim), ModelVector::from_vec);
            Problem::new(suite.objectives, suite.constants, x0)
        }
        ProblemConfig::Absdev { centers, x0 } => {
            let suite = absdev_suite(centers)?;
            Problem::new(suite.objectives, suite.constants, ModelVector::from_vec(vec![x0.unwrap_or(0.0)]))
        }
        ProblemConfig::Mnist {
            data_dir,
            clients,
            dirichlet,
            ridge,
            train_samples,
            test_samples,
            weighting,
        } => {
            let setup = MnistSetup {
                data_dir: resolve_data_dir(data_dir.as_deref()),
                clients: *clients,
                dirichlet: *dirichlet,
                ridge: *ridge,
                train_samples: *train_samples,
                test_samples: *test_samples,
                weighting: *weighting,
            };
            Ok(mnist_problem(&setup, cfg.seed)?.problem)
        }
    }
}

pub fn event_model(cfg: &ExperimentConfig) -> Result<EventModel> {
    let n = cfg.problem.clients();
    let model = match &cfg.events {
        EventsConfig::Poisson { lambda, rate, lambda_s } => {
            let lambda = match (lambda, rate) {
                (Some(l), _) => l.clone(),
                (None, Some(r)) => vec![*r; n],
                (None, None) => return Err(AreaError::config("poisson events need lambda or rate")),
            };
            let lambda_s = match lambda_s {
                ServerRate::Value(v) => *v,
                ServerRate::Named(_) => optimal_lambda_s(&lambda)?,
            };
            EventModel::PoissonRates { lambda, lambda_s }
        }
        EventsConfig::Stationary { p, p_s } => match (p, p_s) {
            (Some(p), Some(p_s)) => EventModel::StationaryIid { p: p.clone(), p_s: *p_s },
            _ => EventModel::StationaryIid {
                p: vec![1.0 / (n + 1) as f64; n],
                p_s: 1.0 / (n + 1) as f64,
            },
        },
        EventsConfig::RoundRobin => EventModel::round_robin(n),
    };
    model.validate()?;
    Ok(model)
}

pub fn method(cfg: &ExperimentConfig) -> Result<Method> {
    let agg = &cfg.aggregation;
    Ok(match cfg.method {
        MethodName::Area => Method::Area {
            criterion: match agg.kind {
                AggregationKind::Buffered => AggregationCriterion::Buffered { delta: agg.delta },
                AggregationKind::PoissonServer => AggregationCriterion::PoissonServer,
                AggregationKind::Periodic => AggregationCriterion::Periodic {
                    period: agg
                        .period
                        .ok_or_else(|| AreaError::config("periodic aggregation needs a period"))?,
                },
            },
        },
        MethodName::SFedavg => Method::Baseline(BaselineKind::SyncFedAvg {
            sample_count: agg.sample_count,
        }),
        MethodName::AsFedavg => Method::Baseline(BaselineKind::AsyncFedAvg { delta: agg.delta }),
        MethodName::Fedbuff => Method::Baseline(BaselineKind::FedBuff {
            delta: agg.delta,
            server_lr: agg.server_lr,
        }),
    })
}

pub fn noise_model(cfg: &ExperimentConfig) -> NoiseModel {
    match cfg.noise {
        NoiseConfig::None => NoiseModel::None,
        NoiseConfig::Gaussian { sigma } => NoiseModel::AdditiveGaussian { sigma },
        NoiseConfig::Minibatch { batch_size } => NoiseModel::MiniBatch { batch_size },
    }
}

pub fn step_schedule(cfg: &ExperimentConfig, problem: &Problem, events: &EventModel) -> Result<StepSchedule> {
    let c = &problem.constants;
    let m = cfg.run.local_steps;
    Ok(match cfg.schedule {
        ScheduleConfig::Constant { alpha } => StepSchedule::Constant { alpha },
        ScheduleConfig::InverseK { c0 } => StepSchedule::InverseK { c0 },
        ScheduleConfig::Theorem1 => {
            if !(c.mu > 0.0 && c.lipschitz_l.is_finite()) {
                return Err(AreaError::config("theorem1 schedule needs finite mu > 0 and L"));
            }
            StepSchedule::theorem_one(c.mu, c.lipschitz_l, m, events.p_min())
        }
        ScheduleConfig::Theorem2 => {
            let x_star = c
                .x_star
                .as_ref()
                .ok_or_else(|| AreaError::config("theorem2 schedule needs a known minimizer"))?;
            let sigma = noise_model(cfg)
                .sigma()
                .ok_or_else(|| AreaError::config("theorem2 schedule needs a known noise level"))?;
            let horizon = cfg
                .run
                .iterations
                .ok_or_else(|| AreaError::config("theorem2 schedule needs an iteration budget"))?;
            let (_, p_s) = events.probabilities();
            StepSchedule::ConstantTheoremTwo {
                alpha: ConvexRateInputs {
                    horizon,
                    p_s,
                    q_bar: events.q_bar(),
                    sigma,
                    lipschitz_b: c.lipschitz_b,
                    local_steps: m,
                    dist0_sq: problem.x0.dist_sq(x_star),
                }
                .alpha(),
            }
        }
    })
}

pub fn trial_spec(cfg: &ExperimentConfig, problem: &Problem) -> Result<TrialSpec> {
    let events = event_model(cfg)?;
    let spec = TrialSpec {
        method: method(cfg)?,
        schedule: step_schedule(cfg, problem, &events)?,
        events,
        noise: noise_model(cfg),
        local_steps: cfg.run.local_steps,
        stop: match (cfg.run.iterations, cfg.run.horizon) {
            (Some(k), _) => StopRule::Iterations(k),
            (None, Some(t)) => StopRule::Horizon(t),
            (None, None) => return Err(AreaError::config("run needs iterations or horizon")),
        },
        cadence: MetricCadence {
            every: cfg.run.metric_every,
            on_aggregation: cfg.run.metric_on_aggregation,
        },
        guard: DivergenceGuard {
            max_norm: cfg.run.divergence_norm.unwrap_or(f64::INFINITY),
        },
        record_log: cfg.run.record_events,
    };
    spec.validate(problem)?;
    Ok(spec)
}

/// Derived constants of a configured problem and event model.
#[derive(Clone, Debug, Serialize)]
pub struct ConstantsReport {
    pub clients: usize,
    pub dim: usize,
    pub mu: f64,
    pub lipschitz_l: f64,
    /// `2μL/(μ+L)`
    pub gamma: f64,
    /// Step-size cap of the decreasing schedule; absent without strong convexity.
    pub d: Option<f64>,
    pub p_min: f64,
    pub p_s: f64,
    pub q_bar: f64,
    /// Closed-form server rate; only for Poisson events.
    pub lambda_s_star: Option<f64>,
    pub alpha_0: f64,
}

pub fn constants_report(cfg: &ExperimentConfig, problem: &Problem) -> Result<ConstantsReport> {
    let events = event_model(cfg)?;
    let schedule = step_schedule(cfg, problem, &events)?;
    let c = &problem.constants;
    let strongly_convex = c.mu > 0.0 && c.lipschitz_l.is_finite();
    Ok(ConstantsReport {
        clients: problem.client_count(),
        dim: problem.dim(),
        mu: c.mu,
        lipschitz_l: c.lipschitz_l,
        gamma: c.gamma(),
        d: strongly_convex.then(|| theorem1_d(c.mu, c.lipschitz_l, cfg.run.local_steps)),
        p_min: events.p_min(),
        p_s: events.probabilities().1,
        q_bar: events.q_bar(),
        lambda_s_star: match &events {
            EventModel::PoissonRates { lambda, .. } => Some(optimal_lambda_s(lambda)?),
            _ => None,
        },
        alpha_0: schedule.alpha(0),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct TrialReport {
    pub trial: usize,
    pub seed: u64,
    pub diverged: bool,
    pub iterations: u64,
    pub client_messages: u64,
    pub aggregations: u64,
    pub wall_time: f64,
    pub final_row: Option<MetricsRow>,
    pub rho: Rho,
}

/// One row of `summary.csv`.
#[derive(Clone, Debug, Serialize)]
pub struct SummaryRow {
    pub method: String,
    pub alpha: Option<f64>,
    pub rho: String,
    pub acc_mean: f64,
    pub acc_min: f64,
    pub acc_max: f64,
    pub loss_mean: f64,
    pub loss_min: f64,
    pub loss_max: f64,
}

impl SummaryRow {
    fn new(method: &str, alpha: Option<f64>, s: &Summary) -> Self {
        Self {
            method: method.to_owned(),
            alpha,
            // No test set, no time-to-accuracy.
            rho: if s.acc.mean.is_nan() { String::new() } else { s.rho.to_string() },
            acc_mean: s.acc.mean,
            acc_min: s.acc.min,
            acc_max: s.acc.max,
            loss_mean: s.loss.mean,
            loss_min: s.loss.min,
            loss_max: s.loss.max,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentReport {
    pub method: String,
    pub alpha: Option<f64>,
    /// The configuration text exactly as given.
    pub config: String,
    /// Sweep values applied on top of `config`.
    pub overrides: BTreeMap<String, String>,
    pub seed: u64,
    /// Time at which the summary is taken: `t_h`, or the longest trial's
    /// wall time for iteration-bounded runs.
    pub horizon: f64,
    pub constants: ConstantsReport,
    pub trials: Vec<TrialReport>,
    pub summary: Option<Summary>,
    #[serde(skip)]
    pub outcomes: Vec<TrialOutcome>,
}

impl ExperimentReport {
    pub fn summary_row(&self) -> Option<SummaryRow> {
        self.summary.as_ref().map(|s| SummaryRow::new(&self.method, self.alpha, s))
    }

    pub fn any_diverged(&self) -> bool {
        self.trials.iter().any(|t| t.diverged)
    }

    /// Writes `config.toml`, `metrics.csv`, `summary.csv`, `report.json`,
    /// one checkpoint per trial and, when recorded, the event sequences.
    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| AreaError::io(dir, e))?;
        let path = dir.join("config.toml");
        fs::write(&path, &self.config).map_err(|e| AreaError::io(&path, e))?;
        write_metrics_csv(
            create(&dir.join("metrics.csv"))?,
            self.outcomes.iter().enumerate().map(|(i, o)| (i, &o.series)),
        )?;
        write_summary_csv(create(&dir.join("summary.csv"))?, self.summary_row().iter())?;
        let path = dir.join("report.json");
        let mut out = create(&path)?;
        serde_json::to_writer_pretty(&mut out, self)?;
        out.write_all(b"\n").map_err(|e| AreaError::io(&path, e))?;
        out.flush().map_err(|e| AreaError::io(&path, e))?;
        let ckpt = dir.join("checkpoints");
        fs::create_dir_all(&ckpt).map_err(|e| AreaError::io(&ckpt, e))?;
        for (i, o) in self.outcomes.iter().enumerate() {
            write_checkpoint(&ckpt.join(format!("trial-{i:03}.bin")), &o.final_model)?;
            if !o.log.is_empty() {
                o.log.write_csv(create(&dir.join(format!("events-{i:03}.csv")))?)?;
            }
        }
        Ok(())
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| AreaError::io(path, e))
}

pub fn write_summary_csv<'a, W: Write>(out: W, rows: impl IntoIterator<Item = &'a SummaryRow>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record([
        "method", "alpha", "rho", "acc_mean", "acc_min", "acc_max", "loss_mean", "loss_min", "loss_max",
    ])?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| AreaError::io("<summary>", e))?;
    Ok(())
}

/// Runs every trial of `cfg` on `problem`, in parallel, reporting in trial order.
pub fn run_experiment_on(
    problem: &Problem,
    cfg: &ExperimentConfig,
    config_text: &str,
    overrides: BTreeMap<String, String>,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    let spec = trial_spec(cfg, problem)?;
    let constants = constants_report(cfg, problem)?;
    let seeds: Vec<u64> = (0..cfg.trials).map(|i| trial_seed(cfg.seed, i)).collect();
    let outcomes: Vec<TrialOutcome> = seeds
        .par_iter()
        .map(|&seed| run_trial(problem, &spec, seed))
        .collect::<Result<_>>()?;
    let horizon = match spec.stop {
        StopRule::Horizon(t) => t,
        StopRule::Iterations(_) => outcomes.iter().map(|o| o.wall_time).fold(0.0, f64::max),
    };
    let target = cfg.run.target_accuracy;
    let trials = outcomes
        .iter()
        .zip(&seeds)
        .enumerate()
        .map(|(trial, (o, &seed))| TrialReport {
            trial,
            seed,
            diverged: o.diverged,
            iterations: o.iterations,
            client_messages: o.client_messages,
            aggregations: o.aggregations,
            wall_time: o.wall_time,
            final_row: o.series.at_time(horizon).copied(),
            rho: crate::metrics::compute_rho(&o.series, target, horizon),
        })
        .collect();
    let series: Vec<_> = outcomes.iter().map(|o| &o.series).collect();
    Ok(ExperimentReport {
        method: cfg.method.as_str().to_owned(),
        alpha: cfg.constant_alpha(),
        config: config_text.to_owned(),
        overrides,
        seed: cfg.seed,
        horizon,
        constants,
        trials,
        summary: summarize(&series, horizon, target),
        outcomes,
    })
}

pub fn run_experiment(loaded: &LoadedConfig) -> Result<ExperimentReport> {
    let problem = build_problem(&loaded.config)?;
    run_experiment_on(&problem, &loaded.config, &loaded.text, BTreeMap::new())
}

/// One axis of a sweep: a config key and the values it takes.
#[derive(Clone, Debug, PartialEq)]
pub struct GridAxis {
    pub key: String,
    pub values: Vec<String>,
}

const GRID_KEYS: [&str; 5] = ["alpha", "method", "delta", "local_steps", "server_lr"];

/// Parses `key=v1,v2,...` or, for numeric keys, `key=lo:hi:logN` (N values
/// log-spaced from lo to hi inclusive).
pub fn parse_grid(spec: &str) -> Result<GridAxis> {
    let (key, rest) = spec
        .split_once('=')
        .ok_or_else(|| AreaError::config(format!("grid '{spec}' is not key=values")))?;
    let key = key.trim();
    if !GRID_KEYS.contains(&key) {
        return Err(AreaError::config(format!(
            "cannot sweep '{key}', expected one of {}",
            GRID_KEYS.join(", ")
        )));
    }
    let values: Vec<String> = if let Some((lo, tail)) = rest.split_once(':') {
        let (hi, count) = tail
            .split_once(':')
            .ok_or_else(|| AreaError::config(format!("range '{rest}' is not lo:hi:logN")))?;
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| AreaError::config(format!("'{s}' is not a number")))
        };
        let (lo, hi) = (num(lo)?, num(hi)?);
        let count: usize = count
            .trim()
            .strip_prefix("log")
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| AreaError::config(format!("'{count}' is not logN")))?;
        if !(lo > 0.0 && hi >= lo && count >= 1) || (count == 1 && hi != lo) {
            return Err(AreaError::config("log range needs 0 < lo <= hi and at least one point"));
        }
        log_space(lo, hi, count).into_iter().map(|v| v.to_string()).collect()
    } else {
        rest.split(',').map(|v| v.trim().to_owned()).filter(|v| !v.is_empty()).collect()
    };
    if values.is_empty() {
        return Err(AreaError::config(format!("grid '{spec}' has no values")));
    }
    Ok(GridAxis {
        key: key.to_owned(),
        values,
    })
}

/// `count` points log-spaced over `[lo, hi]`, rounded to 11 significant
/// digits so that decade grids hit exact decimal values.
pub fn log_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..count)
        .map(|i| {
            let v = 10f64.powf(a + (b - a) * i as f64 / (count - 1) as f64);
            format!("{v:.10e}").parse().expect("formatted float")
        })
        .collect()
}

fn apply(cfg: &mut ExperimentConfig, key: &str, value: &str) -> Result<()> {
    let bad = || AreaError::config(format!("bad value '{value}' for {key}"));
    match key {
        "alpha" => cfg.schedule = ScheduleConfig::Constant { alpha: value.parse().map_err(|_| bad())? },
        "method" => cfg.method = MethodName::parse(value)?,
        "delta" => cfg.aggregation.delta = value.parse().map_err(|_| bad())?,
        "local_steps" => cfg.run.local_steps = value.parse().map_err(|_| bad())?,
        "server_lr" => cfg.aggregation.server_lr = value.parse().map_err(|_| bad())?,
        _ => return Err(AreaError::config(format!("cannot sweep '{key}'"))),
    }
    Ok(())
}

/// A configuration of a sweep, with the values that produced it.
#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub label: String,
    pub overrides: BTreeMap<String, String>,
    pub config: ExperimentConfig,
}

/// Cartesian product of the axes applied to `base`, first axis slowest.
pub fn expand_grid(base: &ExperimentConfig, axes: &[GridAxis]) -> Result<Vec<SweepPoint>> {
    let mut points = vec![SweepPoint {
        label: String::new(),
        overrides: BTreeMap::new(),
        config: base.clone(),
    }];
    for axis in axes {
        let mut next = Vec::with_capacity(points.len() * axis.values.len());
        for p in &points {
            for v in &axis.values {
                let mut q = p.clone();
                apply(&mut q.config, &axis.key, v)?;
                if !q.label.is_empty() {
                    q.label.push('_');
                }
                q.label.push_str(&format!("{}-{v}", axis.key));
                q.overrides.insert(axis.key.clone(), v.clone());
                next.push(q);
            }
        }
        points = next;
    }
    for p in &points {
        p.config.validate()?;
    }
    Ok(points)
}

/// Runs every grid point (sharing one problem), writing each into its own
/// subdirectory of `out` plus a combined `summary.csv`.
pub fn run_sweep(loaded: &LoadedConfig, axes: &[GridAxis], out: Option<&Path>) -> Result<Vec<ExperimentReport>> {
    let points = expand_grid(&loaded.config, axes)?;
    let problem = build_problem(&loaded.config)?;
    let mut reports = Vec::with_capacity(points.len());
    for p in points {
        log::info!("sweep point {}", p.label);
        let report = run_experiment_on(&problem, &p.config, &loaded.text, p.overrides)?;
        if let Some(dir) = out {
            report.write_outputs(&dir.join(&p.label))?;
        }
        reports.push(report);
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| AreaError::io(dir, e))?;
        let rows: Vec<SummaryRow> = reports.iter().filter_map(|r| r.summary_row()).collect();
        write_summary_csv(create(&dir.join("summary.csv"))?, &rows)?;
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    const QUAD: &str = r#"
config_version = 1
method = "area"
trials = 3
seed = 11

[problem]
kind = "quadratic"
clients = 4
dim = 3
mu = 1.0
lipschitz_l = 5.0
zeta = 1.0

[events]
kind = "poisson"
rate = 2.0

[aggregation]
kind = "poisson-server"

[schedule]
kind = "theorem1"

[noise]
kind = "gaussian"
sigma = 0.1

[run]
horizon = 20.0
metric_every = 10
"#;

    #[test]
    fn log_grid_hits_decades() {
        assert_eq!(log_space(1e-2, 1e4, 7), vec![1e-2, 1e-1, 1.0, 10.0, 100.0, 1e3, 1e4]);
        let axis = parse_grid("alpha=1e-2:1e4:log7").unwrap();
        assert_eq!(axis.values.len(), 7);
        assert_eq!(axis.values[0], "0.01");
        assert!(parse_grid("colour=1,2").is_err());
        assert!(parse_grid("alpha=1:0.1:log3").is_err());
    }

    #[test]
    fn grid_is_cartesian() {
        let base = LoadedConfig::from_str(QUAD).unwrap().config;
        let axes = [
            parse_grid("method=area,fedbuff").unwrap(),
            parse_grid("alpha=0.1,1").unwrap(),
        ];
        let pts = expand_grid(&base, &axes).unwrap();
        assert_eq!(pts.len(), 4);
        assert_eq!(pts[1].label, "method-area_alpha-1");
        assert_eq!(pts[3].config.method, MethodName::Fedbuff);
        assert_eq!(pts[3].config.constant_alpha(), Some(1.0));
    }

    #[test]
    fn experiment_is_reproducible_and_ordered() {
        let loaded = LoadedConfig::from_str(QUAD).unwrap();
        let a = run_experiment(&loaded).unwrap();
        let b = run_experiment(&loaded).unwrap();
        assert_eq!(a.trials.len(), 3);
        let csv = |r: &ExperimentReport| {
            let mut out = Vec::new();
            write_metrics_csv(&mut out, r.outcomes.iter().enumerate().map(|(i, o)| (i, &o.series))).unwrap();
            out
        };
        assert_eq!(csv(&a), csv(&b));
        for (i, t) in a.trials.iter().enumerate() {
            assert_eq!(t.seed, trial_seed(11, i));
        }
        let s = a.summary.as_ref().unwrap();
        assert!(s.loss.min <= s.loss.mean && s.loss.mean <= s.loss.max);
        assert_eq!(a.horizon, 20.0);
        assert!(a.constants.lambda_s_star.is_some());
    }

    #[test]
    fn single_trial_summary_is_the_trial() {
        let text = QUAD.replace("trials = 3", "trials = 1");
        let r = run_experiment(&LoadedConfig::from_str(&text).unwrap()).unwrap();
        let last = r.outcomes[0].series.at_time(20.0).unwrap();
        let s = r.summary.unwrap();
        assert_eq!((s.loss.mean, s.loss.min, s.loss.max), (last.train_loss, last.train_loss, last.train_loss));
    }
}
