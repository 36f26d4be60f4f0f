//! Experiment configuration files.
//!
//! TOML with one section per concern:
//!
//! ```toml
//! config_version = 1
//! method = "area"            # area | s-fedavg | as-fedavg | fedbuff
//! trials = 10
//! seed = 1
//!
//! [problem]                  # kind = quadratic | absdev | mnist
//! kind = "mnist"
//! clients = 128
//!
//! [events]                   # kind = poisson | stationary | round-robin
//! kind = "poisson"
//! rate = 10.0
//!
//! [aggregation]              # kind = buffered | poisson-server | periodic
//! kind = "buffered"
//! delta = 4
//!
//! [schedule]                 # kind = constant | theorem1 | theorem2 | inverse-k
//! kind = "constant"
//! alpha = 1.0
//!
//! [noise]                    # kind = none | gaussian | minibatch
//! kind = "minibatch"
//! batch_size = 32
//!
//! [run]
//! local_steps = 1
//! horizon = 15.0             # or iterations = K
//! ```
//!
//! Every key is documented on the corresponding struct field.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{AreaError, Result};

pub const CONFIG_VERSION: u32 = 1;

/// A parsed configuration together with the text it came from.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub text: String,
    pub config: ExperimentConfig,
}

impl LoadedConfig {
    pub fn from_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| AreaError::config(format!("cannot parse config: {e}")))?;
        config.validate()?;
        Ok(Self {
            text: text.to_owned(),
            config,
        })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| AreaError::io(path, e))?;
        Self::from_str(&text)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodName {
    Area,
    SFedavg,
    AsFedavg,
    Fedbuff,
}

impl MethodName {
    pub fn as_str(&self) -> &'static str {
        match self {
            MethodName::Area => "area",
            MethodName::SFedavg => "s-fedavg",
            MethodName::AsFedavg => "as-fedavg",
            MethodName::Fedbuff => "fedbuff",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "area" => Ok(MethodName::Area),
            "s-fedavg" => Ok(MethodName::SFedavg),
            "as-fedavg" => Ok(MethodName::AsFedavg),
            "fedbuff" => Ok(MethodName::Fedbuff),
            other => Err(AreaError::config(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub config_version: u32,
    pub method: MethodName,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Master seed; trial seeds are derived from it.
    #[serde(default)]
    pub seed: u64,
    pub problem: ProblemConfig,
    pub events: EventsConfig,
    #[serde(default)]
    pub aggregation: AggregationConfig,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    pub run: RunConfig,
}

fn default_trials() -> usize {
    1
}

/// A constant given once, or once per client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerClient {
    Uniform(f64),
    Each(Vec<f64>),
}

impl PerClient {
    /// The common value; per-client lists must hold a single repeated value.
    pub fn uniform(&self, what: &str) -> Result<f64> {
        match self {
            PerClient::Uniform(v) => Ok(*v),
            PerClient::Each(vs) => {
                let first = *vs
                    .first()
                    .ok_or_else(|| AreaError::config(format!("{what}: empty list")))?;
                if vs.iter().any(|&v| v != first) {
                    return Err(AreaError::config(format!(
                        "{what}: heterogeneous per-client constants are not supported, the step-size theory assumes one value for all clients"
                    )));
                }
                Ok(first)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    /// `1/n` per client.
    Uniform,
    /// Proportional to each client's sample count.
    Sample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProblemConfig {
    /// Random rotated quadratics with spectrum in `[mu, lipschitz_l]`.
    Quadratic {
        clients: usize,
        dim: usize,
        mu: PerClient,
        lipschitz_l: PerClient,
        /// Target `max_i ‖x* − u_i*‖`.
        zeta: f64,
        /// Starting point; zeros when absent.
        #[serde(default)]
        x0: Option<Vec<f64>>,
    },
    /// `f_i(x) = |x − c_i|` in one dimension.
    Absdev {
        centers: Vec<f64>,
        #[serde(default)]
        x0: Option<f64>,
    },
    /// Ridge-regularized multinomial logistic regression on MNIST.
    Mnist {
        /// Directory with the IDX files; falls back to `AREA_DATA_DIR`, then `data/mnist`.
        #[serde(default)]
        data_dir: Option<PathBuf>,
        clients: usize,
        /// Dirichlet concentration of the label-skewed split.
        #[serde(default = "default_dirichlet")]
        dirichlet: f64,
        #[serde(default = "default_ridge")]
        ridge: f64,
        /// Random subset of the training split; all 60000 rows when absent.
        #[serde(default)]
        train_samples: Option<usize>,
        /// Leading rows of the test split; all when absent.
        #[serde(default)]
        test_samples: Option<usize>,
        #[serde(default = "default_sample_weighting")]
        weighting: Weighting,
    },
}

fn default_dirichlet() -> f64 {
    0.1
}

fn default_ridge() -> f64 {
    1e-3
}

fn default_sample_weighting() -> Weighting {
    Weighting::Sample
}

impl ProblemConfig {
    pub fn clients(&self) -> usize {
        match self {
            ProblemConfig::Quadratic { clients, .. } | ProblemConfig::Mnist { clients, .. } => *clients,
            ProblemConfig::Absdev { centers, .. } => centers.len(),
        }
    }
}

/// Server rate of the Poisson model: a number, or `"optimal"` for the
/// closed-form optimum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ServerRate {
    Value(f64),
    Named(String),
}

impl Default for ServerRate {
    fn default() -> Self {
        ServerRate::Named("optimal".into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EventsConfig {
    Poisson {
        /// Per-client rates; mutually exclusive with `rate`.
        #[serde(default)]
        lambda: Option<Vec<f64>>,
        /// One rate for every client.
        #[serde(default)]
        rate: Option<f64>,
        #[serde(default)]
        lambda_s: ServerRate,
    },
    Stationary {
        /// Client probabilities; uniform `1/(n+1)` (with `p_s` alike) when absent.
        #[serde(default)]
        p: Option<Vec<f64>>,
        #[serde(default)]
        p_s: Option<f64>,
    },
    RoundRobin,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationKind {
    Buffered,
    PoissonServer,
    Periodic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregationConfig {
    #[serde(default = "default_aggregation_kind")]
    pub kind: AggregationKind,
    /// Buffer size for buffered AREA, AS-FedAvg and FedBuff.
    #[serde(default = "default_delta")]
    pub delta: u32,
    /// Period of periodic aggregation.
    #[serde(default)]
    pub period: Option<f64>,
    /// FedBuff server learning rate.
    #[serde(default = "default_server_lr")]
    pub server_lr: f64,
    /// Clients per S-FedAvg round.
    #[serde(default = "default_sample_count")]
    pub sample_count: usize,
}

fn default_aggregation_kind() -> AggregationKind {
    AggregationKind::Buffered
}

fn default_delta() -> u32 {
    4
}

fn default_server_lr() -> f64 {
    1.0
}

fn default_sample_count() -> usize {
    4
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self {
            kind: default_aggregation_kind(),
            delta: default_delta(),
            period: None,
            server_lr: default_server_lr(),
            sample_count: default_sample_count(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScheduleConfig {
    Constant { alpha: f64 },
    /// Decreasing schedule built from the problem's `mu`, `L` and the event model.
    Theorem1,
    /// Constant step tuned to the iteration budget (convex Lipschitz suites).
    Theorem2,
    /// `c0 / (k + 1)`
    InverseK { c0: f64 },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NoiseConfig {
    #[default]
    None,
    Gaussian {
        sigma: f64,
    },
    Minibatch {
        batch_size: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_local_steps")]
    pub local_steps: u32,
    /// Stop after this many server iterations.
    #[serde(default)]
    pub iterations: Option<u64>,
    /// Stop at this wall-clock time.
    #[serde(default)]
    pub horizon: Option<f64>,
    /// Record metrics every this many drawn events (0 disables).
    #[serde(default = "default_metric_every")]
    pub metric_every: u64,
    #[serde(default = "default_true")]
    pub metric_on_aggregation: bool,
    /// Iterate norm beyond which a trial counts as diverged.
    #[serde(default)]
    pub divergence_norm: Option<f64>,
    #[serde(default = "default_target")]
    pub target_accuracy: f64,
    /// Write each trial's drawn event sequence.
    #[serde(default)]
    pub record_events: bool,
}

fn default_local_steps() -> u32 {
    1
}

fn default_metric_every() -> u64 {
    50
}

fn default_true() -> bool {
    true
}

fn default_target() -> f64 {
    0.8
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.config_version != CONFIG_VERSION {
            return Err(AreaError::config(format!(
                "config_version {} is not supported (expected {CONFIG_VERSION})",
                self.config_version
            )));
        }
        if self.trials == 0 {
            return Err(AreaError::config("trials must be >= 1"));
        }
        let n = self.problem.clients();
        if n == 0 {
            return Err(AreaError::config("problem needs at least one client"));
        }
        match &self.problem {
            ProblemConfig::Quadratic {
                dim, mu, lipschitz_l, zeta, x0, ..
            } => {
                let (mu, l) = (mu.uniform("mu")?, lipschitz_l.uniform("lipschitz_l")?);
                if !(mu > 0.0 && l >= mu && l.is_finite()) {
                    return Err(AreaError::config("quadratic suite needs lipschitz_l >= mu > 0"));
                }
                if *dim == 0 || !(*zeta >= 0.0) {
                    return Err(AreaError::config("quadratic suite needs dim >= 1 and zeta >= 0"));
                }
                if let Some(x0) = x0 {
                    if x0.len() != *dim {
                        return Err(AreaError::config("x0 length must equal dim"));
                    }
                }
            }
            ProblemConfig::Absdev { centers, .. } => {
                if centers.iter().any(|c| !c.is_finite()) {
                    return Err(AreaError::config("absdev centers must be finite"));
                }
            }
            ProblemConfig::Mnist {
                dirichlet, ridge, train_samples, ..
            } => {
                if !(*dirichlet > 0.0) || !(*ridge >= 0.0) {
                    return Err(AreaError::config("mnist needs dirichlet > 0 and ridge >= 0"));
                }
                if let Some(s) = train_samples {
                    if *s < n {
                        return Err(AreaError::config("train_samples must be at least the client count"));
                    }
                }
            }
        }
        if let ProblemConfig::Mnist { weighting: Weighting::Uniform, .. } = self.problem {
            log::info!("mnist problem uses uniform client weights");
        }
        match &self.events {
            EventsConfig::Poisson { lambda, rate, lambda_s } => {
                match (lambda, rate) {
                    (Some(l), None) if l.len() == n => {}
                    (Some(l), None) => {
                        return Err(AreaError::config(format!("lambda has {} entries for {n} clients", l.len())))
                    }
                    (None, Some(_)) => {}
                    _ => return Err(AreaError::config("poisson events need exactly one of lambda and rate")),
                }
                if let ServerRate::Named(name) = lambda_s {
                    if name != "optimal" {
                        return Err(AreaError::config(format!("lambda_s must be a number or \"optimal\", got '{name}'")));
                    }
                }
            }
            EventsConfig::Stationary { p, p_s } => {
                if p.is_some() != p_s.is_some() {
                    return Err(AreaError::config("stationary events need both p and p_s, or neither"));
                }
                if let Some(p) = p {
                    if p.len() != n {
                        return Err(AreaError::config(format!("p has {} entries for {n} clients", p.len())));
                    }
                }
            }
            EventsConfig::RoundRobin => {}
        }
        if self.aggregation.kind == AggregationKind::Periodic && self.aggregation.period.is_none() {
            return Err(AreaError::config("periodic aggregation needs a period"));
        }
        match (&self.schedule, self.run.iterations) {
            (ScheduleConfig::Theorem2, None) => {
                return Err(AreaError::config("the theorem2 schedule needs an iteration budget"));
            }
            (ScheduleConfig::Theorem2, Some(_)) if !matches!(self.problem, ProblemConfig::Absdev { .. }) => {
                return Err(AreaError::config("the theorem2 schedule needs a suite with known minimizer and Lipschitz constant (absdev)"));
            }
            (ScheduleConfig::Theorem1, _) if matches!(self.problem, ProblemConfig::Absdev { .. }) => {
                return Err(AreaError::config("the theorem1 schedule needs a strongly convex suite"));
            }
            _ => {}
        }
        if matches!(self.schedule, ScheduleConfig::Theorem2) && matches!(self.noise, NoiseConfig::Minibatch { .. }) {
            return Err(AreaError::config("the theorem2 schedule needs a known noise level"));
        }
        match (self.run.iterations, self.run.horizon) {
            (Some(_), None) => {}
            (None, Some(t)) if t >= 0.0 => {}
            (None, Some(_)) => return Err(AreaError::config("horizon must be >= 0")),
            _ => return Err(AreaError::config("run needs exactly one of iterations and horizon")),
        }
        if self.run.local_steps == 0 {
            return Err(AreaError::config("local_steps must be >= 1"));
        }
        Ok(())
    }

    /// Constant step size, when the schedule has one.
    pub fn constant_alpha(&self) -> Option<f64> {
        match self.schedule {
            ScheduleConfig::Constant { alpha } => Some(alpha),
            _ => None,
        }
    }
}
