//! Event sequences and wall-clock time.
//!
//! Each server iteration corresponds to exactly one event: the arrival of a
//! message from client `i`, or the server's aggregation. Events are drawn from
//! one of three models: IID with stationary probabilities (unit logical time),
//! superposed Poisson clocks, or a fixed cycle.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_distr::Exp;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{AreaError, Result};
use crate::rng::StreamRng;

/// Index `J_k` of the event at one server iteration. Clients are zero-based
/// in memory and one-based when displayed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventIndex {
    Client(usize),
    Server,
}

impl fmt::Display for EventIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventIndex::Client(i) => write!(f, "{}", i + 1),
            EventIndex::Server => f.write_str("s"),
        }
    }
}

impl FromStr for EventIndex {
    type Err = AreaError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("s") {
            return Ok(EventIndex::Server);
        }
        match s.parse::<usize>() {
            Ok(i) if i >= 1 => Ok(EventIndex::Client(i - 1)),
            _ => Err(AreaError::config(format!("bad event index {s:?}; expected 1..n or s"))),
        }
    }
}

impl Serialize for EventIndex {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EventIndex {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EventModel {
    StationaryIid { p: Vec<f64>, p_s: f64 },
    PoissonRates { lambda: Vec<f64>, lambda_s: f64 },
    DeterministicCycle { order: Vec<EventIndex> },
}

impl EventModel {
    /// Poisson clocks with the server rate set to the closed-form optimum.
    pub fn poisson_with_optimal_server(lambda: Vec<f64>) -> Result<Self> {
        let lambda_s = crate::schedules::optimal_lambda_s(&lambda)?;
        Ok(EventModel::PoissonRates { lambda, lambda_s })
    }

    /// Round-robin `1, 2, …, n, s`.
    pub fn round_robin(n: usize) -> Self {
        let mut order: Vec<EventIndex> = (0..n).map(EventIndex::Client).collect();
        order.push(EventIndex::Server);
        EventModel::DeterministicCycle { order }
    }

    pub fn client_count(&self) -> usize {
        match self {
            EventModel::StationaryIid { p, .. } => p.len(),
            EventModel::PoissonRates { lambda, .. } => lambda.len(),
            EventModel::DeterministicCycle { order } => order
                .iter()
                .filter_map(|e| match e {
                    EventIndex::Client(i) => Some(i + 1),
                    EventIndex::Server => None,
                })
                .max()
                .unwrap_or(0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EventModel::StationaryIid { p, p_s } => {
                if p.is_empty() {
                    return Err(AreaError::config("stationary model needs at least one client"));
                }
                if p.iter().chain(std::iter::once(p_s)).any(|&v| !(v > 0.0 && v.is_finite())) {
                    return Err(AreaError::config("stationary event probabilities must be positive"));
                }
                let total: f64 = p.iter().sum::<f64>() + p_s;
                if (total - 1.0).abs() > 1e-9 {
                    return Err(AreaError::config(format!(
                        "stationary event probabilities sum to {total}, not 1"
                    )));
                }
            }
            EventModel::PoissonRates { lambda, lambda_s } => {
                if lambda.is_empty() {
                    return Err(AreaError::config("poisson model needs at least one client"));
                }
                if lambda.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                    return Err(AreaError::config("poisson client rates must be positive and finite"));
                }
                // A zero server rate switches the server clock off; aggregation
                // is then left to a message- or time-based criterion.
                if !(*lambda_s >= 0.0 && lambda_s.is_finite()) {
                    return Err(AreaError::config("poisson server rate must be finite and >= 0"));
                }
            }
            EventModel::DeterministicCycle { order } => {
                if order.is_empty() {
                    return Err(AreaError::config("event cycle is empty"));
                }
                let n = self.client_count();
                let mut seen = vec![false; n];
                for e in order {
                    if let EventIndex::Client(i) = e {
                        seen[*i] = true;
                    }
                }
                if seen.iter().any(|s| !s) {
                    return Err(AreaError::config("event cycle skips a client"));
                }
            }
        }
        Ok(())
    }

    /// Stationary per-iteration probabilities `(p_1..p_n, p_s)`.
    ///
    /// For a cycle these are the frequencies within one period.
    pub fn probabilities(&self) -> (Vec<f64>, f64) {
        match self {
            EventModel::StationaryIid { p, p_s } => (p.clone(), *p_s),
            EventModel::PoissonRates { lambda, lambda_s } => {
                let total = lambda_s + lambda.iter().sum::<f64>();
                (lambda.iter().map(|l| l / total).collect(), lambda_s / total)
            }
            EventModel::DeterministicCycle { order } => {
                let len = order.len() as f64;
                let mut p = vec![0.0; self.client_count()];
                let mut p_s = 0.0;
                for e in order {
                    match e {
                        EventIndex::Client(i) => p[*i] += 1.0 / len,
                        EventIndex::Server => p_s += 1.0 / len,
                    }
                }
                (p, p_s)
            }
        }
    }

    /// Whether the model ever emits a server event.
    pub fn has_server_events(&self) -> bool {
        self.probabilities().1 > 0.0
    }

    /// `min{min_i p_i, p_s}`
    pub fn p_min(&self) -> f64 {
        let (p, p_s) = self.probabilities();
        p.into_iter().fold(p_s, f64::min)
    }

    /// `(1/n) Σ 1/p_i`
    pub fn q_bar(&self) -> f64 {
        let (p, _) = self.probabilities();
        p.iter().map(|v| 1.0 / v).sum::<f64>() / p.len() as f64
    }

    /// Aggregate event rate `λ̄`; 1 for the logical-time models.
    pub fn total_rate(&self) -> f64 {
        match self {
            EventModel::PoissonRates { lambda, lambda_s } => lambda_s + lambda.iter().sum::<f64>(),
            _ => 1.0,
        }
    }

    /// Response time of one client in a synchronous round.
    pub fn client_latency(&self, client: usize, rng: &mut StreamRng) -> f64 {
        match self {
            EventModel::PoissonRates { lambda, .. } => {
                Exp::new(lambda[client]).expect("validated rate").sample(rng)
            }
            _ => 1.0,
        }
    }
}

/// Stateful draw of `(J_k, Δt)` pairs.
pub struct EventSource {
    model: EventModel,
    rng: StreamRng,
    position: usize,
    categorical: Option<WeightedIndex<f64>>,
    interarrival: Option<Exp<f64>>,
}

impl EventSource {
    pub fn new(model: EventModel, rng: StreamRng) -> Result<Self> {
        model.validate()?;
        let (categorical, interarrival) = match &model {
            EventModel::StationaryIid { p, p_s } => {
                let w: Vec<f64> = p.iter().copied().chain(std::iter::once(*p_s)).collect();
                (Some(WeightedIndex::new(w).map_err(|e| AreaError::config(e.to_string()))?), None)
            }
            EventModel::PoissonRates { lambda, lambda_s } => {
                let w: Vec<f64> = lambda.iter().copied().chain(std::iter::once(*lambda_s)).collect();
                let total: f64 = w.iter().sum();
                (
                    Some(WeightedIndex::new(w).map_err(|e| AreaError::config(e.to_string()))?),
                    Some(Exp::new(total).map_err(|e| AreaError::config(e.to_string()))?),
                )
            }
            EventModel::DeterministicCycle { .. } => (None, None),
        };
        Ok(Self {
            model,
            rng,
            position: 0,
            categorical,
            interarrival,
        })
    }

    pub fn model(&self) -> &EventModel {
        &self.model
    }

    pub fn next_event(&mut self) -> (EventIndex, f64) {
        match &self.model {
            EventModel::DeterministicCycle { order } => {
                let e = order[self.position % order.len()];
                self.position += 1;
                (e, 1.0)
            }
            _ => {
                let dt = match &self.interarrival {
                    Some(exp) => exp.sample(&mut self.rng),
                    None => 1.0,
                };
                let n = self.model.client_count();
                let idx = self.categorical.as_ref().expect("categorical model").sample(&mut self.rng);
                let e = if idx == n {
                    EventIndex::Server
                } else {
                    EventIndex::Client(idx)
                };
                (e, dt)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub k: u64,
    pub event: EventIndex,
    pub wall_time: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub records: Vec<EventRecord>,
}

impl EventLog {
    pub fn push(&mut self, k: u64, event: EventIndex, wall_time: f64) {
        self.records.push(EventRecord { k, event, wall_time });
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn events(&self) -> impl Iterator<Item = EventIndex> + '_ {
        self.records.iter().map(|r| r.event)
    }

    pub fn count(&self, event: EventIndex) -> usize {
        self.records.iter().filter(|r| r.event == event).count()
    }

    /// CSV with columns `k,event,wall_time`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "event", "wall_time"])?;
        for r in &self.records {
            w.write_record([r.k.to_string(), r.event.to_string(), r.wall_time.to_string()])?;
        }
        w.flush().map_err(|e| AreaError::io("<event log>", e))?;
        Ok(())
    }
}
