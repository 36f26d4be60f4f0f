//! One simulated trial: a problem, a method, an event stream and a stop rule.
//!
//! Client events deliver the client's pending round (computed from the last
//! reply it received) and immediately hand it the server's reply. Server
//! events aggregate when the criterion is event-driven and are skipped
//! otherwise. Buffered aggregation is a separate server iteration that
//! follows the message completing the buffer; periodic aggregation fires at
//! wall-clock multiples of its period.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::baselines::{AsyncFedAvg, BaselineClient, BaselineKind, FedBuff, SyncFedAvg};
use crate::data::Dataset;
use crate::error::{AreaError, Result};
use crate::math::{classification_accuracy, ModelVector, NoiseModel, Objective, ProblemConstants};
use crate::metrics::{MetricsRow, MetricsSeries};
use crate::protocol::{local_sgd, AggregationCriterion, AreaClient, AreaServer, DivergenceGuard, Reply};
use crate::rng::Streams;
use crate::scheduler::{EventIndex, EventLog, EventModel, EventSource};
use crate::schedules::StepSchedule;

/// Client objectives with the weights of the global objective.
#[derive(Clone, Debug)]
pub struct Problem {
    pub objectives: Vec<Objective>,
    /// Nonnegative, summing to one.
    pub weights: Vec<f64>,
    pub constants: ProblemConstants,
    pub test_set: Option<Arc<Dataset>>,
    pub x0: ModelVector,
}

impl Problem {
    /// Uniformly weighted problem starting from `x0`.
    pub fn new(objectives: Vec<Objective>, constants: ProblemConstants, x0: ModelVector) -> Result<Self> {
        if objectives.is_empty() {
            return Err(AreaError::config("problem has no clients"));
        }
        for o in &objectives {
            x0.check_dim(o.dim())?;
        }
        let n = objectives.len();
        Ok(Self {
            objectives,
            weights: vec![1.0 / n as f64; n],
            constants,
            test_set: None,
            x0,
        })
    }

    /// Replaces the weights with `w / Σw`.
    pub fn with_weights(mut self, w: Vec<f64>) -> Result<Self> {
        if w.len() != self.objectives.len() {
            return Err(AreaError::DimensionMismatch {
                expected: self.objectives.len(),
                found: w.len(),
            });
        }
        let total: f64 = w.iter().sum();
        if w.iter().any(|&v| !(v >= 0.0 && v.is_finite())) || total <= 0.0 {
            return Err(AreaError::config("client weights must be nonnegative with a positive sum"));
        }
        self.weights = w.iter().map(|v| v / total).collect();
        Ok(self)
    }

    /// Weights proportional to each client's sample count.
    pub fn with_sample_weights(self) -> Result<Self> {
        let counts: Vec<f64> = self
            .objectives
            .iter()
            .map(|o| match o {
                Objective::LogReg(l) => Ok(l.samples.len() as f64),
                _ => Err(AreaError::config("sample weighting needs data-backed objectives")),
            })
            .collect::<Result<_>>()?;
        self.with_weights(counts)
    }

    pub fn with_test_set(mut self, data: Arc<Dataset>) -> Self {
        self.test_set = Some(data);
        self
    }

    pub fn client_count(&self) -> usize {
        self.objectives.len()
    }

    pub fn dim(&self) -> usize {
        self.x0.dim()
    }

    /// `Σ w_i f_i(x)`
    pub fn train_loss(&self, x: &ModelVector) -> Result<f64> {
        let mut total = 0.0;
        for (o, w) in self.objectives.iter().zip(&self.weights) {
            if *w > 0.0 {
                total += w * o.value(x)?;
            }
        }
        Ok(total)
    }

    /// Accuracy on the test set, NaN without one.
    pub fn test_accuracy(&self, x: &ModelVector) -> f64 {
        self.test_set
            .as_ref()
            .map_or(f64::NAN, |d| classification_accuracy(x, d))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Method {
    Area { criterion: AggregationCriterion },
    Baseline(BaselineKind),
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Area { .. } => "area",
            Method::Baseline(BaselineKind::SyncFedAvg { .. }) => "s-fedavg",
            Method::Baseline(BaselineKind::AsyncFedAvg { .. }) => "as-fedavg",
            Method::Baseline(BaselineKind::FedBuff { .. }) => "fedbuff",
        }
    }

    pub fn validate(&self, n: usize, events: &EventModel) -> Result<()> {
        match self {
            Method::Area { criterion } => {
                criterion.validate()?;
                if criterion.is_event_driven() && !events.has_server_events() {
                    return Err(AreaError::config(
                        "poisson-server aggregation needs an event model with server events",
                    ));
                }
                Ok(())
            }
            Method::Baseline(kind) => kind.validate(n),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopRule {
    /// Stop once the server iteration counter reaches `K`.
    Iterations(u64),
    /// Stop at wall-clock time `t_h`; work that would complete later is dropped.
    Horizon(f64),
}

impl StopRule {
    pub fn horizon(&self) -> f64 {
        match self {
            StopRule::Iterations(_) => f64::INFINITY,
            StopRule::Horizon(t) => *t,
        }
    }
}

/// When metric rows are taken, besides the first and last one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricCadence {
    /// Every this many drawn events (or synchronous rounds); 0 disables.
    pub every: u64,
    pub on_aggregation: bool,
}

impl Default for MetricCadence {
    fn default() -> Self {
        Self {
            every: 50,
            on_aggregation: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialSpec {
    pub method: Method,
    pub events: EventModel,
    pub schedule: StepSchedule,
    pub noise: NoiseModel,
    pub local_steps: u32,
    pub stop: StopRule,
    pub cadence: MetricCadence,
    pub guard: DivergenceGuard,
    /// Keep the drawn event sequence in the outcome.
    pub record_log: bool,
}

impl TrialSpec {
    pub fn validate(&self, problem: &Problem) -> Result<()> {
        let n = problem.client_count();
        self.events.validate()?;
        if self.events.client_count() != n {
            return Err(AreaError::config(format!(
                "event model has {} clients, problem has {n}",
                self.events.client_count()
            )));
        }
        self.method.validate(n, &self.events)?;
        self.schedule.validate()?;
        for o in &problem.objectives {
            self.noise.validate_for(o)?;
        }
        if self.local_steps == 0 {
            return Err(AreaError::config("local_steps must be >= 1"));
        }
        if let StopRule::Horizon(t) = self.stop {
            if !(t >= 0.0) {
                return Err(AreaError::config("horizon must be >= 0"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrialOutcome {
    pub series: MetricsSeries,
    /// Drawn events, numbered from 1; empty unless requested.
    pub log: EventLog,
    pub final_model: ModelVector,
    pub diverged: bool,
    /// Final server iteration counter.
    pub iterations: u64,
    pub client_messages: u64,
    pub aggregations: u64,
    pub wall_time: f64,
}

/// Hooks called while a trial runs.
pub trait Observer {
    /// After every server iteration, with the global model.
    fn on_iteration(&mut self, _k: u64, _wall_time: f64, _model: &ModelVector) {}

    /// After every AREA iteration, with the full protocol state.
    fn on_area(&mut self, _server: &AreaServer, _clients: &[AreaClient]) {}
}

impl Observer for () {}

pub fn run_trial(problem: &Problem, spec: &TrialSpec, seed: u64) -> Result<TrialOutcome> {
    run_trial_observed(problem, spec, seed, &mut ())
}

pub fn run_trial_observed<O: Observer + ?Sized>(
    problem: &Problem,
    spec: &TrialSpec,
    seed: u64,
    observer: &mut O,
) -> Result<TrialOutcome> {
    spec.validate(problem)?;
    let mut sim = Sim::new(problem, spec, seed)?;
    let result = match spec.method {
        Method::Baseline(BaselineKind::SyncFedAvg { .. }) => sim.run_sync(observer),
        _ => sim.run_async(observer),
    };
    match result {
        Ok(()) => {}
        Err(AreaError::Diverged) => sim.diverged = true,
        Err(e) => return Err(e),
    }
    sim.finish()
}

enum State {
    Area {
        server: AreaServer,
        clients: Vec<AreaClient>,
    },
    AsyncFedAvg {
        server: AsyncFedAvg,
        clients: Vec<BaselineClient>,
    },
    FedBuff {
        server: FedBuff,
        clients: Vec<BaselineClient>,
    },
    Sync(SyncFedAvg),
}

impl State {
    fn model(&self) -> &ModelVector {
        match self {
            State::Area { server, .. } => server.model(),
            State::AsyncFedAvg { server, .. } => server.model(),
            State::FedBuff { server, .. } => server.model(),
            State::Sync(s) => s.model(),
        }
    }
}

struct Sim<'a> {
    problem: &'a Problem,
    spec: &'a TrialSpec,
    streams: Streams,
    state: State,
    series: MetricsSeries,
    log: EventLog,
    k: u64,
    t: f64,
    drawn: u64,
    client_messages: u64,
    aggregations: u64,
    diverged: bool,
}

impl<'a> Sim<'a> {
    fn new(problem: &'a Problem, spec: &'a TrialSpec, seed: u64) -> Result<Self> {
        let n = problem.client_count();
        let x0 = problem.x0.clone();
        let init = Reply {
            model: x0.clone(),
            alpha: spec.schedule.alpha(0),
        };
        let state = match spec.method {
            Method::Area { criterion } => {
                let server = AreaServer::init(x0, spec.schedule, criterion, n)?;
                let reply = server.broadcast();
                let clients = (0..n).map(|i| AreaClient::new(i, &reply, spec.local_steps)).collect();
                State::Area { server, clients }
            }
            Method::Baseline(BaselineKind::AsyncFedAvg { delta }) => State::AsyncFedAvg {
                server: AsyncFedAvg::new(x0, delta),
                clients: vec![BaselineClient::new(&init); n],
            },
            Method::Baseline(BaselineKind::FedBuff { delta, server_lr }) => State::FedBuff {
                server: FedBuff::new(x0, delta, server_lr),
                clients: vec![BaselineClient::new(&init); n],
            },
            Method::Baseline(BaselineKind::SyncFedAvg { sample_count }) => {
                State::Sync(SyncFedAvg::new(x0, sample_count, n))
            }
        };
        Ok(Self {
            problem,
            spec,
            streams: Streams::new(seed),
            state,
            series: MetricsSeries::new(),
            log: EventLog::default(),
            k: 0,
            t: 0.0,
            drawn: 0,
            client_messages: 0,
            aggregations: 0,
            diverged: false,
        })
    }

    fn record(&mut self, wall_time: f64) -> Result<()> {
        let x = self.state.model();
        let train_loss = self.problem.train_loss(x)?;
        let test_acc = self.problem.test_accuracy(x);
        self.series.push(MetricsRow {
            wall_time,
            k: self.k,
            train_loss,
            test_acc,
        });
        Ok(())
    }

    fn iteration_done<O: Observer + ?Sized>(&mut self, observer: &mut O) {
        observer.on_iteration(self.k, self.t, self.state.model());
        if let State::Area { server, clients } = &self.state {
            observer.on_area(server, clients);
        }
    }

    fn iterations_left(&self) -> bool {
        match self.spec.stop {
            StopRule::Iterations(k_max) => self.k < k_max,
            StopRule::Horizon(_) => true,
        }
    }

    fn after_aggregation<O: Observer + ?Sized>(&mut self, observer: &mut O) -> Result<()> {
        self.aggregations += 1;
        self.spec.guard.check(self.state.model())?;
        self.iteration_done(observer);
        if self.spec.cadence.on_aggregation {
            self.record(self.t)?;
        }
        Ok(())
    }

    fn aggregate<O: Observer + ?Sized>(&mut self, observer: &mut O) -> Result<()> {
        if let State::Area { server, .. } = &mut self.state {
            server.aggregate();
            self.k = server.iteration();
            self.after_aggregation(observer)?;
        }
        Ok(())
    }

    fn run_async<O: Observer + ?Sized>(&mut self, observer: &mut O) -> Result<()> {
        self.record(0.0)?;
        self.iteration_done(observer);
        let horizon = self.spec.stop.horizon();
        let period = match self.spec.method {
            Method::Area {
                criterion: AggregationCriterion::Periodic { period },
            } => Some(period),
            _ => None,
        };
        let mut next_tick = period.unwrap_or(f64::INFINITY);
        let mut source = EventSource::new(self.spec.events.clone(), self.streams.events())?;
        while self.iterations_left() {
            let (event, dt) = source.next_event();
            let t_event = self.t + dt;
            while next_tick <= t_event.min(horizon) && self.iterations_left() {
                self.t = next_tick;
                self.aggregate(observer)?;
                next_tick += period.expect("tick implies period");
            }
            if t_event > horizon || !self.iterations_left() {
                break;
            }
            self.t = t_event;
            self.drawn += 1;
            if self.spec.record_log {
                self.log.push(self.drawn, event, self.t);
            }
            match event {
                EventIndex::Client(i) => self.client_event(i, observer)?,
                EventIndex::Server => {
                    if matches!(
                        self.spec.method,
                        Method::Area {
                            criterion: AggregationCriterion::PoissonServer
                        }
                    ) {
                        self.aggregate(observer)?;
                    }
                }
            }
            if self.spec.cadence.every > 0 && self.drawn % self.spec.cadence.every == 0 {
                self.record(self.t)?;
            }
        }
        Ok(())
    }

    fn client_event<O: Observer + ?Sized>(&mut self, i: usize, observer: &mut O) -> Result<()> {
        let spec = self.spec;
        let obj = &self.problem.objectives[i];
        self.client_messages += 1;
        if let State::Area { server, clients } = &mut self.state {
            let client = &mut clients[i];
            let mut rng = self.streams.noise(i, client.round_index());
            let msg = client.round(obj, &spec.noise, &mut rng, &spec.guard)?;
            let reply = server.handle_client(&msg)?;
            client.receive(reply);
            self.k = server.iteration();
            let due = server.aggregation_due();
            self.iteration_done(observer);
            if due {
                self.aggregate(observer)?;
            }
            return Ok(());
        }
        let aggregated = match &mut self.state {
            State::Area { .. } => unreachable!("handled above"),
            State::AsyncFedAvg { server, clients } => {
                let client = &mut clients[i];
                let mut rng = self.streams.noise(i, client.round);
                let local = local_sgd(
                    obj,
                    &spec.noise,
                    &client.cached.model,
                    client.cached.alpha,
                    spec.local_steps,
                    &mut rng,
                    &spec.guard,
                )?;
                // As for AREA, the reply carries the model from before the
                // aggregation this message may trigger.
                let current = server.model().clone();
                let fired = server.on_message(local);
                self.k += 1;
                client.receive(Reply {
                    model: current,
                    alpha: spec.schedule.alpha(self.k),
                });
                fired
            }
            State::FedBuff { server, clients } => {
                let client = &mut clients[i];
                let mut rng = self.streams.noise(i, client.round);
                let local = local_sgd(
                    obj,
                    &spec.noise,
                    &client.cached.model,
                    client.cached.alpha,
                    spec.local_steps,
                    &mut rng,
                    &spec.guard,
                )?;
                // As for AREA, the reply carries the model from before the
                // aggregation this message may trigger.
                let current = server.model().clone();
                let fired = server.on_message(&client.cached.model.sub(&local));
                self.k += 1;
                client.receive(Reply {
                    model: current,
                    alpha: spec.schedule.alpha(self.k),
                });
                fired
            }
            State::Sync(_) => unreachable!("synchronous runs do not consume events"),
        };
        if aggregated {
            // The aggregation is accounted as its own iteration.
            self.k += 1;
            self.after_aggregation(observer)?;
        } else {
            self.iteration_done(observer);
        }
        Ok(())
    }

    fn run_sync<O: Observer + ?Sized>(&mut self, observer: &mut O) -> Result<()> {
        self.record(0.0)?;
        self.iteration_done(observer);
        let horizon = self.spec.stop.horizon();
        while self.iterations_left() {
            let State::Sync(sync) = &mut self.state else {
                unreachable!("run_sync on an asynchronous method")
            };
            let plan = sync.plan_round(&self.streams, &self.spec.events);
            if self.t + plan.duration > horizon {
                break;
            }
            let alpha = self.spec.schedule.alpha(self.k);
            sync.run_round(
                &self.problem.objectives,
                &self.spec.noise,
                alpha,
                self.spec.local_steps,
                &self.streams,
                &self.spec.events,
                &self.spec.guard,
            )?;
            self.t += plan.duration;
            self.k += 1;
            self.drawn += 1;
            self.client_messages += plan.participants.len() as u64;
            if self.spec.record_log {
                self.log.push(self.drawn, EventIndex::Server, self.t);
            }
            self.after_aggregation(observer)?;
            if self.spec.cadence.every > 0 && self.drawn % self.spec.cadence.every == 0 {
                self.record(self.t)?;
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Result<TrialOutcome> {
        let stamp = match self.spec.stop {
            StopRule::Horizon(t) if !self.diverged => t,
            _ => self.t,
        };
        if self.diverged {
            self.series.push(MetricsRow {
                wall_time: stamp,
                k: self.k,
                train_loss: f64::INFINITY,
                test_acc: 0.0,
            });
        } else {
            self.record(stamp)?;
        }
        Ok(TrialOutcome {
            final_model: self.state.model().clone(),
            series: self.series,
            log: self.log,
            diverged: self.diverged,
            iterations: self.k,
            client_messages: self.client_messages,
            aggregations: self.aggregations,
            wall_time: self.t,
        })
    }
}
