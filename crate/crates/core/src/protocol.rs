//! AREA server and client state machines.
//!
//! The server keeps the global model `x_s` and an aggregator `u_s`. Each
//! client keeps a memory `y_i` of the last local model it sent. A client
//! message carries the residual `x_i^M − y_i`; the server folds `m/n` into the
//! aggregator and, when its aggregation criterion fires, adds the aggregator
//! to the global model. Because a client always replaces its previous
//! contribution instead of adding a new one, `x_s + u_s` equals the average of
//! the client memories at every iteration.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AreaError, Result};
use crate::math::{stochastic_gradient, ModelVector, NoiseModel, Objective};
use crate::schedules::StepSchedule;

/// Server reply: the current global model and the step size to use with it.
#[derive(Clone, Debug, PartialEq)]
pub struct Reply {
    pub model: ModelVector,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClientMessage {
    pub sender: usize,
    /// `x_i^M − y_i`
    pub residual: ModelVector,
}

/// When the server folds the aggregator into the global model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AggregationCriterion {
    /// After every `delta`-th client message since the last aggregation.
    Buffered { delta: u32 },
    /// Whenever the event model emits a server event.
    PoissonServer,
    /// At wall-clock multiples of `period`.
    Periodic { period: f64 },
}

impl AggregationCriterion {
    pub fn is_event_driven(&self) -> bool {
        matches!(self, AggregationCriterion::PoissonServer)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            AggregationCriterion::Buffered { delta: 0 } => Err(AreaError::config("buffer size must be >= 1")),
            AggregationCriterion::Periodic { period } if !(period > 0.0 && period.is_finite()) => {
                Err(AreaError::config("aggregation period must be positive"))
            }
            _ => Ok(()),
        }
    }
}

/// Limit on iterate size beyond which a run counts as diverged.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceGuard {
    pub max_norm: f64,
}

impl Default for DivergenceGuard {
    fn default() -> Self {
        Self { max_norm: f64::INFINITY }
    }
}

impl DivergenceGuard {
    pub fn check(&self, x: &ModelVector) -> Result<()> {
        // The norm overflows before the entries do.
        let norm = x.norm();
        if !norm.is_finite() || norm > self.max_norm {
            Err(AreaError::Diverged)
        } else {
            Ok(())
        }
    }
}

/// `M` stochastic (sub)gradient steps with constant step `alpha` from `start`.
pub fn local_sgd<R: Rng + ?Sized>(
    obj: &Objective,
    noise: &NoiseModel,
    start: &ModelVector,
    alpha: f64,
    steps: u32,
    rng: &mut R,
    guard: &DivergenceGuard,
) -> Result<ModelVector> {
    let mut x = start.clone();
    for _ in 0..steps {
        let g = stochastic_gradient(obj, noise, &x, rng)?;
        x.axpy(-alpha, &g);
        guard.check(&x)?;
    }
    Ok(x)
}

/// Final state handed out when the server stops.
#[derive(Clone, Debug, PartialEq)]
pub struct StopSignal {
    pub model: ModelVector,
    pub iterations: u64,
}

#[derive(Clone, Debug)]
pub struct AreaServer {
    model: ModelVector,
    aggregator: ModelVector,
    k: u64,
    n: usize,
    schedule: StepSchedule,
    criterion: AggregationCriterion,
    since_aggregation: u32,
    stopped: bool,
}

impl AreaServer {
    pub fn init(x0: ModelVector, schedule: StepSchedule, criterion: AggregationCriterion, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(AreaError::config("AREA needs at least one client"));
        }
        criterion.validate()?;
        schedule.validate()?;
        let d = x0.dim();
        Ok(Self {
            model: x0,
            aggregator: ModelVector::zeros(d),
            k: 0,
            n,
            schedule,
            criterion,
            since_aggregation: 0,
            stopped: false,
        })
    }

    /// Initial payload `(x_{s,0}, α_0)` sent to every client.
    pub fn broadcast(&self) -> Reply {
        Reply {
            model: self.model.clone(),
            alpha: self.schedule.alpha(0),
        }
    }

    /// Accumulates `m/n` and replies with the current model and the step for
    /// the new iteration counter.
    pub fn handle_client(&mut self, msg: &ClientMessage) -> Result<Reply> {
        if self.stopped {
            return Err(AreaError::Protocol("message received after stop".into()));
        }
        if msg.sender >= self.n {
            return Err(AreaError::Protocol(format!(
                "sender {} outside 0..{}",
                msg.sender, self.n
            )));
        }
        if msg.residual.dim() != self.model.dim() {
            return Err(AreaError::Protocol(format!(
                "message dimension {} != model dimension {}",
                msg.residual.dim(),
                self.model.dim()
            )));
        }
        self.aggregator.axpy(1.0 / self.n as f64, &msg.residual);
        self.k += 1;
        self.since_aggregation += 1;
        Ok(Reply {
            model: self.model.clone(),
            alpha: self.schedule.alpha(self.k),
        })
    }

    /// `x_s ← x_s + u_s`, `u_s ← 0`.
    pub fn aggregate(&mut self) {
        self.model.add_assign(&self.aggregator);
        self.aggregator.set_zero();
        self.k += 1;
        self.since_aggregation = 0;
    }

    /// Whether a buffered criterion has collected its quota of messages.
    pub fn aggregation_due(&self) -> bool {
        match self.criterion {
            AggregationCriterion::Buffered { delta } => self.since_aggregation >= delta,
            _ => false,
        }
    }

    pub fn stop(&mut self) -> StopSignal {
        self.stopped = true;
        StopSignal {
            model: self.model.clone(),
            iterations: self.k,
        }
    }

    pub fn model(&self) -> &ModelVector {
        &self.model
    }

    pub fn aggregator(&self) -> &ModelVector {
        &self.aggregator
    }

    pub fn iteration(&self) -> u64 {
        self.k
    }

    pub fn client_count(&self) -> usize {
        self.n
    }

    pub fn criterion(&self) -> AggregationCriterion {
        self.criterion
    }

    pub fn schedule(&self) -> &StepSchedule {
        &self.schedule
    }

    /// Applies the aggregator but leaves it in place. Only for fault-injection
    /// tests of the conservation check.
    #[doc(hidden)]
    pub fn aggregate_without_reset(&mut self) {
        self.model.add_assign(&self.aggregator);
        self.k += 1;
        self.since_aggregation = 0;
    }
}

#[derive(Clone, Debug)]
pub struct AreaClient {
    id: usize,
    memory: ModelVector,
    cached: Reply,
    local_steps: u32,
    round: u64,
}

impl AreaClient {
    pub fn new(id: usize, init: &Reply, local_steps: u32) -> Self {
        assert!(local_steps >= 1, "local_steps must be positive");
        Self {
            id,
            memory: init.model.clone(),
            cached: init.clone(),
            local_steps,
            round: 0,
        }
    }

    /// Runs the local steps from the cached model, emits the residual against
    /// the memory, and moves the memory to the new local model.
    pub fn round<R: Rng + ?Sized>(
        &mut self,
        obj: &Objective,
        noise: &NoiseModel,
        rng: &mut R,
        guard: &DivergenceGuard,
    ) -> Result<ClientMessage> {
        let local = local_sgd(obj, noise, &self.cached.model, self.cached.alpha, self.local_steps, rng, guard)?;
        let residual = local.sub(&self.memory);
        self.memory = local;
        Ok(ClientMessage {
            sender: self.id,
            residual,
        })
    }

    pub fn receive(&mut self, reply: Reply) {
        self.cached = reply;
        self.round += 1;
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn memory(&self) -> &ModelVector {
        &self.memory
    }

    pub fn cached(&self) -> &Reply {
        &self.cached
    }

    /// Number of replies received so far; keys the noise of the next round.
    pub fn round_index(&self) -> u64 {
        self.round
    }

    pub fn local_steps(&self) -> u32 {
        self.local_steps
    }
}
