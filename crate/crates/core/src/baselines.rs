//! Comparison methods: synchronous FedAvg, asynchronous FedAvg and FedBuff.
//!
//! The asynchronous FedAvg server update (replace the global model with the
//! mean of the buffered local models) is an interpretation; the method is only
//! described as clients sharing their local model estimates with buffered
//! aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{AreaError, Result};
use crate::math::{ModelVector, NoiseModel, Objective};
use crate::protocol::{local_sgd, DivergenceGuard, Reply};
use crate::rng::Streams;
use crate::scheduler::EventModel;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BaselineKind {
    SyncFedAvg { sample_count: usize },
    AsyncFedAvg { delta: u32 },
    FedBuff { delta: u32, server_lr: f64 },
}

impl BaselineKind {
    pub fn validate(&self, n: usize) -> Result<()> {
        match *self {
            BaselineKind::SyncFedAvg { sample_count } if sample_count == 0 || sample_count > n => Err(
                AreaError::config(format!("sample_count must lie in 1..={n}, got {sample_count}")),
            ),
            BaselineKind::AsyncFedAvg { delta: 0 } | BaselineKind::FedBuff { delta: 0, .. } => {
                Err(AreaError::config("buffer size must be >= 1"))
            }
            BaselineKind::FedBuff { server_lr, .. } if !(server_lr > 0.0 && server_lr.is_finite()) => {
                Err(AreaError::config("server learning rate must be positive"))
            }
            _ => Ok(()),
        }
    }
}

/// Client side shared by the asynchronous baselines: the last reply and a
/// round counter keying its noise.
#[derive(Clone, Debug)]
pub struct BaselineClient {
    pub cached: Reply,
    pub round: u64,
}

impl BaselineClient {
    pub fn new(init: &Reply) -> Self {
        Self {
            cached: init.clone(),
            round: 0,
        }
    }

    pub fn receive(&mut self, reply: Reply) {
        self.cached = reply;
        self.round += 1;
    }
}

/// Asynchronous FedAvg: buffer full local models, replace the global model
/// with their mean every `delta` arrivals.
#[derive(Clone, Debug)]
pub struct AsyncFedAvg {
    model: ModelVector,
    delta: u32,
    buffer: Vec<ModelVector>,
}

impl AsyncFedAvg {
    pub fn new(x0: ModelVector, delta: u32) -> Self {
        Self {
            model: x0,
            delta: delta.max(1),
            buffer: Vec::with_capacity(delta as usize),
        }
    }

    /// Returns whether this message triggered an aggregation.
    pub fn on_message(&mut self, local_model: ModelVector) -> bool {
        self.buffer.push(local_model);
        if self.buffer.len() as u32 >= self.delta {
            self.model = ModelVector::mean(&self.buffer).expect("non-empty buffer");
            self.buffer.clear();
            true
        } else {
            false
        }
    }

    pub fn model(&self) -> &ModelVector {
        &self.model
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }
}

/// FedBuff: buffer pseudo-gradients `x_s^{received} − x_i^M`, take a server
/// step with their mean every `delta` arrivals.
#[derive(Clone, Debug)]
pub struct FedBuff {
    model: ModelVector,
    delta: u32,
    server_lr: f64,
    accumulated: ModelVector,
    count: u32,
}

impl FedBuff {
    pub fn new(x0: ModelVector, delta: u32, server_lr: f64) -> Self {
        let d = x0.dim();
        Self {
            model: x0,
            delta: delta.max(1),
            server_lr,
            accumulated: ModelVector::zeros(d),
            count: 0,
        }
    }

    pub fn on_message(&mut self, pseudo_grad: &ModelVector) -> bool {
        self.accumulated.add_assign(pseudo_grad);
        self.count += 1;
        if self.count >= self.delta {
            self.model.axpy(-self.server_lr / self.count as f64, &self.accumulated);
            self.accumulated.set_zero();
            self.count = 0;
            true
        } else {
            false
        }
    }

    pub fn model(&self) -> &ModelVector {
        &self.model
    }
}

/// Outcome of one synchronous round.
#[derive(Clone, Debug, PartialEq)]
pub struct SyncRound {
    pub participants: Vec<usize>,
    pub latencies: Vec<f64>,
    /// Max of the participants' latencies.
    pub duration: f64,
}

/// Synchronous FedAvg with uniform client sampling without replacement.
#[derive(Clone, Debug)]
pub struct SyncFedAvg {
    model: ModelVector,
    sample_count: usize,
    client_rounds: Vec<u64>,
    round: u64,
}

impl SyncFedAvg {
    pub fn new(x0: ModelVector, sample_count: usize, n: usize) -> Self {
        Self {
            model: x0,
            sample_count,
            client_rounds: vec![0; n],
            round: 0,
        }
    }

    pub fn model(&self) -> &ModelVector {
        &self.model
    }

    pub fn rounds(&self) -> u64 {
        self.round
    }

    /// Participants and response times of the next round. Both come from
    /// keyed streams, so planning does not consume any state.
    pub fn plan_round(&self, streams: &Streams, events: &EventModel) -> SyncRound {
        let n = self.client_rounds.len();
        let mut rng = streams.sampling(self.round);
        let mut participants = rand::seq::index::sample(&mut rng, n, self.sample_count).into_vec();
        participants.sort_unstable();
        let latencies: Vec<f64> = participants
            .iter()
            .map(|&i| events.client_latency(i, &mut streams.latency(i, self.round)))
            .collect();
        let duration = latencies.iter().copied().fold(0.0, f64::max);
        SyncRound {
            participants,
            latencies,
            duration,
        }
    }

    /// Samples the round's participants, runs their local steps from the
    /// current model and replaces the model with the mean of the results.
    #[allow(clippy::too_many_arguments)]
    pub fn run_round(
        &mut self,
        objectives: &[Objective],
        noise: &NoiseModel,
        alpha: f64,
        local_steps: u32,
        streams: &Streams,
        events: &EventModel,
        guard: &DivergenceGuard,
    ) -> Result<SyncRound> {
        let plan = self.plan_round(streams, events);
        let mut locals = Vec::with_capacity(plan.participants.len());
        for &i in &plan.participants {
            let mut noise_rng = streams.noise(i, self.client_rounds[i]);
            self.client_rounds[i] += 1;
            locals.push(local_sgd(&objectives[i], noise, &self.model, alpha, local_steps, &mut noise_rng, guard)?);
        }
        self.model = ModelVector::mean(&locals).expect("at least one participant");
        self.round += 1;
        Ok(plan)
    }
}
