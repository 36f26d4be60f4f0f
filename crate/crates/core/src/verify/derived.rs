//! The aggregator-free form of the AREA iteration.
//!
//! Each client holds a pending local model `x_i` (already advanced by `M`
//! local steps from the last server model it saw) and a memory `y_i`. A
//! client event moves `x_i` into `y_i` and recomputes `x_i` from the current
//! server model; a server event sets `x_s` to the mean of the memories.

use crate::error::{AreaError, Result};
use crate::math::{ModelVector, NoiseModel};
use crate::protocol::{local_sgd, AggregationCriterion, DivergenceGuard};
use crate::rng::Streams;
use crate::scheduler::{EventIndex, EventSource};
use crate::schedules::StepSchedule;
use crate::trial::{Method, Problem, StopRule, TrialSpec};

#[derive(Clone, Debug)]
pub struct DerivedIterates {
    pub x: Vec<ModelVector>,
    pub y: Vec<ModelVector>,
    pub x_s: ModelVector,
    pub k: u64,
    rounds: Vec<u64>,
    schedule: StepSchedule,
    local_steps: u32,
}

impl DerivedIterates {
    pub fn new(
        problem: &Problem,
        noise: &NoiseModel,
        schedule: StepSchedule,
        local_steps: u32,
        streams: &Streams,
        guard: &DivergenceGuard,
    ) -> Result<Self> {
        let x_s = problem.x0.clone();
        let alpha = schedule.alpha(0);
        let n = problem.client_count();
        let mut x = Vec::with_capacity(n);
        for (i, obj) in problem.objectives.iter().enumerate() {
            let mut rng = streams.noise(i, 0);
            x.push(local_sgd(obj, noise, &x_s, alpha, local_steps, &mut rng, guard)?);
        }
        Ok(Self {
            x,
            y: vec![x_s.clone(); n],
            x_s,
            k: 0,
            rounds: vec![0; n],
            schedule,
            local_steps,
        })
    }

    /// `y_i ← x_i`, `x_i ← G^M_{α_{k+1}}[x_s]`.
    pub fn client_event(
        &mut self,
        i: usize,
        problem: &Problem,
        noise: &NoiseModel,
        streams: &Streams,
        guard: &DivergenceGuard,
    ) -> Result<()> {
        self.k += 1;
        self.rounds[i] += 1;
        let alpha = self.schedule.alpha(self.k);
        let mut rng = streams.noise(i, self.rounds[i]);
        let next = local_sgd(
            &problem.objectives[i],
            noise,
            &self.x_s,
            alpha,
            self.local_steps,
            &mut rng,
            guard,
        )?;
        self.y[i] = std::mem::replace(&mut self.x[i], next);
        Ok(())
    }

    /// `x_s ← ȳ`.
    pub fn server_event(&mut self) {
        self.k += 1;
        self.x_s = self.y_bar();
    }

    pub fn y_bar(&self) -> ModelVector {
        ModelVector::mean(&self.y).expect("at least one client")
    }
}

/// Replays an AREA trial specification through the derived recursions,
/// calling `visit` after every iteration (and once at `k = 0`).
pub fn run_derived<F>(problem: &Problem, spec: &TrialSpec, seed: u64, mut visit: F) -> Result<DerivedIterates>
where
    F: FnMut(&DerivedIterates),
{
    spec.validate(problem)?;
    let Method::Area { criterion } = spec.method else {
        return Err(AreaError::config("derived iterates describe AREA only"));
    };
    let streams = Streams::new(seed);
    let mut state = DerivedIterates::new(problem, &spec.noise, spec.schedule, spec.local_steps, &streams, &spec.guard)?;
    visit(&state);
    let k_max = match spec.stop {
        StopRule::Iterations(k) => k,
        StopRule::Horizon(_) => u64::MAX,
    };
    let horizon = spec.stop.horizon();
    let (period, delta) = match criterion {
        AggregationCriterion::Periodic { period } => (period, u32::MAX),
        AggregationCriterion::Buffered { delta } => (f64::INFINITY, delta),
        AggregationCriterion::PoissonServer => (f64::INFINITY, u32::MAX),
    };
    let mut tick = period;
    let mut since = 0u32;
    let mut t = 0.0;
    let mut source = EventSource::new(spec.events.clone(), streams.events())?;
    while state.k < k_max {
        let (event, dt) = source.next_event();
        let t_event = t + dt;
        while tick <= t_event.min(horizon) && state.k < k_max {
            state.server_event();
            visit(&state);
            tick += period;
        }
        if t_event > horizon || state.k >= k_max {
            break;
        }
        t = t_event;
        match event {
            EventIndex::Client(i) => {
                state.client_event(i, problem, &spec.noise, &streams, &spec.guard)?;
                visit(&state);
                since += 1;
                if since >= delta {
                    since = 0;
                    state.server_event();
                    visit(&state);
                }
            }
            EventIndex::Server if criterion.is_event_driven() => {
                state.server_event();
                visit(&state);
            }
            EventIndex::Server => {}
        }
    }
    Ok(state)
}
