//! Individual verification checks. Each returns the measured quantity; the
//! caller compares it against a threshold.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::baselines::BaselineKind;
use crate::data::{absdev_suite, quadratic_suite_from_parts, synthetic_quadratic_suite, Suite};
use crate::error::{AreaError, Result};
use crate::math::{Curvature, ModelVector, NoiseModel};
use crate::metrics::rate_fit;
use crate::protocol::{AggregationCriterion, AreaClient, AreaServer, DivergenceGuard};
use crate::rng::{stream, trial_seed, Streams, StreamRng};
use crate::scheduler::{EventIndex, EventModel, EventSource};
use crate::schedules::{ConvexRateInputs, StepSchedule};
use crate::trial::{run_trial, run_trial_observed, MetricCadence, Method, Observer, Problem, StopRule, TrialSpec};
use crate::verify::conservation::{aggregator_violation, check_aggregator_identity};
use crate::verify::derived::run_derived;

/// Cadence that only records the first and last row.
const QUIET: MetricCadence = MetricCadence {
    every: 0,
    on_aggregation: false,
};

fn area_spec(criterion: AggregationCriterion, events: EventModel, schedule: StepSchedule, noise: NoiseModel, m: u32, k: u64) -> TrialSpec {
    TrialSpec {
        method: Method::Area { criterion },
        events,
        schedule,
        noise,
        local_steps: m,
        stop: StopRule::Iterations(k),
        cadence: QUIET,
        guard: DivergenceGuard::default(),
        record_log: false,
    }
}

fn uniform_stationary(n: usize) -> EventModel {
    EventModel::StationaryIid {
        p: vec![1.0 / (n + 1) as f64; n],
        p_s: 1.0 / (n + 1) as f64,
    }
}

fn problem_from(suite: Suite, x0: ModelVector) -> Result<Problem> {
    Problem::new(suite.objectives, suite.constants, x0)
}

/// One randomized configuration of the conservation check.
#[derive(Clone, Debug, Serialize)]
pub struct ConservationCase {
    pub clients: usize,
    pub local_steps: u32,
    pub poisson: bool,
    pub sigma: f64,
    pub criterion: AggregationCriterion,
    pub max_violation: f64,
}

/// Largest aggregator-identity violation over `configs` randomized AREA runs
/// of `k` iterations each.
pub fn conservation_sweep(configs: usize, k: u64, seed: u64) -> Result<Vec<ConservationCase>> {
    let mut pick = stream(seed, "conservation-configs", &[]);
    let mut cases = Vec::with_capacity(configs);
    for c in 0..configs {
        let n = [2usize, 8, 32][pick.random_range(0..3)];
        let m = [1u32, 5, 50][pick.random_range(0..3)];
        // Cover both event models and both noise levels evenly.
        let poisson = c % 2 == 0;
        let sigma = if (c / 2) % 2 == 0 { 0.0 } else { 1.0 };
        let criterion = if pick.random_bool(0.5) {
            AggregationCriterion::PoissonServer
        } else {
            AggregationCriterion::Buffered {
                delta: pick.random_range(1..=6),
            }
        };
        let mut suite_rng = stream(seed, "conservation-suite", &[c as u64]);
        let suite = synthetic_quadratic_suite(n, 5, 1.0, 10.0, 1.0, &mut suite_rng)?;
        let x0 = ModelVector::from_vec((0..5).map(|_| suite_rng.random_range(-3.0..3.0)).collect());
        let events = if poisson {
            let lambda: Vec<f64> = (0..n).map(|_| 10f64.powf(suite_rng.random_range(-1.0..1.0))).collect();
            EventModel::poisson_with_optimal_server(lambda)?
        } else {
            uniform_stationary(n)
        };
        let schedule = StepSchedule::theorem_one(1.0, 10.0, m, events.p_min());
        let problem = problem_from(suite, x0)?;
        let spec = area_spec(criterion, events, schedule, NoiseModel::AdditiveGaussian { sigma }, m, k);
        let (v, _) = check_aggregator_identity(&problem, &spec, trial_seed(seed, c))?;
        cases.push(ConservationCase {
            clients: n,
            local_steps: m,
            poisson,
            sigma,
            criterion,
            max_violation: v,
        });
    }
    Ok(cases)
}

/// Violation of a run whose iterates grow geometrically (step size beyond
/// `2/L`), still short enough to stay finite.
pub fn conservation_diverging(seed: u64) -> Result<f64> {
    let suite = synthetic_quadratic_suite(4, 3, 1.0, 10.0, 1.0, &mut stream(seed, "diverging-suite", &[]))?;
    let problem = problem_from(suite, ModelVector::filled(3, 1.0))?;
    let spec = area_spec(
        AggregationCriterion::PoissonServer,
        uniform_stationary(4),
        StepSchedule::Constant { alpha: 0.35 },
        NoiseModel::None,
        3,
        600,
    );
    let (v, outcome) = check_aggregator_identity(&problem, &spec, seed)?;
    debug_assert!(outcome.final_model.norm() > 1e6, "run was meant to blow up");
    Ok(v)
}

/// Runs AREA by hand, skipping the aggregator reset at the `fault_at`-th
/// aggregation, and returns the largest violation seen.
pub fn fault_injection(seed: u64, fault_at: Option<u64>) -> Result<f64> {
    let n = 4;
    let suite = synthetic_quadratic_suite(n, 3, 1.0, 4.0, 2.0, &mut stream(seed, "fault-suite", &[]))?;
    let problem = problem_from(suite, ModelVector::filled(3, 3.0))?;
    let noise = NoiseModel::AdditiveGaussian { sigma: 0.5 };
    let guard = DivergenceGuard::default();
    let streams = Streams::new(seed);
    let mut server = AreaServer::init(
        problem.x0.clone(),
        StepSchedule::Constant { alpha: 0.1 },
        AggregationCriterion::PoissonServer,
        n,
    )?;
    let reply = server.broadcast();
    let mut clients: Vec<AreaClient> = (0..n).map(|i| AreaClient::new(i, &reply, 2)).collect();
    let mut source = EventSource::new(uniform_stationary(n), streams.events())?;
    let mut aggregations = 0u64;
    let mut worst = aggregator_violation(&server, &clients);
    for _ in 0..2000 {
        match source.next_event().0 {
            EventIndex::Client(i) => {
                let mut rng = streams.noise(i, clients[i].round_index());
                let msg = clients[i].round(&problem.objectives[i], &noise, &mut rng, &guard)?;
                let r = server.handle_client(&msg)?;
                clients[i].receive(r);
            }
            EventIndex::Server => {
                aggregations += 1;
                if Some(aggregations) == fault_at {
                    server.aggregate_without_reset();
                } else {
                    server.aggregate();
                }
            }
        }
        worst = worst.max(aggregator_violation(&server, &clients));
    }
    Ok(worst)
}

#[derive(Default)]
struct ProtocolRecorder {
    states: Vec<Vec<f64>>,
}

impl Observer for ProtocolRecorder {
    fn on_area(&mut self, server: &AreaServer, clients: &[AreaClient]) {
        let mut row = server.model().as_slice().to_vec();
        for c in clients {
            row.extend_from_slice(c.memory().as_slice());
        }
        self.states.push(row);
    }
}

/// Largest per-coordinate gap between the message-passing run and the
/// derived recursions, over `x_s` and every `y_i` at every iteration.
pub fn equivalence_gap(problem: &Problem, spec: &TrialSpec, seed: u64) -> Result<f64> {
    let mut rec = ProtocolRecorder::default();
    run_trial_observed(problem, spec, seed, &mut rec)?;
    let mut idx = 0usize;
    let mut gap = 0.0f64;
    run_derived(problem, spec, seed, |d| {
        let Some(row) = rec.states.get(idx) else {
            gap = f64::INFINITY;
            return;
        };
        let mut j = 0;
        for v in std::iter::once(&d.x_s).chain(&d.y) {
            for &a in v.as_slice() {
                let diff = (a - row[j]).abs();
                gap = if diff.is_nan() { f64::INFINITY } else { gap.max(diff) };
                j += 1;
            }
        }
        idx += 1;
    })?;
    if idx != rec.states.len() {
        return Ok(f64::INFINITY);
    }
    Ok(gap)
}

/// One configuration of the equivalence check.
#[derive(Clone, Debug, Serialize)]
pub struct EquivalenceCase {
    pub clients: usize,
    pub local_steps: u32,
    pub poisson: bool,
    pub seed: u64,
    pub gap: f64,
}

/// Equivalence over `n ∈ {2, 8}`, `M ∈ {1, 3}`, both event models and
/// `seeds` seeds, `k` iterations each.
pub fn equivalence_sweep(seeds: u64, k: u64, master: u64) -> Result<Vec<EquivalenceCase>> {
    let mut cases = Vec::new();
    for n in [2usize, 8] {
        for m in [1u32, 3] {
            for poisson in [false, true] {
                for s in 0..seeds {
                    let seed = trial_seed(master, (s * 1000 + n as u64 * 10 + m as u64) as usize + poisson as usize);
                    let mut rng = stream(seed, "equivalence-suite", &[]);
                    let suite = synthetic_quadratic_suite(n, 3, 1.0, 5.0, 1.0, &mut rng)?;
                    let x0 = ModelVector::from_vec((0..3).map(|_| rng.random_range(-2.0..2.0)).collect());
                    let problem = problem_from(suite, x0)?;
                    let events = if poisson {
                        let lambda: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..5.0)).collect();
                        EventModel::poisson_with_optimal_server(lambda)?
                    } else {
                        uniform_stationary(n)
                    };
                    let schedule = StepSchedule::theorem_one(1.0, 5.0, m, events.p_min());
                    let spec = area_spec(
                        AggregationCriterion::PoissonServer,
                        events,
                        schedule,
                        NoiseModel::AdditiveGaussian { sigma: 1.0 },
                        m,
                        k,
                    );
                    let gap = equivalence_gap(&problem, &spec, seed)?;
                    cases.push(EquivalenceCase {
                        clients: n,
                        local_steps: m,
                        poisson,
                        seed,
                        gap,
                    });
                }
            }
        }
    }
    Ok(cases)
}

/// Runs AREA on the round-robin cycle `1, …, n, s` with exact gradients and
/// one local step, and compares the server model after every cycle against
/// plain gradient descent on the averaged objective.
///
/// Replies carry the model from before the cycle's aggregation, so the
/// clients see each new model one cycle late: after cycle `2c − 1` and after
/// cycle `2c` the server holds `c` gradient-descent steps.
pub fn gd_reduction_gap(problem: &Problem, alpha: f64, cycles: u64) -> Result<f64> {
    let n = problem.client_count() as u64;
    let spec = area_spec(
        AggregationCriterion::PoissonServer,
        EventModel::round_robin(n as usize),
        StepSchedule::Constant { alpha },
        NoiseModel::None,
        1,
        cycles * (n + 1),
    );

    struct Cycles {
        period: u64,
        models: Vec<ModelVector>,
    }
    impl Observer for Cycles {
        fn on_iteration(&mut self, k: u64, _t: f64, model: &ModelVector) {
            if k % self.period == 0 {
                self.models.push(model.clone());
            }
        }
    }
    let mut obs = Cycles {
        period: n + 1,
        models: Vec::new(),
    };
    run_trial_observed(problem, &spec, 0, &mut obs)?;
    if obs.models.len() as u64 != cycles + 1 {
        return Ok(f64::INFINITY);
    }

    let mut gd = vec![problem.x0.clone()];
    for _ in 0..cycles.div_ceil(2) {
        let x = gd.last().expect("seeded");
        let mut g = ModelVector::zeros(x.dim());
        for (o, w) in problem.objectives.iter().zip(&problem.weights) {
            g.axpy(*w, &o.gradient(x)?);
        }
        gd.push(x.sub(&g.scaled(alpha)));
    }
    let mut gap = 0.0f64;
    for (c, model) in obs.models.iter().enumerate() {
        let expected = &gd[c.div_ceil(2)];
        gap = gap.max(model.max_abs_diff(expected));
    }
    Ok(gap)
}

/// Two-client example of participation bias.
#[derive(Clone, Debug, Serialize)]
pub struct BiasDemo {
    pub area_error: f64,
    pub naive_error: f64,
    /// Distance from the naive method's final model to the fastest client's
    /// minimizer.
    pub naive_to_fast: f64,
    pub events: u64,
}

/// AREA against asynchronous FedAvg with `Δ = 1` under Poisson clocks with
/// the given client `rates`, both with the decreasing step schedule, over a
/// horizon of about `events` drawn events.
pub fn bias_demo(rates: &[f64], suite: &Suite, events: u64, seed: u64) -> Result<BiasDemo> {
    let n = suite.client_count();
    if rates.len() != n {
        return Err(AreaError::config("one rate per client required"));
    }
    let x_star = suite
        .constants
        .x_star
        .clone()
        .ok_or_else(|| AreaError::config("bias demo needs a known minimizer"))?;
    let u_stars = suite
        .constants
        .u_stars
        .clone()
        .ok_or_else(|| AreaError::config("bias demo needs local minimizers"))?;
    let model = EventModel::poisson_with_optimal_server(rates.to_vec())?;
    let horizon = events as f64 / model.total_rate();
    let schedule = StepSchedule::theorem_one(suite.constants.mu, suite.constants.lipschitz_l, 1, model.p_min());
    let problem = problem_from(suite.clone(), ModelVector::zeros(suite.dim()))?;
    let mut spec = area_spec(AggregationCriterion::PoissonServer, model, schedule, NoiseModel::None, 1, 0);
    spec.stop = StopRule::Horizon(horizon);
    let area = run_trial(&problem, &spec, seed)?;
    spec.method = Method::Baseline(BaselineKind::AsyncFedAvg { delta: 1 });
    let naive = run_trial(&problem, &spec, seed)?;
    let fastest = rates
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("rates nonempty");
    Ok(BiasDemo {
        area_error: area.final_model.dist_sq(&x_star).sqrt(),
        naive_error: naive.final_model.dist_sq(&x_star).sqrt(),
        naive_to_fast: naive.final_model.dist_sq(&u_stars[fastest]).sqrt(),
        events,
    })
}

/// The standard demo: `f_i(x) = ½(x − c_i)²` with `c = (−1, +1)`.
pub fn bias_demo_suite() -> Result<Suite> {
    quadratic_suite_from_parts(
        vec![Curvature::identity(1), Curvature::identity(1)],
        vec![ModelVector::from_vec(vec![-1.0]), ModelVector::from_vec(vec![1.0])],
    )
}

/// Outcome of an empirical rate check.
#[derive(Clone, Debug, Serialize)]
pub struct RateCheck {
    pub slope: f64,
    /// `(k, mean error)` pairs the slope was fitted on.
    pub points: Vec<(f64, f64)>,
    pub trials: usize,
}

/// Log-spaced integers in `[lo, hi]`, `per_decade` per decade.
pub fn log_grid(lo: u64, hi: u64, per_decade: usize) -> Vec<u64> {
    let decades = (hi as f64 / lo as f64).log10();
    let count = (decades * per_decade as f64).round() as usize;
    let mut out: Vec<u64> = (0..=count)
        .map(|j| (lo as f64 * 10f64.powf(j as f64 / per_decade as f64)).round() as u64)
        .collect();
    out.dedup();
    out
}

/// Problem and noise parameters of the strongly convex rate check.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct StronglyConvexSetup {
    pub clients: usize,
    pub dim: usize,
    pub mu: f64,
    pub lipschitz_l: f64,
    pub zeta: f64,
    pub sigma: f64,
    /// Every coordinate of `x0 − x*`.
    pub offset: f64,
}

impl Default for StronglyConvexSetup {
    fn default() -> Self {
        Self {
            clients: 8,
            dim: 4,
            mu: 1.0,
            lipschitz_l: 10.0,
            zeta: 1.0,
            sigma: 1.0,
            offset: 2.0,
        }
    }
}

/// Quadratic suite used by the strongly convex rate check.
pub fn strongly_convex_rate_suite(seed: u64) -> Result<Suite> {
    let s = StronglyConvexSetup::default();
    synthetic_quadratic_suite(s.clients, s.dim, s.mu, s.lipschitz_l, s.zeta, &mut stream(seed, "rate-suite", &[]))
}

/// Mean `‖x_{s,k} − x*‖²` over `trials` runs of the decreasing schedule on
/// the strongly convex suite, fitted over `[k_max/10, k_max]`.
pub fn strongly_convex_rate(local_steps: u32, trials: usize, k_max: u64, seed: u64) -> Result<RateCheck> {
    strongly_convex_rate_with(StronglyConvexSetup::default(), local_steps, trials, k_max, seed)
}

pub fn strongly_convex_rate_with(
    setup: StronglyConvexSetup,
    local_steps: u32,
    trials: usize,
    k_max: u64,
    seed: u64,
) -> Result<RateCheck> {
    let suite = synthetic_quadratic_suite(
        setup.clients,
        setup.dim,
        setup.mu,
        setup.lipschitz_l,
        setup.zeta,
        &mut stream(seed, "rate-suite", &[]),
    )?;
    let x_star = suite.constants.x_star.clone().expect("quadratic suite");
    let n = suite.client_count();
    let events = uniform_stationary(n);
    let schedule = StepSchedule::theorem_one(suite.constants.mu, suite.constants.lipschitz_l, local_steps, events.p_min());
    let x0 = x_star.add(&ModelVector::filled(x_star.dim(), setup.offset));
    let problem = problem_from(suite, x0)?;
    let spec = area_spec(
        AggregationCriterion::PoissonServer,
        events,
        schedule,
        NoiseModel::AdditiveGaussian { sigma: setup.sigma },
        local_steps,
        k_max,
    );
    let checkpoints = log_grid((k_max / 10).max(1), k_max, 20);

    struct Dist<'a> {
        x_star: &'a ModelVector,
        at: &'a [u64],
        next: usize,
        out: Vec<f64>,
    }
    impl Observer for Dist<'_> {
        fn on_iteration(&mut self, k: u64, _t: f64, model: &ModelVector) {
            if self.next < self.at.len() && k == self.at[self.next] {
                self.out.push(model.dist_sq(self.x_star));
                self.next += 1;
            }
        }
    }
    let per_trial: Vec<Vec<f64>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut obs = Dist {
                x_star: &x_star,
                at: &checkpoints,
                next: 0,
                out: Vec::with_capacity(checkpoints.len()),
            };
            run_trial_observed(&problem, &spec, trial_seed(seed, t), &mut obs)?;
            Ok(obs.out)
        })
        .collect::<Result<_>>()?;
    let points = mean_curve(&checkpoints, &per_trial)?;
    let slope = rate_fit(&points, 0.0, f64::INFINITY)?;
    Ok(RateCheck { slope, points, trials })
}

fn mean_curve(at: &[u64], per_trial: &[Vec<f64>]) -> Result<Vec<(f64, f64)>> {
    if per_trial.iter().any(|r| r.len() != at.len()) {
        return Err(AreaError::Protocol("a trial ended before its last checkpoint".into()));
    }
    Ok(at
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            let mean = per_trial.iter().map(|r| r[j]).sum::<f64>() / per_trial.len() as f64;
            (k as f64, mean)
        })
        .collect())
}

/// Centers of the nonsmooth rate check; the unique minimizer is 0.
pub const ABSDEV_CENTERS: [f64; 4] = [-1.0, 0.0, 0.0, 2.0];

/// Mean `f(x̄_{s,K}) − f*` of the ergodic average under the constant step for
/// each horizon in `horizons`, fitted against `K`.
pub fn convex_rate(horizons: &[u64], trials: usize, seed: u64) -> Result<RateCheck> {
    let suite = absdev_suite(&ABSDEV_CENTERS)?;
    let f_star = suite.constants.f_star.expect("absdev suite");
    let x_star = suite.constants.x_star.clone().expect("absdev suite");
    let n = suite.client_count();
    let events = uniform_stationary(n);
    let (_, p_s) = events.probabilities();
    let sigma = 1.0;
    let x0 = ModelVector::from_vec(vec![4.0]);
    let dist0_sq = x0.dist_sq(&x_star);
    let problem = problem_from(suite, x0)?;

    #[derive(Default)]
    struct Ergodic {
        sum: Option<ModelVector>,
        count: u64,
        horizon: u64,
    }
    impl Observer for Ergodic {
        fn on_iteration(&mut self, k: u64, _t: f64, model: &ModelVector) {
            if k < self.horizon {
                match &mut self.sum {
                    Some(s) => s.add_assign(model),
                    None => self.sum = Some(model.clone()),
                }
                self.count += 1;
            }
        }
    }

    let mut points = Vec::with_capacity(horizons.len());
    for &k in horizons {
        let alpha = ConvexRateInputs {
            horizon: k,
            p_s,
            q_bar: events.q_bar(),
            sigma,
            lipschitz_b: 1.0,
            local_steps: 1,
            dist0_sq,
        }
        .alpha();
        let spec = area_spec(
            AggregationCriterion::PoissonServer,
            events.clone(),
            StepSchedule::ConstantTheoremTwo { alpha },
            NoiseModel::AdditiveGaussian { sigma },
            1,
            k,
        );
        let gaps: Vec<f64> = (0..trials)
            .into_par_iter()
            .map(|t| {
                let mut obs = Ergodic {
                    horizon: k,
                    ..Default::default()
                };
                run_trial_observed(&problem, &spec, trial_seed(seed ^ k, t), &mut obs)?;
                let avg = obs.sum.expect("k >= 1").scaled(1.0 / obs.count as f64);
                Ok(problem.train_loss(&avg)? - f_star)
            })
            .collect::<Result<_>>()?;
        points.push((k as f64, gaps.iter().sum::<f64>() / trials as f64));
    }
    let slope = rate_fit(&points, 0.0, f64::INFINITY)?;
    Ok(RateCheck { slope, points, trials })
}

/// Where the convex rate bound is smallest on a log grid of server rates.
#[derive(Clone, Debug, Serialize)]
pub struct ServerRateCheck {
    pub closed_form: f64,
    pub grid_argmin: f64,
    /// `|ln(argmin) − ln(closed form)|` in units of the grid spacing.
    pub offset_steps: f64,
}

/// Evaluates the convex rate bound (up to its λ_s-independent factor) on
/// `points` log-spaced server rates over `[λ*/10, 10λ*]`.
pub fn server_rate_grid(lambda: &[f64], points: usize) -> Result<ServerRateCheck> {
    let closed_form = crate::schedules::optimal_lambda_s(lambda)?;
    let total: f64 = lambda.iter().sum();
    let n = lambda.len() as f64;
    let lo = (closed_form / 10.0).ln();
    let step = (100f64).ln() / (points - 1) as f64;
    let bound = |ls: f64| {
        let bar = total + ls;
        let p_s = ls / bar;
        let q_bar = lambda.iter().map(|l| bar / l).sum::<f64>() / n;
        (1.0 / p_s + 2.0 * q_bar).sqrt()
    };
    let (best, _) = (0..points)
        .map(|j| (lo + step * j as f64).exp())
        .map(|ls| (ls, bound(ls)))
        .fold((f64::NAN, f64::INFINITY), |acc, (ls, b)| if b < acc.1 { (ls, b) } else { acc });
    Ok(ServerRateCheck {
        closed_form,
        grid_argmin: best,
        offset_steps: (best.ln() - closed_form.ln()).abs() / step,
    })
}

/// Log-uniform client rates in `[lo, hi]`.
pub fn random_rates(rng: &mut StreamRng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|_| rng.random_range(a..b).exp()).collect()
}
