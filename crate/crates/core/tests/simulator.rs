use area_core::baselines::BaselineKind;
use area_core::data::synthetic_quadratic_suite;
use area_core::math::{ModelVector, NoiseModel};
use area_core::protocol::{AggregationCriterion, DivergenceGuard};
use area_core::rng::stream;
use area_core::scheduler::{EventIndex, EventModel};
use area_core::schedules::StepSchedule;
use area_core::trial::{run_trial, run_trial_observed, MetricCadence, Method, Observer, Problem, StopRule, TrialSpec};

fn quad_problem(n: usize, seed: u64) -> Problem {
    let suite = synthetic_quadratic_suite(n, 3, 1.0, 4.0, 1.0, &mut stream(seed, "suite", &[])).unwrap();
    Problem::new(suite.objectives, suite.constants, ModelVector::filled(3, 2.0)).unwrap()
}

fn spec(method: Method, events: EventModel, stop: StopRule) -> TrialSpec {
    TrialSpec {
        method,
        events,
        schedule: StepSchedule::Constant { alpha: 0.05 },
        noise: NoiseModel::AdditiveGaussian { sigma: 0.5 },
        local_steps: 2,
        stop,
        cadence: MetricCadence::default(),
        guard: DivergenceGuard::default(),
        record_log: true,
    }
}

fn area(criterion: AggregationCriterion) -> Method {
    Method::Area { criterion }
}

#[test]
fn zero_iterations_leave_only_the_start() {
    let p = quad_problem(3, 1);
    let s = spec(
        area(AggregationCriterion::PoissonServer),
        EventModel::poisson_with_optimal_server(vec![1.0; 3]).unwrap(),
        StopRule::Iterations(0),
    );
    let out = run_trial(&p, &s, 5).unwrap();
    assert!(out.log.is_empty());
    assert_eq!(out.series.len(), 1);
    assert_eq!(out.series.rows()[0].wall_time, 0.0);
    assert_eq!(out.final_model, p.x0);
}

#[test]
fn same_seed_same_trial() {
    let p = quad_problem(4, 2);
    for method in [
        area(AggregationCriterion::Buffered { delta: 2 }),
        Method::Baseline(BaselineKind::FedBuff { delta: 2, server_lr: 1.0 }),
        Method::Baseline(BaselineKind::AsyncFedAvg { delta: 2 }),
        Method::Baseline(BaselineKind::SyncFedAvg { sample_count: 2 }),
    ] {
        let s = spec(
            method,
            EventModel::PoissonRates {
                lambda: vec![1.0, 2.0, 3.0, 4.0],
                lambda_s: 0.0,
            },
            StopRule::Horizon(30.0),
        );
        let a = run_trial(&p, &s, 9).unwrap();
        let b = run_trial(&p, &s, 9).unwrap();
        let bits = |o: &area_core::trial::TrialOutcome| {
            o.series
                .rows()
                .iter()
                .map(|r| (r.wall_time.to_bits(), r.k, r.train_loss.to_bits()))
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&a), bits(&b), "{}", method.name());
        assert_eq!(a.log, b.log);
        assert_eq!(a.final_model, b.final_model);
        let c = run_trial(&p, &s, 10).unwrap();
        assert_ne!(a.final_model, c.final_model);
    }
}

#[test]
fn buffered_aggregation_count_matches_messages() {
    let n = 128;
    let p = quad_problem(n, 3);
    let s = spec(
        area(AggregationCriterion::Buffered { delta: 4 }),
        EventModel::PoissonRates {
            lambda: vec![10.0; n],
            lambda_s: 0.0,
        },
        StopRule::Horizon(3.0),
    );
    let out = run_trial(&p, &s, 4).unwrap();
    let messages = (0..n).map(|i| out.log.count(EventIndex::Client(i))).sum::<usize>() as u64;
    assert_eq!(messages, out.client_messages);
    assert!(messages > 1000);
    assert_eq!(out.aggregations, messages / 4);
    // Each message and each aggregation is one server iteration.
    assert_eq!(out.iterations, messages + messages / 4);
}

#[test]
fn event_draws_do_not_depend_on_method_or_local_steps() {
    let p = quad_problem(3, 5);
    let events = EventModel::poisson_with_optimal_server(vec![1.0, 2.0, 5.0]).unwrap();
    let mut a = spec(area(AggregationCriterion::PoissonServer), events.clone(), StopRule::Horizon(20.0));
    let base = run_trial(&p, &a, 6).unwrap();
    a.local_steps = 7;
    let more_steps = run_trial(&p, &a, 6).unwrap();
    let fedbuff = spec(
        Method::Baseline(BaselineKind::FedBuff { delta: 3, server_lr: 1.0 }),
        events,
        StopRule::Horizon(20.0),
    );
    let other = run_trial(&p, &fedbuff, 6).unwrap();
    assert_eq!(base.log, more_steps.log);
    assert_eq!(base.log, other.log);
}

#[test]
fn wall_times_increase_and_series_is_ordered() {
    let p = quad_problem(5, 7);
    let s = spec(
        area(AggregationCriterion::Periodic { period: 0.7 }),
        EventModel::PoissonRates {
            lambda: vec![2.0; 5],
            lambda_s: 1.0,
        },
        StopRule::Horizon(25.0),
    );
    let out = run_trial(&p, &s, 8).unwrap();
    let rec = &out.log.records;
    assert!(rec.windows(2).all(|w| w[0].wall_time < w[1].wall_time));
    assert!(rec.iter().enumerate().all(|(i, r)| r.k == i as u64 + 1));
    let rows = out.series.rows();
    assert!(rows.windows(2).all(|w| w[0].wall_time <= w[1].wall_time));
    assert_eq!(rows.last().unwrap().wall_time, 25.0);
    // Periodic aggregation: one per period elapsed.
    assert_eq!(out.aggregations, (25.0f64 / 0.7).floor() as u64);
    // Server events of the clock are skipped under a wall-clock criterion.
    assert!(out.log.count(EventIndex::Server) > 0);
}

struct Trajectory(Vec<ModelVector>);

impl Observer for Trajectory {
    fn on_iteration(&mut self, _k: u64, _t: f64, model: &ModelVector) {
        self.0.push(model.clone());
    }
}

#[test]
fn relabeling_clients_keeps_server_trajectory() {
    let p = quad_problem(4, 11);
    let perm = [2usize, 0, 3, 1];
    let relabeled = Problem::new(
        perm.iter().map(|&i| p.objectives[i].clone()).collect(),
        p.constants.clone(),
        p.x0.clone(),
    )
    .unwrap();
    let order = [1usize, 3, 0, 0, 2, 1];
    let cycle = |map: &dyn Fn(usize) -> usize| {
        let mut o: Vec<EventIndex> = order.iter().map(|&i| EventIndex::Client(map(i))).collect();
        o.push(EventIndex::Server);
        EventModel::DeterministicCycle { order: o }
    };
    let inverse = |i: usize| perm.iter().position(|&j| j == i).unwrap();
    let mut a = spec(area(AggregationCriterion::PoissonServer), cycle(&|i| i), StopRule::Iterations(700));
    a.noise = NoiseModel::None;
    let mut b = a.clone();
    b.events = cycle(&inverse);
    let mut ta = Trajectory(Vec::new());
    let mut tb = Trajectory(Vec::new());
    run_trial_observed(&p, &a, 1, &mut ta).unwrap();
    run_trial_observed(&relabeled, &b, 1, &mut tb).unwrap();
    // The start plus one model per iteration.
    assert_eq!(ta.0.len(), 701);
    assert_eq!(ta.0, tb.0);
}

#[test]
fn divergence_is_flagged_and_recorded() {
    let p = quad_problem(3, 12);
    let mut s = spec(
        area(AggregationCriterion::PoissonServer),
        EventModel::round_robin(3),
        StopRule::Iterations(10_000),
    );
    s.schedule = StepSchedule::Constant { alpha: 3.0 };
    s.noise = NoiseModel::None;
    let out = run_trial(&p, &s, 1).unwrap();
    assert!(out.diverged);
    assert!(out.iterations < 10_000);
    let last = out.series.last().unwrap();
    assert_eq!(last.train_loss, f64::INFINITY);
    assert_eq!(last.test_acc, 0.0);

    s.guard = DivergenceGuard { max_norm: 100.0 };
    let guarded = run_trial(&p, &s, 1).unwrap();
    assert!(guarded.diverged);
    assert!(guarded.iterations < out.iterations);
}

#[test]
fn synchronous_rounds_respect_the_horizon() {
    let p = quad_problem(6, 13);
    let s = spec(
        Method::Baseline(BaselineKind::SyncFedAvg { sample_count: 3 }),
        EventModel::PoissonRates {
            lambda: vec![1.0, 1.0, 1.0, 5.0, 5.0, 5.0],
            lambda_s: 0.0,
        },
        StopRule::Horizon(40.0),
    );
    let out = run_trial(&p, &s, 3).unwrap();
    assert!(out.wall_time <= 40.0);
    assert!(out.iterations > 5);
    assert_eq!(out.client_messages, 3 * out.iterations);
}

#[test]
fn rejects_mismatched_spec() {
    let p = quad_problem(3, 14);
    let s = spec(
        area(AggregationCriterion::PoissonServer),
        EventModel::round_robin(4),
        StopRule::Iterations(10),
    );
    assert!(run_trial(&p, &s, 1).is_err());
    let s = spec(
        area(AggregationCriterion::PoissonServer),
        EventModel::PoissonRates {
            lambda: vec![1.0; 3],
            lambda_s: 0.0,
        },
        StopRule::Iterations(10),
    );
    assert!(run_trial(&p, &s, 1).is_err());
}
