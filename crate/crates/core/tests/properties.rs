use area_core::data::synthetic_quadratic_suite;
use area_core::math::{ModelVector, NoiseModel};
use area_core::protocol::{AggregationCriterion, DivergenceGuard};
use area_core::rng::stream;
use area_core::scheduler::{EventIndex, EventModel};
use area_core::schedules::{beta, theorem1_alpha, theorem1_d, StepSchedule};
use area_core::trial::{MetricCadence, Method, Problem, StopRule, TrialSpec};
use area_core::verify::{check_aggregator_identity, equivalence_gap};
use proptest::prelude::*;

fn problem(n: usize, seed: u64) -> Problem {
    let suite = synthetic_quadratic_suite(n, 2, 1.0, 3.0, 1.5, &mut stream(seed, "suite", &[])).unwrap();
    Problem::new(suite.objectives, suite.constants, ModelVector::from_vec(vec![1.0, -2.0])).unwrap()
}

fn events(n: usize, kind: u8, weights: &[f64]) -> EventModel {
    let w: Vec<f64> = weights.iter().take(n).copied().collect();
    match kind {
        0 => {
            let total: f64 = w.iter().sum::<f64>() + 1.0;
            EventModel::StationaryIid {
                p: w.iter().map(|v| v / total).collect(),
                p_s: 1.0 / total,
            }
        }
        1 => EventModel::poisson_with_optimal_server(w).unwrap(),
        _ => {
            let mut order: Vec<EventIndex> = (0..n).rev().map(EventIndex::Client).collect();
            order.push(EventIndex::Server);
            order.push(EventIndex::Client(0));
            EventModel::DeterministicCycle { order }
        }
    }
}

fn spec(events: EventModel, criterion: AggregationCriterion, m: u32, sigma: f64, alpha: f64, k: u64) -> TrialSpec {
    TrialSpec {
        method: Method::Area { criterion },
        events,
        schedule: StepSchedule::Constant { alpha },
        noise: if sigma > 0.0 {
            NoiseModel::AdditiveGaussian { sigma }
        } else {
            NoiseModel::None
        },
        local_steps: m,
        stop: StopRule::Iterations(k),
        cadence: MetricCadence {
            every: 0,
            on_aggregation: false,
        },
        guard: DivergenceGuard::default(),
        record_log: false,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn aggregator_identity_holds(
        n in 1usize..6,
        kind in 0u8..3,
        weights in prop::collection::vec(0.2f64..5.0, 6),
        m in 1u32..4,
        sigma in prop_oneof![Just(0.0), 0.1f64..2.0],
        alpha in 0.01f64..0.3,
        delta in 1u32..4,
        buffered in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let criterion = if buffered {
            AggregationCriterion::Buffered { delta }
        } else {
            AggregationCriterion::PoissonServer
        };
        let p = problem(n, seed);
        let s = spec(events(n, kind, &weights), criterion, m, sigma, alpha, 400);
        let (violation, outcome) = check_aggregator_identity(&p, &s, seed).unwrap();
        prop_assert!(violation <= 1e-9, "violation {violation}");
        prop_assert_eq!(outcome.iterations, 400);
    }

    #[test]
    fn protocol_matches_derived_iterates(
        n in 1usize..5,
        kind in 0u8..3,
        weights in prop::collection::vec(0.2f64..5.0, 6),
        m in 1u32..3,
        sigma in prop_oneof![Just(0.0), 0.1f64..1.0],
        seed in any::<u64>(),
    ) {
        let p = problem(n, seed);
        let s = spec(events(n, kind, &weights), AggregationCriterion::PoissonServer, m, sigma, 0.1, 300);
        let gap = equivalence_gap(&p, &s, seed).unwrap();
        prop_assert!(gap <= 1e-12, "gap {gap}");
    }

    #[test]
    fn decreasing_schedule_invariants(
        mu in 0.01f64..10.0,
        ratio in 1.0f64..100.0,
        m in 1u32..20,
        p_min in 1e-4f64..0.5,
        ks in prop::collection::vec(0u64..1_000_000, 20),
    ) {
        let l = mu * ratio;
        let d = theorem1_d(mu, l, m);
        let g = 2.0 * mu * l / (mu + l);
        let mut ks = ks;
        ks.sort_unstable();
        let mut prev = f64::INFINITY;
        for k in ks {
            let a = theorem1_alpha(k, p_min, m, g, d);
            prop_assert!(a > 0.0 && a <= d);
            prop_assert!(a <= prev);
            prop_assert!(beta(a, m, g) >= 0.5);
            prev = a;
        }
    }
}
