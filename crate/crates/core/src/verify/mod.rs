//! Independent checks of the structural identities and convergence rates.

pub mod checks;
pub mod conservation;
pub mod derived;

use serde::Serialize;

use crate::error::Result;
use crate::rng::stream;

pub use checks::{
    bias_demo, bias_demo_suite, conservation_diverging, conservation_sweep, convex_rate, equivalence_gap,
    equivalence_sweep, fault_injection, gd_reduction_gap, log_grid, random_rates, server_rate_grid,
    strongly_convex_rate, strongly_convex_rate_with, BiasDemo, StronglyConvexSetup, RateCheck, ServerRateCheck,
};
pub use conservation::{aggregator_violation, check_aggregator_identity, ConservationMonitor};
pub use derived::{run_derived, DerivedIterates};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SuiteKind {
    Invariants,
    Rates,
    Oracle,
    All,
}

impl std::str::FromStr for SuiteKind {
    type Err = crate::error::AreaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "invariants" => Ok(SuiteKind::Invariants),
            "rates" => Ok(SuiteKind::Rates),
            "oracle" => Ok(SuiteKind::Oracle),
            "all" => Ok(SuiteKind::All),
            other => Err(crate::error::AreaError::config(format!("unknown verify suite '{other}'"))),
        }
    }
}

/// Run sizes. `full` uses the sizes the acceptance thresholds were set for.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Effort {
    pub iterations: u64,
    pub seeds: u64,
    pub rate_trials: usize,
    pub rate_k_max: u64,
}

impl Effort {
    pub fn full() -> Self {
        Self {
            iterations: 10_000,
            seeds: 5,
            rate_trials: 200,
            rate_k_max: 100_000,
        }
    }

    pub fn quick() -> Self {
        Self {
            iterations: 1_000,
            seeds: 1,
            rate_trials: 20,
            rate_k_max: 10_000,
        }
    }
}

/// One line of the verification table.
#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub suite: &'static str,
    pub name: String,
    pub value: f64,
    /// Human-readable acceptance condition on `value`.
    pub condition: String,
    pub passed: bool,
}

fn at_most(suite: &'static str, name: impl Into<String>, value: f64, limit: f64) -> CheckResult {
    CheckResult {
        suite,
        name: name.into(),
        value,
        condition: format!("<= {limit:e}"),
        passed: value <= limit,
    }
}

fn at_least(suite: &'static str, name: impl Into<String>, value: f64, limit: f64) -> CheckResult {
    CheckResult {
        suite,
        name: name.into(),
        value,
        condition: format!(">= {limit:e}"),
        passed: value >= limit,
    }
}

fn within(suite: &'static str, name: impl Into<String>, value: f64, lo: f64, hi: f64) -> CheckResult {
    CheckResult {
        suite,
        name: name.into(),
        value,
        condition: format!("in [{lo}, {hi}]"),
        passed: (lo..=hi).contains(&value),
    }
}

pub fn run_suite(kind: SuiteKind, effort: Effort, seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let all = kind == SuiteKind::All;
    if all || kind == SuiteKind::Invariants {
        let cases = conservation_sweep(20, effort.iterations, seed)?;
        let worst = cases.iter().map(|c| c.max_violation).fold(0.0, f64::max);
        out.push(at_most("invariants", "aggregator identity (20 random configs)", worst, 1e-9));
        out.push(at_most("invariants", "aggregator identity (growing iterates)", conservation_diverging(seed)?, 1e-9));
        out.push(at_least("invariants", "fault injection detected", fault_injection(seed, Some(3))?, 1e-3));
        let suite = checks::strongly_convex_rate_suite(seed)?;
        let problem = crate::trial::Problem::new(
            suite.objectives,
            suite.constants,
            crate::math::ModelVector::filled(4, 1.0),
        )?;
        out.push(at_most("invariants", "round-robin gradient-descent reduction", gd_reduction_gap(&problem, 0.05, 1000)?, 1e-12));
        let mut rng = stream(seed, "server-rate", &[]);
        let mut worst_offset = 0.0f64;
        for _ in 0..10 {
            let lambda = random_rates(&mut rng, 16, 0.1, 10.0);
            worst_offset = worst_offset.max(server_rate_grid(&lambda, 200)?.offset_steps);
        }
        out.push(at_most("invariants", "optimal server rate on grid (steps)", worst_offset, 1.0));
    }
    if all || kind == SuiteKind::Oracle {
        let cases = equivalence_sweep(effort.seeds, effort.iterations, seed)?;
        let worst = cases.iter().map(|c| c.gap).fold(0.0, f64::max);
        out.push(at_most("oracle", "protocol vs derived iterates", worst, 1e-12));
        let demo = bias_demo(&[10.0, 1.0], &bias_demo_suite()?, 100_000, seed)?;
        out.push(at_most(
            "oracle",
            "bias demo: area error / naive error",
            demo.area_error / demo.naive_error,
            0.1,
        ));
    }
    if all || kind == SuiteKind::Rates {
        for m in [1u32, 5] {
            let r = strongly_convex_rate(m, effort.rate_trials, effort.rate_k_max, seed)?;
            out.push(within("rates", format!("strongly convex slope (M={m})"), r.slope, -1.35, -0.65));
        }
        let horizons: Vec<u64> = log_grid(100, effort.rate_k_max, 1);
        let r = convex_rate(&horizons, effort.rate_trials, seed)?;
        out.push(within("rates", "convex ergodic slope", r.slope, -0.70, -0.30));
    }
    Ok(out)
}
