//! Monitoring `x_s + u_s = ȳ` along AREA runs.

use crate::error::Result;
use crate::math::ModelVector;
use crate::protocol::{AreaClient, AreaServer};
use crate::trial::{run_trial_observed, Observer, Problem, TrialOutcome, TrialSpec};

/// `‖x_s + u_s − ȳ‖ / (1 + ‖ȳ‖)`
pub fn aggregator_violation(server: &AreaServer, clients: &[AreaClient]) -> f64 {
    let y_bar = ModelVector::mean(clients.iter().map(|c| c.memory())).expect("at least one client");
    let mut lhs = server.model().add(server.aggregator());
    lhs.sub_assign(&y_bar);
    lhs.norm() / (1.0 + y_bar.norm())
}

/// Observer keeping the largest violation seen.
#[derive(Clone, Debug, Default)]
pub struct ConservationMonitor {
    pub max_violation: f64,
    pub checked: u64,
}

impl Observer for ConservationMonitor {
    fn on_area(&mut self, server: &AreaServer, clients: &[AreaClient]) {
        let v = aggregator_violation(server, clients);
        // NaN must not hide behind max().
        if v.is_nan() || v > self.max_violation {
            self.max_violation = v;
        }
        self.checked += 1;
    }
}

/// Runs an AREA trial and returns its largest violation.
pub fn check_aggregator_identity(problem: &Problem, spec: &TrialSpec, seed: u64) -> Result<(f64, TrialOutcome)> {
    let mut monitor = ConservationMonitor::default();
    let outcome = run_trial_observed(problem, spec, seed, &mut monitor)?;
    Ok((monitor.max_violation, outcome))
}
