use serde::{Deserialize, Serialize};

use crate::math::ModelVector;

/// Published constants of a problem suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    /// Strong-convexity modulus (0 for merely convex suites).
    pub mu: f64,
    /// Gradient Lipschitz constant.
    pub lipschitz_l: f64,
    /// Function Lipschitz constant (nonsmooth suites).
    pub lipschitz_b: f64,
    /// Gradient-noise bound.
    pub sigma: f64,
    /// `max_i ‖x* − u_i*‖`.
    pub zeta: f64,
    pub x_star: Option<ModelVector>,
    pub u_stars: Option<Vec<ModelVector>>,
    /// Optimal value of the global objective, when known.
    pub f_star: Option<f64>,
}

impl ProblemConstants {
    /// `2μL/(μ+L)`
    pub fn gamma(&self) -> f64 {
        gamma(self.mu, self.lipschitz_l)
    }

    /// Condition number `L/μ`.
    pub fn kappa(&self) -> f64 {
        self.lipschitz_l / self.mu
    }

    /// Recomputes ζ from the stored minimizers.
    pub fn measured_zeta(&self) -> Option<f64> {
        let x = self.x_star.as_ref()?;
        let us = self.u_stars.as_ref()?;
        Some(us.iter().map(|u| x.dist_sq(u).sqrt()).fold(0.0, f64::max))
    }
}

pub fn gamma(mu: f64, l: f64) -> f64 {
    2.0 * mu * l / (mu + l)
}
