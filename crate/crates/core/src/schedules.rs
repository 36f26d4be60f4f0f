//! Step-size schedules and the closed-form optimal server rate.

use serde::{Deserialize, Serialize};

use crate::error::{AreaError, Result};
use crate::math::gamma;

/// Largest admissible initial step of the decreasing schedule.
///
/// For `local_steps == 1` the three terms with an `(M − 1)` denominator are
/// treated as `+∞`.
pub fn theorem1_d(mu: f64, l: f64, local_steps: u32) -> f64 {
    let m = local_steps as f64;
    let g = gamma(mu, l);
    let mut d = 2.0 / (m * (mu + l));
    if local_steps > 1 {
        let m1 = m - 1.0;
        let l2 = l * l;
        let l4 = l2 * l2;
        d = d
            .min(g / (l2 * m1))
            .min((m * g * g / (64.0 * l4 * m1.powi(3))).sqrt())
            .min((g / (32.0 * l4 * m1.powi(3))).cbrt());
    }
    d
}

/// `α_k = 1 / (p_min·M·γ·k/48 + 1/D)`
pub fn theorem1_alpha(k: u64, p_min: f64, local_steps: u32, gamma: f64, d: f64) -> f64 {
    1.0 / (p_min * local_steps as f64 * gamma * k as f64 / 48.0 + 1.0 / d)
}

/// Contraction factor `1 − α·M·γ/4` associated with a step.
pub fn beta(alpha: f64, local_steps: u32, gamma: f64) -> f64 {
    1.0 - alpha * local_steps as f64 * gamma / 4.0
}

/// Inputs of the constant-step schedule for convex Lipschitz losses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexRateInputs {
    /// Total number of server iterations K.
    pub horizon: u64,
    pub p_s: f64,
    /// `(1/n) Σ 1/p_i`
    pub q_bar: f64,
    pub sigma: f64,
    pub lipschitz_b: f64,
    pub local_steps: u32,
    /// `‖x_{s,0} − x*‖²`
    pub dist0_sq: f64,
}

impl ConvexRateInputs {
    fn participation(&self) -> f64 {
        1.0 / self.p_s + 2.0 * self.q_bar
    }

    fn noise_term(&self) -> f64 {
        self.sigma * self.sigma + (self.local_steps as f64 + 1.0) * self.lipschitz_b * self.lipschitz_b / 2.0
    }

    /// Constant step size minimizing the ergodic-average bound.
    pub fn alpha(&self) -> f64 {
        (self.participation() * self.dist0_sq
            / (self.noise_term() * self.local_steps as f64 * self.horizon as f64))
            .sqrt()
    }

    /// Bound on `E[f(x̄_K)] − f*` attained with [`Self::alpha`].
    pub fn bound(&self) -> f64 {
        (self.participation() * self.noise_term() * self.dist0_sq
            / (self.local_steps as f64 * self.horizon as f64))
            .sqrt()
    }
}

pub fn theorem2_alpha(
    horizon: u64,
    p_s: f64,
    q_bar: f64,
    sigma: f64,
    lipschitz_b: f64,
    local_steps: u32,
    dist0_sq: f64,
) -> f64 {
    ConvexRateInputs {
        horizon,
        p_s,
        q_bar,
        sigma,
        lipschitz_b,
        local_steps,
        dist0_sq,
    }
    .alpha()
}

/// `λ_s* = √(Σλ_i / ((2/n) Σ 1/λ_i))`
pub fn optimal_lambda_s(lambda: &[f64]) -> Result<f64> {
    if lambda.is_empty() || lambda.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
        return Err(AreaError::config("client rates must be positive and finite"));
    }
    let n = lambda.len() as f64;
    let total: f64 = lambda.iter().sum();
    let inv: f64 = lambda.iter().map(|l| 1.0 / l).sum();
    Ok((total / (2.0 / n * inv)).sqrt())
}

/// Step size handed out by the server as a function of its iteration counter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StepSchedule {
    TheoremOne {
        p_min: f64,
        local_steps: u32,
        gamma: f64,
        d: f64,
    },
    ConstantTheoremTwo {
        alpha: f64,
    },
    Constant {
        alpha: f64,
    },
    /// `c0 / (k + 1)`
    InverseK {
        c0: f64,
    },
}

impl StepSchedule {
    pub fn theorem_one(mu: f64, l: f64, local_steps: u32, p_min: f64) -> Self {
        StepSchedule::TheoremOne {
            p_min,
            local_steps,
            gamma: gamma(mu, l),
            d: theorem1_d(mu, l, local_steps),
        }
    }

    pub fn alpha(&self, k: u64) -> f64 {
        match *self {
            StepSchedule::TheoremOne {
                p_min,
                local_steps,
                gamma,
                d,
            } => theorem1_alpha(k, p_min, local_steps, gamma, d),
            StepSchedule::ConstantTheoremTwo { alpha } | StepSchedule::Constant { alpha } => alpha,
            StepSchedule::InverseK { c0 } => c0 / (k as f64 + 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            StepSchedule::TheoremOne { p_min, gamma, d, local_steps } => {
                p_min > 0.0 && p_min <= 1.0 && gamma > 0.0 && d > 0.0 && local_steps >= 1
            }
            StepSchedule::ConstantTheoremTwo { alpha } | StepSchedule::Constant { alpha } => {
                alpha > 0.0 && alpha.is_finite()
            }
            StepSchedule::InverseK { c0 } => c0 > 0.0 && c0.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(AreaError::config(format!("invalid step schedule {self:?}")))
        }
    }
}
