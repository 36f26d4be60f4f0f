//! Vector arithmetic, loss oracles and stochastic gradients.

mod constants;
mod noise;
mod objective;
mod vector;

pub use constants::{gamma, ProblemConstants};
pub use noise::{stochastic_gradient, NoiseModel};
pub use objective::{classification_accuracy, AbsoluteDeviation, Curvature, LogReg, Objective, Quadratic};
pub use vector::ModelVector;
