//! Asynchronous federated optimization with server-side aggregation of
//! client model updates, plus the baselines, event scheduling, data
//! pipelines and verification tooling around it.

pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod math;
pub mod metrics;
pub mod protocol;
pub mod rng;
pub mod scheduler;
pub mod schedules;
pub mod trial;
pub mod verify;

pub use error::{AreaError, Result};
