//! Deterministic simulator for federated optimization with periodic model
//! averaging: local SGD, naive local AMSGrad, and local AMSGrad with a
//! server-shared second-moment estimate, plus trace validators and a
//! convergence-bound calculator.

pub mod analysis;
pub mod config;
pub mod numeric;
pub mod optimizers;
pub mod problems;
pub mod simulator;

pub use numeric::{ParamVector, RngStream, StreamId, StreamPurpose};
pub use optimizers::{Algorithm, Hyperparams};
pub use simulator::{run_experiment, ExperimentConfig, MetricsLog, RunOutput};
