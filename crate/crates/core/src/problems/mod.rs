//! Per-worker objectives `f_i` with exact and stochastic gradient oracles.
//!
//! The global objective is the worker average `f = (1/N) Σ f_i`.

mod counterexample;
pub mod data;
mod mlp;
pub mod quadratic;

pub use counterexample::{counterexample_problem, CounterexampleProblem};
pub use data::{gaussian_mixture_dataset, shard_dataset, LabeledDataset, ShardStrategy};
pub use mlp::{mlp_problem, MlpProblem};
pub use quadratic::{quadratic_problem, QuadraticProblem};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{gaussian_vector, NumericError, ParamVector, RngStream};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("worker index {worker} out of range for {num_workers} workers")]
    WorkerOutOfRange { worker: usize, num_workers: usize },
    #[error("invalid problem parameter: {0}")]
    InvalidParameter(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("empty shard for worker {0}")]
    EmptyShard(usize),
    #[error("layer widths {widths:?} incompatible with feature dim {dim} and {classes} classes")]
    WidthMismatch {
        widths: Vec<usize>,
        dim: usize,
        classes: usize,
    },
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

/// Constants entering the convergence bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    /// Lipschitz constant of each `∇f_i`, when known in closed form.
    pub lipschitz: Option<f64>,
    /// Coordinate-wise standard deviation of the additive gradient noise.
    pub sigma: f64,
    /// Bound on `‖g‖∞` for every emitted stochastic gradient.
    pub g_inf: f64,
    pub dim: usize,
    pub num_workers: usize,
}

pub trait Problem: Send + Sync {
    fn constants(&self) -> &ProblemConstants;

    fn loss(&self, worker: usize, x: &ParamVector) -> Result<f64, ProblemError>;

    fn gradient(&self, worker: usize, x: &ParamVector) -> Result<ParamVector, ProblemError>;

    /// An unbiased gradient sample before clipping to `g_inf`.
    fn sample_gradient(
        &self,
        worker: usize,
        x: &ParamVector,
        rng: &mut RngStream,
    ) -> Result<ParamVector, ProblemError>;

    /// `min_x f(x)` when known in closed form.
    fn min_value(&self) -> Option<f64> {
        None
    }

    /// Problem-specific starting point, used when the config asks for it.
    fn default_initial_point(&self, rng: &mut RngStream) -> ParamVector;

    fn num_workers(&self) -> usize {
        self.constants().num_workers
    }

    fn dim(&self) -> usize {
        self.constants().dim
    }
}

pub(crate) fn check_worker(worker: usize, num_workers: usize) -> Result<(), ProblemError> {
    if worker >= num_workers {
        return Err(ProblemError::WorkerOutOfRange {
            worker,
            num_workers,
        });
    }
    Ok(())
}

/// Exact gradient plus `N(0, σ²)` coordinate noise.
pub(crate) fn noisy_gradient<P: Problem + ?Sized>(
    problem: &P,
    worker: usize,
    x: &ParamVector,
    rng: &mut RngStream,
) -> Result<ParamVector, ProblemError> {
    let exact = problem.gradient(worker, x)?;
    let sigma = problem.constants().sigma;
    if sigma == 0.0 {
        return Ok(exact);
    }
    let noise = gaussian_vector(rng, exact.dim(), 0.0, sigma)?;
    Ok(exact.zip_map(&noise, |g, n| g + n))
}

/// Stochastic gradient of worker `worker` at `x`, clipped coordinate-wise to
/// `[-g_inf, g_inf]`.
pub fn stochastic_gradient(
    problem: &dyn Problem,
    worker: usize,
    x: &ParamVector,
    rng: &mut RngStream,
) -> Result<ParamVector, ProblemError> {
    check_worker(worker, problem.num_workers())?;
    let g_inf = problem.constants().g_inf;
    let g = problem.sample_gradient(worker, x, rng)?;
    let clipped = g.map(|v| v.clamp(-g_inf, g_inf));
    clipped.ensure_finite()?;
    debug_assert!(clipped.norm_inf() <= g_inf);
    Ok(clipped)
}

/// `f(x) = (1/N) Σ f_i(x)`, summed in worker order.
pub fn global_loss(problem: &dyn Problem, x: &ParamVector) -> Result<f64, ProblemError> {
    let n = problem.num_workers();
    let mut total = 0.0;
    for i in 0..n {
        total += problem.loss(i, x)?;
    }
    Ok(total / n as f64)
}

/// `∇f(x) = (1/N) Σ ∇f_i(x)`, summed in worker order.
pub fn global_gradient(
    problem: &dyn Problem,
    x: &ParamVector,
) -> Result<ParamVector, ProblemError> {
    let n = problem.num_workers();
    let mut acc = vec![0.0; problem.dim()];
    for i in 0..n {
        let g = problem.gradient(i, x)?;
        for (a, v) in acc.iter_mut().zip(g.as_slice()) {
            *a += v;
        }
    }
    let inv = n as f64;
    Ok(ParamVector::from_raw(
        acc.into_iter().map(|a| a / inv).collect(),
    ))
}
