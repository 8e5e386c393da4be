//! Worker and server state machines for local SGD, naive local AMSGrad and
//! local AMSGrad with a shared second-moment estimate.
//!
//! Every algorithm alternates local steps with a synchronization round on
//! iterations where `t mod k == 0`. A synchronization replaces the local step
//! of that iteration: each worker forms its update candidate and all workers
//! adopt the average candidate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{NumericError, ParamVector};

/// Bytes per transmitted scalar.
pub const SCALAR_BYTES: u64 = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("worker {worker}: non-finite parameters after step")]
    NonFinite { worker: usize },
    #[error("sync round needs at least one worker")]
    NoWorkers,
    #[error("worker {worker}: no gradient recorded before sync")]
    MissingGradient { worker: usize },
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    LocalSgd,
    NaiveLocalAmsgrad,
    LocalAmsgrad,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [
        Algorithm::LocalSgd,
        Algorithm::NaiveLocalAmsgrad,
        Algorithm::LocalAmsgrad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::LocalSgd => "local_sgd",
            Algorithm::NaiveLocalAmsgrad => "naive_local_amsgrad",
            Algorithm::LocalAmsgrad => "local_amsgrad",
        }
    }

    pub fn uses_moments(self) -> bool {
        !matches!(self, Algorithm::LocalSgd)
    }

    /// Scalars each worker sends plus receives per sync round, per coordinate.
    pub fn scalars_per_sync(self) -> u64 {
        match self {
            // x candidate and v up, averaged x and v̂ down
            Algorithm::LocalAmsgrad => 4,
            Algorithm::LocalSgd | Algorithm::NaiveLocalAmsgrad => 2,
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown algorithm {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Initial value of every v̂ coordinate.
    pub epsilon: f64,
    /// Averaging period k.
    pub period: u64,
    pub total_iters: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{field}: {message}")]
pub struct HyperparamError {
    pub field: &'static str,
    pub message: String,
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), HyperparamError> {
        let err = |field, message: String| Err(HyperparamError { field, message });
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return err("alpha", format!("must be > 0, got {}", self.alpha));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return err("beta1", format!("must lie in [0, 1), got {}", self.beta1));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return err("beta2", format!("must lie in [0, 1), got {}", self.beta2));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return err("epsilon", format!("must be > 0, got {}", self.epsilon));
        }
        if self.total_iters == 0 {
            return err("total_iters", "must be at least 1".into());
        }
        if self.period == 0 || self.period > self.total_iters {
            return err(
                "period",
                format!(
                    "must lie in [1, total_iters = {}], got {}",
                    self.total_iters, self.period
                ),
            );
        }
        Ok(())
    }

    pub fn is_sync_iteration(&self, t: u64) -> bool {
        t.is_multiple_of(self.period)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerState {
    pub worker_id: usize,
    pub x: ParamVector,
    pub m: ParamVector,
    pub v: ParamVector,
    /// Per-worker running max of `v`; only the naive variant reads it.
    pub vhat_local: ParamVector,
    /// Gradient of the current iteration, kept for the SGD sync candidate.
    pub last_grad: Option<ParamVector>,
}

impl WorkerState {
    pub fn new(worker_id: usize, x0: ParamVector, epsilon: f64) -> Self {
        let d = x0.dim();
        Self {
            worker_id,
            x: x0,
            m: ParamVector::zeros(d),
            v: ParamVector::zeros(d),
            vhat_local: ParamVector::filled(d, epsilon),
            last_grad: None,
        }
    }

    fn finish_step(&self) -> Result<(), OptimError> {
        self.x.ensure_finite().map_err(|_| OptimError::NonFinite {
            worker: self.worker_id,
        })
    }

    pub fn set_gradient(&mut self, g: ParamVector) -> Result<(), OptimError> {
        self.x.check_dim(&g)?;
        self.last_grad = Some(g);
        Ok(())
    }

    /// `x ← x − α g`.
    pub fn local_sgd_step(
        &mut self,
        g: &ParamVector,
        hyper: &Hyperparams,
    ) -> Result<(), OptimError> {
        self.x.check_dim(g)?;
        let a = hyper.alpha;
        self.x = self.x.zip_map(g, |x, g| x - a * g);
        self.last_grad = Some(g.clone());
        self.finish_step()
    }

    /// `m ← β₁m + (1−β₁)g`, `v ← β₂v + (1−β₂)g²`.
    pub fn amsgrad_moments(
        &mut self,
        g: &ParamVector,
        hyper: &Hyperparams,
    ) -> Result<(), OptimError> {
        self.x.check_dim(g)?;
        let (b1, b2) = (hyper.beta1, hyper.beta2);
        self.m = self.m.zip_map(g, |m, g| b1 * m + (1.0 - b1) * g);
        self.v = self.v.zip_map(g, |v, g| b2 * v + (1.0 - b2) * g * g);
        self.last_grad = Some(g.clone());
        self.m
            .ensure_finite()
            .and(self.v.ensure_finite())
            .map_err(|_| OptimError::NonFinite {
                worker: self.worker_id,
            })
    }

    fn raise_local_vhat(&mut self) {
        self.vhat_local = self.vhat_local.zip_map(&self.v, f64::max);
    }

    fn candidate(&self, vhat: &ParamVector, alpha: f64) -> ParamVector {
        let step = self.m.zip_map(vhat, |m, vh| m / vh.sqrt());
        self.x.zip_map(&step, |x, s| x - alpha * s)
    }

    /// Naive variant: `v̂ᵢ ← max(vᵢ, v̂ᵢ)`, then `x ← x − α m / √v̂ᵢ`.
    pub fn naive_local_step(&mut self, hyper: &Hyperparams) -> Result<(), OptimError> {
        self.raise_local_vhat();
        self.x = self.candidate(&self.vhat_local, hyper.alpha);
        self.finish_step()
    }

    /// Shared variant: `x ← x − α m / √v̂` with the server's v̂ left untouched.
    pub fn shared_local_step(
        &mut self,
        server: &ServerState,
        hyper: &Hyperparams,
    ) -> Result<(), OptimError> {
        self.x.check_dim(&server.vhat_shared)?;
        self.x = self.candidate(&server.vhat_shared, hyper.alpha);
        self.finish_step()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub vhat_shared: ParamVector,
    /// Last completed iteration.
    pub t: u64,
    pub sync_rounds: u64,
    pub comm_bytes: u64,
}

impl ServerState {
    pub fn new(dim: usize, epsilon: f64) -> Self {
        Self {
            vhat_shared: ParamVector::filled(dim, epsilon),
            t: 0,
            sync_rounds: 0,
            comm_bytes: 0,
        }
    }
}

/// Synchronization round for `algorithm`, replacing the local step of a sync
/// iteration. Moments (or, for SGD, the gradient) must already be recorded.
///
/// For local AMSGrad the server first sets `v̂ ← max(mean vᵢ, v̂)`, and the
/// candidates `xⱼ − α mⱼ/√v̂` use that new v̂. The naive variant raises each
/// worker's own v̂ⱼ and uses it for its candidate. SGD candidates are
/// `xⱼ − α gⱼ`. Momentum is never averaged.
pub fn sync_round(
    algorithm: Algorithm,
    workers: &mut [WorkerState],
    server: &mut ServerState,
    hyper: &Hyperparams,
) -> Result<(), OptimError> {
    let first = workers.first().ok_or(OptimError::NoWorkers)?;
    let dim = first.x.dim();
    for w in workers.iter() {
        first.x.check_dim(&w.x)?;
    }
    server.vhat_shared.check_dim(&first.x)?;

    let candidates: Vec<ParamVector> = match algorithm {
        Algorithm::LocalAmsgrad => {
            let vs: Vec<ParamVector> = workers.iter().map(|w| w.v.clone()).collect();
            let mean_v = ParamVector::mean_of(&vs)?;
            server.vhat_shared = mean_v.zip_map(&server.vhat_shared, f64::max);
            workers
                .iter()
                .map(|w| w.candidate(&server.vhat_shared, hyper.alpha))
                .collect()
        }
        Algorithm::NaiveLocalAmsgrad => workers
            .iter_mut()
            .map(|w| {
                w.raise_local_vhat();
                w.candidate(&w.vhat_local, hyper.alpha)
            })
            .collect(),
        Algorithm::LocalSgd => workers
            .iter()
            .map(|w| {
                let g = w.last_grad.as_ref().ok_or(OptimError::MissingGradient {
                    worker: w.worker_id,
                })?;
                Ok(w.x.zip_map(g, |x, g| x - hyper.alpha * g))
            })
            .collect::<Result<_, OptimError>>()?,
    };
    let average = ParamVector::mean_of(&candidates)?;
    for w in workers.iter_mut() {
        w.x = average.clone();
    }
    workers[0].finish_step()?;

    server.sync_rounds += 1;
    server.comm_bytes +=
        workers.len() as u64 * algorithm.scalars_per_sync() * dim as u64 * SCALAR_BYTES;
    Ok(())
}
