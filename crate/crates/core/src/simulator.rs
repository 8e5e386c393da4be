//! Runs one experiment: T iterations over N workers for the configured
//! algorithm, recording metrics at the mean iterate x̄.
//!
//! Iterations are numbered `t = 1..=T`. A metric record with index `t` holds
//! the state after `t` updates; record 0 is the starting point. Iteration `t`
//! synchronizes when `t mod k == 0`.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::config::{ConfigError, ExperimentConfig, InitSpec, ProblemSpec};
use crate::numeric::{ParamVector, RngStream, StreamId};
use crate::optimizers::{sync_round, Algorithm, OptimError, ServerState, WorkerState};
use crate::problems::{global_gradient, global_loss, stochastic_gradient, Problem, ProblemError};

/// Parameters beyond this magnitude abort the run.
pub const DIVERGENCE_LIMIT: f64 = 1e15;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid config: {0}")]
    Config(#[from] ConfigError),
    #[error("diverged at iteration {t}: {reason}")]
    Diverged {
        t: u64,
        reason: String,
        log: Box<MetricsLog>,
    },
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Optim(OptimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub t: u64,
    /// `f(x̄_t)`.
    pub f_xbar: f64,
    /// `‖∇f(x̄_t)‖²` with the exact gradient.
    pub grad_sq_norm: f64,
    /// `maxᵢ ‖x̄_t − x_{t,i}‖²`.
    pub consensus_max: f64,
    pub comm_bytes: u64,
    pub sync_rounds: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsLog {
    pub algorithm: Algorithm,
    pub total_iters: u64,
    pub records: Vec<MetricRecord>,
    /// Largest `‖g‖∞` over every stochastic gradient drawn.
    pub g_empirical: f64,
    pub initial_xbar: ParamVector,
    pub final_xbar: ParamVector,
}

impl MetricsLog {
    pub fn last(&self) -> &MetricRecord {
        self.records
            .last()
            .expect("log always holds the initial record")
    }

    /// Whether every iterate `0..T` was recorded.
    pub fn has_full_cadence(&self) -> bool {
        self.records.len() as u64 == self.total_iters + 1
    }

    /// `(1/T) Σ ‖∇f(x̄)‖²` over the iterates at which gradients were taken
    /// (records `0..T`). With a coarser cadence this averages the recorded
    /// subset only.
    pub fn stationarity(&self) -> f64 {
        let upto: Vec<MetricRecord> = self
            .records
            .iter()
            .filter(|r| r.t < self.total_iters)
            .copied()
            .collect();
        crate::analysis::stationarity_measure(&upto).unwrap_or(f64::NAN)
    }
}

/// Second-moment state recorded in a trace step.
#[derive(Debug, Clone, PartialEq)]
pub enum VhatSnapshot {
    None,
    Shared(ParamVector),
    PerWorker(Vec<ParamVector>),
}

/// Per-iteration state kept when validators are enabled. Uses the
/// algorithm's own indexing: step `t` holds `x_{t,i}` before the update,
/// and `ḡ_t`, `m̄_t`, `v̂_t` as formed during it.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub t: u64,
    pub workers_x: Vec<ParamVector>,
    pub gbar: ParamVector,
    pub mbar: ParamVector,
    pub vhat: VhatSnapshot,
    pub g_inf: f64,
    pub synced: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub algorithm: Algorithm,
    pub hyper: crate::optimizers::Hyperparams,
    pub steps: Vec<TraceStep>,
    /// `x_{T+1,i}`.
    pub final_workers_x: Vec<ParamVector>,
}

impl Trace {
    /// `x̄` at algorithm index `t`, for `1 ≤ t ≤ T+1`.
    pub fn xbar(&self, t: u64) -> ParamVector {
        let n = self.steps.len() as u64;
        let xs = if t == n + 1 {
            &self.final_workers_x
        } else {
            &self.steps[(t - 1) as usize].workers_x
        };
        ParamVector::mean_of(xs).expect("trace holds workers")
    }

    pub fn initial_vhat(&self) -> ParamVector {
        ParamVector::filled(self.steps[0].gbar.dim(), self.hyper.epsilon)
    }
}

pub struct RunOutput {
    pub log: MetricsLog,
    pub trace: Option<Trace>,
    pub workers: Vec<WorkerState>,
    pub server: ServerState,
}

/// All workers start from the configured `x₀` with `m = v = 0` and
/// `v̂ = ε·1`.
pub fn initial_state(
    config: &ExperimentConfig,
    problem: &dyn Problem,
) -> Result<(Vec<WorkerState>, ServerState), ConfigError> {
    let x0 = config.initial_point(problem)?;
    let eps = config.hyper.epsilon;
    let workers = (0..config.num_workers)
        .map(|i| WorkerState::new(i, x0.clone(), eps))
        .collect();
    Ok((workers, ServerState::new(problem.dim(), eps)))
}

fn record(
    problem: &dyn Problem,
    workers: &[WorkerState],
    server: &ServerState,
    t: u64,
) -> Result<(MetricRecord, ParamVector), SimError> {
    let xs: Vec<ParamVector> = workers.iter().map(|w| w.x.clone()).collect();
    let xbar = ParamVector::mean_of(&xs).map_err(ProblemError::from)?;
    let f_xbar = global_loss(problem, &xbar)?;
    let grad_sq_norm = global_gradient(problem, &xbar)?.norm_sq();
    let consensus_max = xs.iter().map(|x| xbar.dist_sq(x)).fold(0.0, f64::max);
    Ok((
        MetricRecord {
            t,
            f_xbar,
            grad_sq_norm,
            consensus_max,
            comm_bytes: server.comm_bytes,
            sync_rounds: server.sync_rounds,
        },
        xbar,
    ))
}

fn for_each_worker<T, E, F>(workers: &mut [WorkerState], parallel: bool, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(&mut WorkerState) -> Result<T, E> + Sync + Send,
{
    if parallel {
        workers.par_iter_mut().map(&f).collect()
    } else {
        workers.iter_mut().map(f).collect()
    }
}

/// Executes the configured run. Identical configs give identical logs.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput, SimError> {
    config.validate()?;
    let problem = config.build_problem()?;
    run_with_problem(config, problem.as_ref())
}

/// Like [`run_experiment`] with a caller-supplied problem; the config's
/// `problem` field is ignored.
pub fn run_with_problem(
    config: &ExperimentConfig,
    problem: &dyn Problem,
) -> Result<RunOutput, SimError> {
    config
        .hyper
        .validate()
        .map_err(|e| ConfigError::new(format!("hyper.{}", e.field), e.message))?;
    if problem.num_workers() != config.num_workers {
        return Err(ConfigError::new(
            "num_workers",
            format!("problem has {} workers", problem.num_workers()),
        )
        .into());
    }
    let hyper = config.hyper;
    let algorithm = config.algorithm;
    let (mut workers, mut server) = initial_state(config, problem)?;
    let g_bound = problem.constants().g_inf;

    let (first, initial_xbar) = record(problem, &workers, &server, 0)?;
    let mut log = MetricsLog {
        algorithm,
        total_iters: hyper.total_iters,
        records: vec![first],
        g_empirical: 0.0,
        final_xbar: initial_xbar.clone(),
        initial_xbar,
    };
    let mut trace = config.validators.then(|| Trace {
        algorithm,
        hyper,
        steps: Vec::with_capacity(hyper.total_iters as usize),
        final_workers_x: Vec::new(),
    });

    let diverged = |t: u64, reason: String, log: &MetricsLog| SimError::Diverged {
        t,
        reason,
        log: Box::new(log.clone()),
    };

    for t in 1..=hyper.total_iters {
        let pre_x: Option<Vec<ParamVector>> = trace
            .as_ref()
            .map(|_| workers.iter().map(|w| w.x.clone()).collect());

        let seed = config.seed;
        let g_norms = for_each_worker(&mut workers, config.parallel, |w| {
            let mut rng = RngStream::new(seed, StreamId::gradient(w.worker_id, t));
            let g = stochastic_gradient(problem, w.worker_id, &w.x, &mut rng)?;
            let norm = g.norm_inf();
            if algorithm.uses_moments() {
                w.amsgrad_moments(&g, &hyper).map_err(SimError::Optim)?;
            } else {
                w.set_gradient(g).map_err(SimError::Optim)?;
            }
            Ok(norm)
        });
        let g_norms = match g_norms {
            Err(SimError::Optim(OptimError::NonFinite { worker })) => {
                return Err(diverged(
                    t,
                    format!("non-finite moments on worker {worker}"),
                    &log,
                ));
            }
            other => other?,
        };
        let step_g_inf = g_norms.iter().copied().fold(0.0, f64::max);
        log.g_empirical = log.g_empirical.max(step_g_inf);
        assert!(
            step_g_inf <= g_bound,
            "stochastic gradient exceeded G_inf: {step_g_inf} > {g_bound}"
        );

        let synced = hyper.is_sync_iteration(t);
        let step = if synced {
            sync_round(algorithm, &mut workers, &mut server, &hyper)
        } else {
            let shared = &server;
            for_each_worker(&mut workers, config.parallel, |w| {
                match algorithm {
                    Algorithm::LocalSgd => {
                        let g = w.last_grad.clone().expect("gradient set this iteration");
                        w.local_sgd_step(&g, &hyper)
                    }
                    Algorithm::NaiveLocalAmsgrad => w.naive_local_step(&hyper),
                    Algorithm::LocalAmsgrad => w.shared_local_step(shared, &hyper),
                }
            })
            .map(|_| ())
        };
        match step {
            Ok(()) => {}
            Err(OptimError::NonFinite { worker }) => {
                return Err(diverged(
                    t,
                    format!("non-finite parameters on worker {worker}"),
                    &log,
                ));
            }
            Err(e) => return Err(SimError::Optim(e)),
        }
        server.t = t;

        if let (Some(tr), Some(pre_x)) = (trace.as_mut(), pre_x) {
            let gs: Vec<ParamVector> = workers
                .iter()
                .map(|w| w.last_grad.clone().expect("gradient set this iteration"))
                .collect();
            let ms: Vec<ParamVector> = workers.iter().map(|w| w.m.clone()).collect();
            let vhat = match algorithm {
                Algorithm::LocalSgd => VhatSnapshot::None,
                Algorithm::NaiveLocalAmsgrad => {
                    VhatSnapshot::PerWorker(workers.iter().map(|w| w.vhat_local.clone()).collect())
                }
                Algorithm::LocalAmsgrad => VhatSnapshot::Shared(server.vhat_shared.clone()),
            };
            tr.steps.push(TraceStep {
                t,
                workers_x: pre_x,
                gbar: ParamVector::mean_of(&gs).map_err(ProblemError::from)?,
                mbar: ParamVector::mean_of(&ms).map_err(ProblemError::from)?,
                vhat,
                g_inf: step_g_inf,
                synced,
            });
        }

        let worst = workers.iter().map(|w| w.x.norm_inf()).fold(0.0, f64::max);
        if worst > DIVERGENCE_LIMIT {
            return Err(diverged(t, format!("|x| reached {worst:e}"), &log));
        }

        if t % config.cadence == 0 || synced || t == hyper.total_iters {
            let (rec, xbar) = record(problem, &workers, &server, t)?;
            log.records.push(rec);
            log.final_xbar = xbar;
        }
    }

    if let Some(tr) = trace.as_mut() {
        tr.final_workers_x = workers.iter().map(|w| w.x.clone()).collect();
    }
    Ok(RunOutput {
        log,
        trace,
        workers,
        server,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Alpha,
    K,
    N,
    Algorithm,
}

impl FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "alpha" => Ok(SweepAxis::Alpha),
            "k" => Ok(SweepAxis::K),
            "N" | "n" => Ok(SweepAxis::N),
            "algorithm" => Ok(SweepAxis::Algorithm),
            other => Err(format!(
                "unknown sweep axis {other:?}; expected alpha, k, N or algorithm"
            )),
        }
    }
}

impl SweepAxis {
    /// Applies one textual axis value to a copy of `base`.
    pub fn apply(
        self,
        base: &ExperimentConfig,
        value: &str,
    ) -> Result<ExperimentConfig, ConfigError> {
        let mut cfg = base.clone();
        let bad = |path: &str| ConfigError::new(path, format!("cannot parse {value:?}"));
        match self {
            SweepAxis::Alpha => {
                cfg.hyper.alpha = value.trim().parse().map_err(|_| bad("hyper.alpha"))?
            }
            SweepAxis::K => {
                cfg.hyper.period = value.trim().parse().map_err(|_| bad("hyper.period"))?
            }
            SweepAxis::N => {
                cfg.num_workers = value.trim().parse().map_err(|_| bad("num_workers"))?
            }
            SweepAxis::Algorithm => {
                cfg.algorithm = value.trim().parse().map_err(|_| bad("algorithm"))?
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: String,
    pub stationarity: f64,
    pub final_f: f64,
    pub comm_bytes: u64,
    pub sync_rounds: u64,
}

pub struct SweepRun {
    pub config: ExperimentConfig,
    pub output: RunOutput,
}

/// One run per axis value, all with the base seed. Every derived config is
/// validated before anything runs.
pub fn sweep(
    base: &ExperimentConfig,
    axis: SweepAxis,
    values: &[String],
) -> Result<(Vec<SweepRow>, Vec<SweepRun>), SimError> {
    let configs = values
        .iter()
        .map(|v| axis.apply(base, v))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::with_capacity(values.len());
    let mut runs = Vec::with_capacity(values.len());
    for (value, config) in values.iter().zip(configs) {
        let output = run_experiment(&config)?;
        let last = *output.log.last();
        rows.push(SweepRow {
            value: value.trim().to_string(),
            stationarity: output.log.stationarity(),
            final_f: last.f_xbar,
            comm_bytes: last.comm_bytes,
            sync_rounds: last.sync_rounds,
        });
        runs.push(SweepRun { config, output });
    }
    Ok((rows, runs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initial_state_for_counterexample() {
        let cfg = ExperimentConfig::counterexample(Algorithm::LocalAmsgrad, 10);
        let p = cfg.build_problem().unwrap();
        let (workers, server) = initial_state(&cfg, p.as_ref()).unwrap();
        assert_eq!(workers.len(), 3);
        for w in &workers {
            assert_eq!(w.x[0], 5.0);
            assert_eq!(w.m[0], 0.0);
            assert_eq!(w.v[0], 0.0);
            assert_eq!(w.vhat_local[0], 1e-8);
        }
        assert_eq!(server.vhat_shared[0], 1e-8);
    }

    #[test]
    fn seeded_initial_state_is_reproducible() {
        let mut cfg = ExperimentConfig::mixture(Algorithm::LocalAmsgrad, 0.01, 20, 11);
        cfg.init = InitSpec::Gaussian {
            mean: 0.0,
            std: 0.1,
        };
        let p = cfg.build_problem().unwrap();
        let a = initial_state(&cfg, p.as_ref()).unwrap();
        let b = initial_state(&cfg, p.as_ref()).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert!(a.0.iter().all(|w| w.x == a.0[0].x));
    }

    #[test]
    fn cadence_records_syncs_and_endpoints() {
        let mut cfg = ExperimentConfig::counterexample(Algorithm::LocalAmsgrad, 23);
        cfg.hyper.period = 5;
        cfg.cadence = 7;
        let out = run_experiment(&cfg).unwrap();
        let ts: Vec<u64> = out.log.records.iter().map(|r| r.t).collect();
        assert_eq!(ts, vec![0, 5, 7, 10, 14, 15, 20, 21, 23]);
        assert!(!out.log.has_full_cadence());
    }

    #[test]
    fn sweep_axis_parsing() {
        let base = ExperimentConfig::counterexample(Algorithm::LocalAmsgrad, 10);
        assert_eq!(
            SweepAxis::Alpha.apply(&base, "0.5").unwrap().hyper.alpha,
            0.5
        );
        assert_eq!(SweepAxis::K.apply(&base, "2").unwrap().hyper.period, 2);
        assert_eq!(
            SweepAxis::Algorithm
                .apply(&base, "local_sgd")
                .unwrap()
                .algorithm,
            Algorithm::LocalSgd
        );
        assert_eq!(
            SweepAxis::K.apply(&base, "20").unwrap_err().path,
            "hyper.period"
        );
        assert_eq!(
            SweepAxis::N.apply(&base, "x").unwrap_err().path,
            "num_workers"
        );
        assert!("gamma".parse::<SweepAxis>().is_err());
    }

    #[test]
    fn divergence_is_structured() {
        let mut cfg = ExperimentConfig::counterexample(Algorithm::LocalSgd, 50);
        cfg.problem = ProblemSpec::Quadratic {
            dim: 2,
            curvature_min: 1.0,
            curvature_max: 1.0,
            radius: 10.0,
        };
        cfg.init = InitSpec::Constant { value: 2e15 };
        match run_experiment(&cfg) {
            Err(SimError::Diverged { t, log, .. }) => {
                assert_eq!(t, 1);
                assert_eq!(log.records[0].t, 0);
            }
            Err(e) => panic!("unexpected error {e}"),
            Ok(_) => panic!("expected divergence"),
        }
    }
}
