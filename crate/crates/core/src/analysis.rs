//! Trace validators for the local AMSGrad convergence argument, and the
//! closed-form convergence bound.

use serde::Serialize;
use thiserror::Error;

use crate::numeric::ParamVector;
use crate::optimizers::{Algorithm, Hyperparams};
use crate::simulator::{MetricRecord, Trace, VhatSnapshot};

/// Relative tolerance for the one-step identity of the auxiliary sequence.
pub const AUX_IDENTITY_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("trace is missing or empty")]
    MissingTrace,
    #[error("no records")]
    Empty,
    #[error("bound input {0} must be positive")]
    NonPositive(&'static str),
    #[error("dimension mismatch in trace data")]
    DimMismatch,
}

/// `z̄_t = x̄_t + β₁/(1−β₁) (x̄_t − x̄_{t−1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxSequence {
    pub zbar: ParamVector,
    pub xbar: ParamVector,
    pub xbar_prev: ParamVector,
    pub beta1: f64,
}

impl AuxSequence {
    pub fn new(
        xbar: ParamVector,
        xbar_prev: ParamVector,
        beta1: f64,
    ) -> Result<Self, AnalysisError> {
        if xbar.dim() != xbar_prev.dim() {
            return Err(AnalysisError::DimMismatch);
        }
        let c = beta1 / (1.0 - beta1);
        let zbar = xbar.zip_map(&xbar_prev, |x, p| x + c * (x - p));
        Ok(Self {
            zbar,
            xbar,
            xbar_prev,
            beta1,
        })
    }
}

/// `‖(z̄_{t+1} − z̄_t) − [α β₁/(1−β₁) (1/√v̂_{t−1} − 1/√v̂_t) ⊙ m̄_{t−1} − α ḡ_t/√v̂_t]‖∞`.
#[allow(clippy::too_many_arguments)]
pub fn aux_identity_residual(
    mbar_prev: &ParamVector,
    gbar: &ParamVector,
    vhat: &ParamVector,
    vhat_prev: &ParamVector,
    zbar_next: &ParamVector,
    zbar: &ParamVector,
    hyper: &Hyperparams,
) -> Result<f64, AnalysisError> {
    let d = zbar.dim();
    if [mbar_prev, gbar, vhat, vhat_prev, zbar_next]
        .iter()
        .any(|v| v.dim() != d)
    {
        return Err(AnalysisError::DimMismatch);
    }
    let c = hyper.alpha * hyper.beta1 / (1.0 - hyper.beta1);
    let mut worst = 0.0_f64;
    for j in 0..d {
        let momentum = c * (1.0 / vhat_prev[j].sqrt() - 1.0 / vhat[j].sqrt()) * mbar_prev[j];
        let predicted = momentum - hyper.alpha * gbar[j] / vhat[j].sqrt();
        worst = worst.max(((zbar_next[j] - zbar[j]) - predicted).abs());
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub status: CheckStatus,
    /// Worst observed residual, ratio or violation count, depending on the check.
    pub max_value: f64,
    pub threshold: f64,
    pub detail: String,
}

impl CheckResult {
    fn not_applicable(name: &'static str, why: &str) -> Self {
        Self {
            name,
            status: CheckStatus::NotApplicable,
            max_value: 0.0,
            threshold: 0.0,
            detail: why.to_string(),
        }
    }

    pub fn passed(&self) -> bool {
        self.status != CheckStatus::Fail
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn shared_vhat(trace: &Trace, t: u64) -> &ParamVector {
    match &trace.steps[(t - 1) as usize].vhat {
        VhatSnapshot::Shared(v) => v,
        _ => unreachable!("shared v̂ only recorded for local AMSGrad"),
    }
}

/// Worst relative residual of the auxiliary-sequence identity over every
/// step of a local AMSGrad trace. The residual at `t` is divided by
/// `max(1, ‖z̄_t‖∞)`.
pub fn aux_identity_check(trace: &Trace) -> Result<CheckResult, AnalysisError> {
    const NAME: &str = "aux_sequence_identity";
    if trace.algorithm != Algorithm::LocalAmsgrad {
        return Ok(CheckResult::not_applicable(
            NAME,
            "requires a shared v̂ (local_amsgrad)",
        ));
    }
    if trace.steps.is_empty() || trace.final_workers_x.is_empty() {
        return Err(AnalysisError::MissingTrace);
    }
    let hyper = &trace.hyper;
    let big_t = trace.steps.len() as u64;
    let eps_vec = trace.initial_vhat();
    let zero = ParamVector::zeros(eps_vec.dim());

    let mut xbar_prev = trace.xbar(1); // x̄₀ ≡ x̄₁
    let mut xbar = trace.xbar(1);
    let mut zbar = AuxSequence::new(xbar.clone(), xbar_prev.clone(), hyper.beta1)?.zbar;
    let mut worst = 0.0_f64;
    let mut worst_t = 0;
    for t in 1..=big_t {
        let xbar_next = trace.xbar(t + 1);
        let znext = AuxSequence::new(xbar_next.clone(), xbar.clone(), hyper.beta1)?.zbar;
        let step = &trace.steps[(t - 1) as usize];
        let (mbar_prev, vhat_prev) = if t == 1 {
            (&zero, &eps_vec)
        } else {
            (
                &trace.steps[(t - 2) as usize].mbar,
                shared_vhat(trace, t - 1),
            )
        };
        let r = aux_identity_residual(
            mbar_prev,
            &step.gbar,
            shared_vhat(trace, t),
            vhat_prev,
            &znext,
            &zbar,
            hyper,
        )?;
        let rel = r / zbar.norm_inf().max(1.0);
        if rel > worst {
            worst = rel;
            worst_t = t;
        }
        xbar_prev = xbar;
        xbar = xbar_next;
        zbar = znext;
    }
    let _ = xbar_prev;
    Ok(CheckResult {
        name: NAME,
        status: if worst <= AUX_IDENTITY_TOL {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        max_value: worst,
        threshold: AUX_IDENTITY_TOL,
        detail: format!("worst relative residual at t = {worst_t} over {big_t} steps"),
    })
}

/// Consensus bound `‖x̄_t − x_{t,i}‖² ≤ 4(k−1)² α² d G² / ε`, with `G` the
/// largest observed `‖g‖∞`. Reports the worst LHS/RHS ratio.
pub fn consensus_bound_check(
    trace: &Trace,
    g_empirical: f64,
) -> Result<CheckResult, AnalysisError> {
    const NAME: &str = "consensus_bound";
    if trace.algorithm != Algorithm::LocalAmsgrad {
        return Ok(CheckResult::not_applicable(
            NAME,
            "bound stated for local_amsgrad",
        ));
    }
    if trace.steps.is_empty() || trace.final_workers_x.is_empty() {
        return Err(AnalysisError::MissingTrace);
    }
    let h = &trace.hyper;
    let d = trace.final_workers_x[0].dim() as f64;
    let km1 = (h.period - 1) as f64;
    let rhs = 4.0 * km1 * km1 * h.alpha * h.alpha * d * g_empirical * g_empirical / h.epsilon;

    let mut max_lhs = 0.0_f64;
    let mut max_ratio = 0.0_f64;
    let states = trace
        .steps
        .iter()
        .map(|s| &s.workers_x)
        .chain(std::iter::once(&trace.final_workers_x));
    for xs in states {
        let xbar = ParamVector::mean_of(xs).map_err(|_| AnalysisError::DimMismatch)?;
        for x in xs {
            let lhs = xbar.dist_sq(x);
            max_lhs = max_lhs.max(lhs);
            let ratio = if rhs > 0.0 {
                lhs / rhs
            } else if lhs == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            max_ratio = max_ratio.max(ratio);
        }
    }
    Ok(CheckResult {
        name: NAME,
        status: if max_ratio <= 1.0 {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        max_value: max_ratio,
        threshold: 1.0,
        detail: format!("max LHS = {max_lhs:e}, RHS = {rhs:e}, G = {g_empirical:e}"),
    })
}

/// Coordinate-wise `v̂_t ≥ v̂_{t−1}` at every step, starting from `v̂₀ = ε·1`.
/// `max_value` is the number of violating coordinates.
pub fn vhat_monotonicity_check(trace: &Trace) -> Result<CheckResult, AnalysisError> {
    const NAME: &str = "vhat_monotone";
    if !trace.algorithm.uses_moments() {
        return Ok(CheckResult::not_applicable(NAME, "local_sgd keeps no v̂"));
    }
    if trace.steps.is_empty() {
        return Err(AnalysisError::MissingTrace);
    }
    let n = trace
        .final_workers_x
        .len()
        .max(trace.steps[0].workers_x.len());
    let init = trace.initial_vhat();
    let mut prev: Vec<ParamVector> = match &trace.steps[0].vhat {
        VhatSnapshot::Shared(_) => vec![init],
        _ => vec![init; n],
    };
    let mut violations = 0u64;
    let mut first: Option<String> = None;
    for step in &trace.steps {
        let current: Vec<ParamVector> = match &step.vhat {
            VhatSnapshot::Shared(v) => vec![v.clone()],
            VhatSnapshot::PerWorker(vs) => vs.clone(),
            VhatSnapshot::None => return Err(AnalysisError::MissingTrace),
        };
        for (w, (cur, old)) in current.iter().zip(&prev).enumerate() {
            for j in 0..cur.dim() {
                if cur[j] < old[j] {
                    violations += 1;
                    first.get_or_insert_with(|| {
                        format!(
                            "t = {}, worker {w}, coordinate {j}: {} < {}",
                            step.t, cur[j], old[j]
                        )
                    });
                }
            }
        }
        prev = current;
    }
    Ok(CheckResult {
        name: NAME,
        status: if violations == 0 {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        max_value: violations as f64,
        threshold: 0.0,
        detail: first.unwrap_or_else(|| format!("non-decreasing over {} steps", trace.steps.len())),
    })
}

/// Runs every trace validator.
pub fn validate_trace(trace: &Trace, g_empirical: f64) -> Result<ValidationReport, AnalysisError> {
    Ok(ValidationReport {
        checks: vec![
            aux_identity_check(trace)?,
            consensus_bound_check(trace, g_empirical)?,
            vhat_monotonicity_check(trace)?,
        ],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundInputs {
    pub lipschitz: f64,
    pub sigma: f64,
    pub g: f64,
    pub epsilon: f64,
    pub beta1: f64,
    pub dim: f64,
    pub total_iters: f64,
    pub num_workers: f64,
    pub period: f64,
    /// `f(x̄₁) − min f`, or an upper estimate of it.
    pub f_init_minus_min: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundValue {
    pub value: f64,
    /// `T ≥ 16 N L² / (ε d)`, the range in which the bound holds.
    pub in_regime: bool,
}

/// Right-hand side of the local AMSGrad convergence bound:
///
/// ```text
/// 8 √d/√(TN) (f₁ − f*) + 8 L √d/√(TN) σ²/ε
///   + 8 (d/T) β₁/(1−β₁) G²/√ε + 8 (LN/T²) β₁²/(1−β₁)² G²/ε
///   + 8 (N/T) L (β₁²/(1−β₁)² + 5(k−1)²) G²/ε^1.5
/// ```
pub fn convergence_bound(inputs: &BoundInputs) -> Result<BoundValue, AnalysisError> {
    let BoundInputs {
        lipschitz: l,
        sigma,
        g,
        epsilon: eps,
        beta1: b1,
        dim: d,
        total_iters: t,
        num_workers: n,
        period: k,
        f_init_minus_min: gap,
    } = *inputs;
    if !(eps > 0.0) {
        return Err(AnalysisError::NonPositive("epsilon"));
    }
    if !(t > 0.0) {
        return Err(AnalysisError::NonPositive("total_iters"));
    }
    if !(n > 0.0) {
        return Err(AnalysisError::NonPositive("num_workers"));
    }
    let root = d.sqrt() / (t * n).sqrt();
    let mom = b1 / (1.0 - b1);
    let g2 = g * g;
    let value = 8.0 * root * gap
        + 8.0 * l * root * sigma * sigma / eps
        + 8.0 * (d / t) * mom * g2 / eps.sqrt()
        + 8.0 * (l * n / (t * t)) * mom * mom * g2 / eps
        + 8.0 * (n / t) * l * (mom * mom + 5.0 * (k - 1.0) * (k - 1.0)) * g2 / eps.powf(1.5);
    Ok(BoundValue {
        value,
        in_regime: t >= 16.0 * n * l * l / (eps * d),
    })
}

/// Step size `min(√N/√(Td), √ε/(4L))` under which the bound is stated.
pub fn bound_step_size(
    num_workers: f64,
    total_iters: f64,
    dim: f64,
    epsilon: f64,
    lipschitz: f64,
) -> f64 {
    (num_workers.sqrt() / (total_iters * dim).sqrt()).min(epsilon.sqrt() / (4.0 * lipschitz))
}

/// `(1/T) Σ ‖∇f(x̄_t)‖²` over the given records.
pub fn stationarity_measure(records: &[MetricRecord]) -> Result<f64, AnalysisError> {
    if records.is_empty() {
        return Err(AnalysisError::Empty);
    }
    Ok(records.iter().map(|r| r.grad_sq_norm).sum::<f64>() / records.len() as f64)
}

/// Largest integer `k` with `k ≤ T^{1/4} d^{1/4} / √N`, i.e. `k⁴N² ≤ Td`.
pub fn max_linear_speedup_period(total_iters: u64, dim: u64, num_workers: u64) -> u64 {
    let td = total_iters as u128 * dim as u128;
    let n2 = num_workers as u128 * num_workers as u128;
    if n2 == 0 {
        return 0;
    }
    let fits = |k: u128| k.pow(4).saturating_mul(n2) <= td;
    let mut k = ((td as f64).sqrt().sqrt() / (num_workers as f64).sqrt()).floor() as u128;
    while k > 0 && !fits(k) {
        k -= 1;
    }
    while fits(k + 1) {
        k += 1;
    }
    k as u64
}
