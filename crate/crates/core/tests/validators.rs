use localams::analysis::{
    aux_identity_check, consensus_bound_check, convergence_bound, validate_trace,
    vhat_monotonicity_check, BoundInputs, CheckStatus,
};
use localams::config::{InitSpec, ProblemSpec};
use localams::problems::{global_loss, ShardStrategy};
use localams::simulator::{run_experiment, VhatSnapshot};
use localams::{Algorithm, ExperimentConfig, Hyperparams};
use proptest::prelude::*;

fn quadratic(
    algorithm: Algorithm,
    beta1: f64,
    period: u64,
    total: u64,
    noise_std: f64,
) -> ExperimentConfig {
    ExperimentConfig {
        algorithm,
        problem: ProblemSpec::Quadratic {
            dim: 10,
            curvature_min: 0.5,
            curvature_max: 2.0,
            radius: 10.0,
        },
        hyper: Hyperparams {
            alpha: 0.01,
            beta1,
            beta2: 0.99,
            epsilon: 1e-2,
            period,
            total_iters: total,
        },
        num_workers: 4,
        seed: 5,
        noise_std,
        sharding: ShardStrategy::Iid,
        init: InitSpec::Gaussian {
            mean: 0.0,
            std: 2.0,
        },
        cadence: 1,
        validators: true,
        parallel: false,
    }
}

#[test]
fn shared_quadratic_run_passes_every_check() {
    let out = run_experiment(&quadratic(Algorithm::LocalAmsgrad, 0.9, 5, 300, 0.1)).unwrap();
    let report = validate_trace(out.trace.as_ref().unwrap(), out.log.g_empirical).unwrap();
    assert_eq!(report.checks.len(), 3);
    assert!(
        report.checks.iter().all(|c| c.status == CheckStatus::Pass),
        "{report:?}"
    );
}

#[test]
fn sgd_run_reports_moment_checks_not_applicable() {
    let out = run_experiment(&quadratic(Algorithm::LocalSgd, 0.0, 5, 50, 0.1)).unwrap();
    let report = validate_trace(out.trace.as_ref().unwrap(), out.log.g_empirical).unwrap();
    assert_eq!(
        report.get("aux_sequence_identity").unwrap().status,
        CheckStatus::NotApplicable
    );
    assert_eq!(
        report.get("vhat_monotone").unwrap().status,
        CheckStatus::NotApplicable
    );
    assert!(report.all_passed());
}

#[test]
fn single_step_period_has_zero_consensus_error() {
    let out = run_experiment(&quadratic(Algorithm::LocalAmsgrad, 0.9, 1, 100, 0.5)).unwrap();
    let check = consensus_bound_check(out.trace.as_ref().unwrap(), out.log.g_empirical).unwrap();
    assert_eq!(check.status, CheckStatus::Pass);
    assert_eq!(check.max_value, 0.0);
    assert!(
        check.detail.starts_with("max LHS = 0e0"),
        "{}",
        check.detail
    );
    assert!(out.log.records.iter().all(|r| r.consensus_max == 0.0));
}

#[test]
fn consensus_bound_holds_for_long_period() {
    let out = run_experiment(&quadratic(Algorithm::LocalAmsgrad, 0.9, 10, 500, 0.1)).unwrap();
    let trace = out.trace.as_ref().unwrap();
    let check = consensus_bound_check(trace, out.log.g_empirical).unwrap();
    assert!(check.max_value <= 1.0);
    // right after a sync every worker holds x̄
    for step in trace
        .steps
        .iter()
        .filter(|s| s.t > 1 && (s.t - 1) % 10 == 0)
    {
        assert!(step.workers_x.windows(2).all(|w| w[0] == w[1]));
    }
}

#[test]
fn naive_counterexample_vhat_follows_closed_form() {
    let out = run_experiment(&ExperimentConfig::counterexample(
        Algorithm::NaiveLocalAmsgrad,
        40,
    ))
    .unwrap();
    let trace = out.trace.unwrap();
    let mut prev = 0.0;
    for step in &trace.steps {
        let VhatSnapshot::PerWorker(vs) = &step.vhat else {
            panic!("per-worker v̂ expected")
        };
        let expected = 16.0 * (1.0 - 0.5f64.powi(step.t as i32));
        assert!(
            (vs[0][0] - expected).abs() <= 1e-12 * expected,
            "t = {}",
            step.t
        );
        assert!(vs[0][0] > prev);
        prev = vs[0][0];
    }
    assert_eq!(
        vhat_monotonicity_check(&trace).unwrap().status,
        CheckStatus::Pass
    );
}

#[test]
fn noisy_run_has_monotone_vhat() {
    for alg in [Algorithm::LocalAmsgrad, Algorithm::NaiveLocalAmsgrad] {
        let out = run_experiment(&quadratic(alg, 0.9, 4, 1000, 1.0)).unwrap();
        let check = vhat_monotonicity_check(out.trace.as_ref().unwrap()).unwrap();
        assert_eq!(check.max_value, 0.0, "{}", alg.name());
    }
}

#[test]
fn auxiliary_identity_holds_on_fifty_dim_run() {
    let mut cfg = quadratic(Algorithm::LocalAmsgrad, 0.9, 5, 200, 0.0);
    cfg.problem = ProblemSpec::Quadratic {
        dim: 50,
        curvature_min: 0.5,
        curvature_max: 2.0,
        radius: 10.0,
    };
    let out = run_experiment(&cfg).unwrap();
    let check = aux_identity_check(out.trace.as_ref().unwrap()).unwrap();
    assert!(check.max_value <= 1e-10, "{}", check.max_value);
}

#[test]
fn auxiliary_identity_recomputed_by_hand() {
    // straight-line evaluation of both sides from the raw trace
    let cfg = quadratic(Algorithm::LocalAmsgrad, 0.8, 3, 60, 0.0);
    let h = cfg.hyper;
    let out = run_experiment(&cfg).unwrap();
    let trace = out.trace.unwrap();
    let d = 10;
    let c = h.beta1 / (1.0 - h.beta1);
    let xbar = |t: u64| trace.xbar(t.max(1));
    let zbar = |t: u64| -> Vec<f64> {
        let (now, before) = (xbar(t), xbar(t.saturating_sub(1)));
        (0..d).map(|j| now[j] + c * (now[j] - before[j])).collect()
    };
    let vhat = |t: u64| -> Vec<f64> {
        if t == 0 {
            return vec![h.epsilon; d];
        }
        match &trace.steps[(t - 1) as usize].vhat {
            VhatSnapshot::Shared(v) => v.as_slice().to_vec(),
            _ => unreachable!(),
        }
    };
    for t in 1..=60u64 {
        let (z0, z1) = (zbar(t), zbar(t + 1));
        let (v0, v1) = (vhat(t - 1), vhat(t));
        let step = &trace.steps[(t - 1) as usize];
        for j in 0..d {
            let m_prev = if t == 1 {
                0.0
            } else {
                trace.steps[(t - 2) as usize].mbar[j]
            };
            let rhs = h.alpha * c * (1.0 / v0[j].sqrt() - 1.0 / v1[j].sqrt()) * m_prev
                - h.alpha * step.gbar[j] / v1[j].sqrt();
            let lhs = z1[j] - z0[j];
            assert!(
                (lhs - rhs).abs() <= 1e-10 * z0[j].abs().max(1.0),
                "t = {t}, j = {j}"
            );
        }
    }
}

/// Five terms written out independently of the library's grouping.
fn bound_by_hand(i: &BoundInputs) -> f64 {
    let b = i.beta1 / (1.0 - i.beta1);
    let tn = i.total_iters * i.num_workers;
    let first = 8.0 * i.dim.sqrt() * i.f_init_minus_min / tn.sqrt();
    let second = 8.0 * i.lipschitz * i.dim.sqrt() * i.sigma.powi(2) / (tn.sqrt() * i.epsilon);
    let third = 8.0 * i.dim * b * i.g.powi(2) / (i.total_iters * i.epsilon.powf(0.5));
    let fourth = 8.0 * i.lipschitz * i.num_workers * b.powi(2) * i.g.powi(2)
        / (i.total_iters.powi(2) * i.epsilon);
    let fifth = 8.0
        * i.num_workers
        * i.lipschitz
        * (b.powi(2) + 5.0 * (i.period - 1.0).powi(2))
        * i.g.powi(2)
        / (i.total_iters * i.epsilon.powf(1.5));
    first + second + third + fourth + fifth
}

#[test]
fn bound_matches_independent_evaluation() {
    let inputs = BoundInputs {
        lipschitz: 3.0,
        sigma: 0.4,
        g: 7.0,
        epsilon: 0.05,
        beta1: 0.9,
        dim: 100.0,
        total_iters: 20_000.0,
        num_workers: 8.0,
        period: 6.0,
        f_init_minus_min: 12.5,
    };
    let lib = convergence_bound(&inputs).unwrap();
    let hand = bound_by_hand(&inputs);
    assert!(
        (lib.value - hand).abs() <= 1e-12 * hand,
        "{} vs {hand}",
        lib.value
    );
    assert!(lib.in_regime);
}

#[test]
fn stationarity_sits_below_rescaled_bound() {
    let (d, n, total, eps) = (20usize, 4usize, 4000u64, 0.04);
    let mut cfg = quadratic(Algorithm::LocalAmsgrad, 0.9, 4, total, 0.5);
    cfg.problem = ProblemSpec::Quadratic {
        dim: d,
        curvature_min: 0.5,
        curvature_max: 2.0,
        radius: 10.0,
    };
    cfg.validators = false;
    let problem = cfg.build_problem().unwrap();
    let c = *problem.constants();
    let lipschitz = c.lipschitz.unwrap();
    cfg.hyper.epsilon = eps;
    cfg.hyper.alpha =
        localams::analysis::bound_step_size(n as f64, total as f64, d as f64, eps, lipschitz);
    let out = run_experiment(&cfg).unwrap();
    let f1 = global_loss(problem.as_ref(), &out.log.initial_xbar).unwrap();
    let bound = convergence_bound(&BoundInputs {
        lipschitz,
        sigma: c.sigma,
        g: c.g_inf,
        epsilon: eps,
        beta1: cfg.hyper.beta1,
        dim: d as f64,
        total_iters: total as f64,
        num_workers: n as f64,
        period: cfg.hyper.period as f64,
        f_init_minus_min: f1 - problem.min_value().unwrap(),
    })
    .unwrap();
    assert!(bound.in_regime);
    let measure = out.log.stationarity();
    assert!(
        measure <= c.g_inf * bound.value,
        "{measure} vs {}",
        c.g_inf * bound.value
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn auxiliary_identity_for_any_momentum_and_period(
        beta1 in 0.0f64..0.99,
        period in 1u64..9,
        seed in 0u64..500,
    ) {
        let mut cfg = quadratic(Algorithm::LocalAmsgrad, beta1, period, 80, 0.0);
        cfg.seed = seed;
        let out = run_experiment(&cfg).unwrap();
        let check = aux_identity_check(out.trace.as_ref().unwrap()).unwrap();
        prop_assert!(check.max_value <= 1e-10, "{}", check.max_value);
    }

    #[test]
    fn consensus_bound_for_any_period(period in 1u64..15, seed in 0u64..500, sigma in 0.0f64..2.0) {
        let mut cfg = quadratic(Algorithm::LocalAmsgrad, 0.9, period, 60, sigma);
        cfg.seed = seed;
        let out = run_experiment(&cfg).unwrap();
        let check = consensus_bound_check(out.trace.as_ref().unwrap(), out.log.g_empirical).unwrap();
        prop_assert!(check.max_value <= 1.0);
    }
}
