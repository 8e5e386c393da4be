//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::time::{Duration, Instant};

use localams::analysis::{
    aux_identity_check, bound_step_size, consensus_bound_check, max_linear_speedup_period,
    vhat_monotonicity_check, CheckStatus,
};
use localams::config::{InitSpec, ProblemSpec};
use localams::optimizers::{WorkerState, SCALAR_BYTES};
use localams::problems::{
    counterexample_problem, gaussian_mixture_dataset, global_gradient, mlp_problem,
    quadratic_problem, shard_dataset, stochastic_gradient, Problem, ShardStrategy,
};
use localams::simulator::{run_experiment, sweep, RunOutput, SweepAxis};
use localams::{
    Algorithm, ExperimentConfig, Hyperparams, ParamVector, RngStream, StreamId, StreamPurpose,
};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn xbar_path(out: &RunOutput) -> Vec<f64> {
    let trace = out.trace.as_ref().expect("validators on");
    (1..=trace.steps.len() as u64 + 1)
        .map(|t| trace.xbar(t)[0])
        .collect()
}

fn counterexample_divergence() -> Outcome {
    let problem = counterexample_problem();
    let hyper = ExperimentConfig::counterexample(Algorithm::NaiveLocalAmsgrad, 1).hyper;
    let mut locals = Vec::new();
    for i in 0..3 {
        let mut w = WorkerState::new(i, ParamVector::new(vec![5.0]).unwrap(), hyper.epsilon);
        let mut rng = RngStream::new(0, StreamId::gradient(i, 1));
        let g = stochastic_gradient(&problem, i, &w.x, &mut rng).unwrap();
        w.amsgrad_moments(&g, &hyper).unwrap();
        w.naive_local_step(&hyper).unwrap();
        locals.push(w.x[0]);
    }
    let expected_locals = [4.8586, 5.1414, 5.1414];
    let locals_ok = locals
        .iter()
        .zip(expected_locals)
        .all(|(a, b)| (a - b).abs() <= 1e-3);

    let out = run_experiment(&ExperimentConfig::counterexample(
        Algorithm::NaiveLocalAmsgrad,
        100,
    ))
    .unwrap();
    // index t: x̄ after t updates
    let xbar = xbar_path(&out);
    let first_ok = (xbar[1] - 5.047).abs() <= 1e-3;
    let increasing = xbar[1..].windows(2).all(|w| w[1] > w[0]);
    let last = xbar[100];
    outcome(
        locals_ok && first_ok && increasing && last > 8.0,
        format!(
            "workers at t=1 {:.4}/{:.4}/{:.4}, x̄₁ = {:.4}, strictly increasing = {increasing}, x̄₁₀₀ = {last:.3}",
            locals[0], locals[1], locals[2], xbar[1]
        ),
    )
}

fn shared_fix(store: &mut Vec<RunOutput>) -> Outcome {
    let out = run_experiment(&ExperimentConfig::counterexample(
        Algorithm::LocalAmsgrad,
        2000,
    ))
    .unwrap();
    let x = out.log.final_xbar[0];
    let grad = global_gradient(&counterexample_problem(), &out.log.final_xbar).unwrap()[0];
    let ok = x.abs() <= 0.5 && grad.abs() <= 0.2;
    store.push(out);
    outcome(
        ok,
        format!("|x̄_T| = {:.3e}, |∇f(x̄_T)| = {:.3e}", x.abs(), grad.abs()),
    )
}

fn quadratic_config(noise_std: f64) -> ExperimentConfig {
    ExperimentConfig {
        algorithm: Algorithm::LocalAmsgrad,
        problem: ProblemSpec::Quadratic {
            dim: 50,
            curvature_min: 0.5,
            curvature_max: 2.0,
            radius: 10.0,
        },
        hyper: Hyperparams {
            alpha: 0.01,
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-2,
            period: 5,
            total_iters: 500,
        },
        num_workers: 4,
        seed: 11,
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

fn aux_identity(store: &mut Vec<RunOutput>) -> Outcome {
    let out = run_experiment(&quadratic_config(0.0)).unwrap();
    let check = aux_identity_check(out.trace.as_ref().unwrap()).unwrap();
    store.push(out);
    outcome(
        check.status == CheckStatus::Pass,
        format!(
            "max relative residual {:.3e} (limit {:.0e})",
            check.max_value, check.threshold
        ),
    )
}

fn consensus(store: &mut Vec<RunOutput>) -> Outcome {
    let out = run_experiment(&quadratic_config(0.1)).unwrap();
    let check = consensus_bound_check(out.trace.as_ref().unwrap(), out.log.g_empirical).unwrap();
    store.push(out);
    outcome(
        check.status == CheckStatus::Pass,
        format!("max LHS/RHS = {:.4}; {}", check.max_value, check.detail),
    )
}

fn monotone(store: &[RunOutput]) -> Outcome {
    let mut violations = 0.0;
    let mut steps = 0;
    for out in store {
        let trace = out.trace.as_ref().unwrap();
        let check = vhat_monotonicity_check(trace).unwrap();
        violations += check.max_value;
        steps += trace.steps.len();
    }
    outcome(
        violations == 0.0 && store.len() == 3,
        format!(
            "{violations} decreases over {steps} steps in {} runs",
            store.len()
        ),
    )
}

fn single_node() -> Outcome {
    let mut cfg = quadratic_config(0.5);
    cfg.num_workers = 1;
    cfg.hyper.period = 1;
    cfg.hyper.total_iters = 1000;
    cfg.validators = false;
    let problem = cfg.build_problem().unwrap();
    let out = run_experiment(&cfg).unwrap();

    let h = cfg.hyper;
    let mut x = cfg.initial_point(problem.as_ref()).unwrap().into_vec();
    let d = x.len();
    let (mut m, mut v, mut vhat) = (vec![0.0; d], vec![0.0; d], vec![h.epsilon; d]);
    for t in 1..=h.total_iters {
        let mut rng = RngStream::new(cfg.seed, StreamId::gradient(0, t));
        let xp = ParamVector::new(x.clone()).unwrap();
        let g = stochastic_gradient(problem.as_ref(), 0, &xp, &mut rng).unwrap();
        for j in 0..d {
            m[j] = h.beta1 * m[j] + (1.0 - h.beta1) * g[j];
            v[j] = h.beta2 * v[j] + (1.0 - h.beta2) * g[j] * g[j];
            vhat[j] = vhat[j].max(v[j]);
            x[j] -= h.alpha * (m[j] / vhat[j].sqrt());
        }
    }
    let sim = out.workers[0].x.as_slice();
    let mismatched = sim
        .iter()
        .zip(&x)
        .filter(|(a, b)| a.to_bits() != b.to_bits())
        .count();
    outcome(
        mismatched == 0,
        format!("{mismatched} of {d} coordinates differ after 1000 steps"),
    )
}

fn communication() -> Outcome {
    let mut cfg = quadratic_config(0.1);
    cfg.hyper.total_iters = 1000;
    cfg.hyper.period = 10;
    cfg.validators = false;
    cfg.cadence = 50;
    let out = run_experiment(&cfg).unwrap();
    let d = 50;
    let expected = 100 * cfg.num_workers as u64 * 4 * d * SCALAR_BYTES;
    let last = out.log.last();
    let count_ok = last.sync_rounds == 100 && last.comm_bytes == expected;

    let values: Vec<String> = ["1", "5", "10", "20"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let (rows, _) = sweep(&cfg, SweepAxis::K, &values).unwrap();
    let comm: Vec<u64> = rows.iter().map(|r| r.comm_bytes).collect();
    let decreasing = comm.windows(2).all(|w| w[1] < w[0]);
    outcome(
        count_ok && decreasing,
        format!(
            "{} sync rounds, {} bytes (expected {expected}); k-sweep comm {comm:?}",
            last.sync_rounds, last.comm_bytes
        ),
    )
}

fn rate_trend() -> Outcome {
    const SEEDS: u64 = 20;
    let (d, eps, sigma) = (20usize, 0.04, 1.0);
    let measure = |n: usize, total: u64| -> f64 {
        let mut acc = 0.0;
        for seed in 0..SEEDS {
            let mut cfg = quadratic_config(sigma);
            cfg.problem = ProblemSpec::Quadratic {
                dim: d,
                curvature_min: 0.5,
                curvature_max: 2.0,
                radius: 10.0,
            };
            cfg.num_workers = n;
            cfg.seed = 1000 + seed;
            cfg.init = InitSpec::Constant { value: 3.0 };
            cfg.validators = false;
            cfg.parallel = false;
            let lipschitz = cfg.build_problem().unwrap().constants().lipschitz.unwrap();
            cfg.hyper = Hyperparams {
                alpha: bound_step_size(n as f64, total as f64, d as f64, eps, lipschitz),
                beta1: 0.9,
                beta2: 0.99,
                epsilon: eps,
                period: max_linear_speedup_period(total, d as u64, n as u64).max(1),
                total_iters: total,
            };
            acc += run_experiment(&cfg).unwrap().log.stationarity();
        }
        acc / SEEDS as f64
    };
    let n1 = measure(1, 5000);
    let n4 = measure(4, 5000);
    let short = measure(1, 1250);
    outcome(
        n4 < n1 && n1 < short,
        format!("N=1: {n1:.4e}, N=4: {n4:.4e}; T=1250 (N=1): {short:.4e}"),
    )
}

fn non_iid_ordering() -> Outcome {
    const SEEDS: u64 = 5;
    let epochs = 3;
    let base = ExperimentConfig::mixture(Algorithm::LocalSgd, 0.1, 1, 0);
    let ProblemSpec::Mlp {
        samples_per_cluster,
        clusters,
        batch_size,
        ..
    } = &base.problem
    else {
        unreachable!()
    };
    let shard = clusters * samples_per_cluster / base.num_workers;
    let iters = (epochs * shard.div_ceil(*batch_size)) as u64;
    let best = |alg: Algorithm, grid: &[f64]| -> (f64, f64) {
        grid.iter()
            .map(|&alpha| {
                let mean = (0..SEEDS)
                    .map(|s| {
                        let mut cfg = ExperimentConfig::mixture(alg, alpha, iters, s);
                        cfg.parallel = true;
                        match run_experiment(&cfg) {
                            Ok(out) => out.log.last().f_xbar,
                            Err(_) => f64::INFINITY,
                        }
                    })
                    .sum::<f64>()
                    / SEEDS as f64;
                (alpha, mean)
            })
            .fold(
                (f64::NAN, f64::INFINITY),
                |b, c| if c.1 < b.1 { c } else { b },
            )
    };
    let ams = best(Algorithm::LocalAmsgrad, &[1e-5, 1e-4, 1e-3, 1e-2]);
    let sgd = best(Algorithm::LocalSgd, &[1e-3, 1e-2, 1e-1, 1.0]);
    outcome(
        ams.1 <= sgd.1,
        format!(
            "{iters} iterations; local AMSGrad {:.4} (α = {:e}), local SGD {:.4} (α = {:e})",
            ams.1, ams.0, sgd.1, sgd.0
        ),
    )
}

fn central_difference_error(problem: &dyn Problem, worker: usize, x: &ParamVector, h: f64) -> f64 {
    let g = problem.gradient(worker, x).unwrap();
    let mut diff_sq = 0.0;
    let mut scale_sq = 0.0;
    let base = x.as_slice().to_vec();
    for j in 0..base.len() {
        let mut plus = base.clone();
        let mut minus = base.clone();
        plus[j] += h;
        minus[j] -= h;
        let fp = problem
            .loss(worker, &ParamVector::new(plus).unwrap())
            .unwrap();
        let fm = problem
            .loss(worker, &ParamVector::new(minus).unwrap())
            .unwrap();
        let fd = (fp - fm) / (2.0 * h);
        diff_sq += (fd - g[j]).powi(2);
        scale_sq += g[j].powi(2).max(fd * fd);
    }
    diff_sq.sqrt() / scale_sq.sqrt().max(1e-12)
}

fn gradient_checks() -> Outcome {
    let mut rng = RngStream::new(5, StreamId::new(StreamPurpose::Test, 0, 0));
    let quad = quadratic_problem(&mut rng, 10, 3, (0.5, 2.0)).unwrap();
    let mut rng = RngStream::new(6, StreamId::new(StreamPurpose::Test, 0, 0));
    let data = gaussian_mixture_dataset(&mut rng, 4, 5, 20).unwrap();
    let shards = shard_dataset(&data, 2, ShardStrategy::Iid, &mut rng).unwrap();
    let mlp = mlp_problem(shards, &[5, 8, 6, 4], 16, 50.0).unwrap();

    let mut worst_quad = 0.0_f64;
    let mut worst_mlp = 0.0_f64;
    for p in 0..20u64 {
        let mut rng = RngStream::new(7, StreamId::new(StreamPurpose::Test, 1, p));
        let xq = localams::numeric::gaussian_vector(&mut rng, quad.dim(), 0.0, 3.0).unwrap();
        worst_quad = worst_quad.max(central_difference_error(&quad, (p % 3) as usize, &xq, 1e-4));
        let xm = localams::numeric::gaussian_vector(&mut rng, mlp.dim(), 0.0, 0.5).unwrap();
        worst_mlp = worst_mlp.max(central_difference_error(&mlp, (p % 2) as usize, &xm, 1e-6));
    }
    outcome(
        worst_quad <= 1e-6 && worst_mlp <= 1e-4,
        format!("worst relative error: quadratic {worst_quad:.2e}, MLP {worst_mlp:.2e}"),
    )
}

fn main() {
    let mut traced = Vec::new();
    let mut results: Vec<(&str, Outcome, Duration, Duration)> = Vec::new();
    let mut timed = |name: &'static str, limit: Duration, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        results.push((name, o, start.elapsed(), limit));
    };
    let sec = Duration::from_secs;
    timed(
        "1 counterexample divergence",
        sec(1),
        &mut counterexample_divergence,
    );
    timed("2 shared v̂ convergence", sec(1), &mut || {
        shared_fix(&mut traced)
    });
    timed("3 auxiliary sequence identity", sec(5), &mut || {
        aux_identity(&mut traced)
    });
    timed("4 consensus bound", sec(5), &mut || consensus(&mut traced));
    timed("5 v̂ monotonicity", sec(5), &mut || monotone(&traced));
    timed("6 single-node reduction", sec(5), &mut single_node);
    timed("7 communication accounting", sec(5), &mut communication);
    timed("8 rate trend", sec(60), &mut rate_trend);
    timed("9 non-iid ordering", sec(300), &mut non_iid_ordering);
    timed("10 gradient correctness", sec(5), &mut gradient_checks);

    let mut failures = 0;
    for (name, o, elapsed, limit) in &results {
        let in_time = elapsed <= limit;
        let pass = o.passed && in_time;
        if !pass {
            failures += 1;
        }
        println!(
            "{} criterion {name}: {} [{:.2}s, limit {}s]",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
    }
    println!(
        "{} of {} criteria passed",
        results.len() - failures,
        results.len()
    );
    if failures > 0 {
        std::process::exit(1);
    }
}
