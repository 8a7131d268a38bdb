//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero if any criterion fails.

use std::fs;
use std::time::{Duration, Instant};

use amgqp::diagnostics::{build_reference_set, contraction_check, lyapunov_discrete};
use amgqp::exec::Execution;
use amgqp::flow::{gamma_closed_form, integrate, lyapunov_continuous, Scheme};
use amgqp::harness::{cmd_run, median_with_unreached, ExperimentConfig};
use amgqp::hullproj::{hull_project, resolve_implicit_projection, simplex_qp, QP_TOL};
use amgqp::problems::{fd_gradient_check, MultiObjective, ProblemFamily, ProblemSpec, Quadratic};
use amgqp::rng::UniformStream;
use amgqp::solvers::{
    amg_gamma_next, amg_qp_step, amg_step_size, run, run_with, Method, MethodConfig, RunOptions, RunTrace,
    SolverState,
};
use ndarray::{Array1, Array2};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn vector(stream: &mut UniformStream, n: usize, lo: f64, hi: f64) -> Array1<f64> {
    Array1::from(stream.fill(n, lo, hi))
}

fn matrix(stream: &mut UniformStream, rows: usize, cols: usize, lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_vec((rows, cols), stream.fill(rows * cols, lo, hi)).unwrap()
}

fn norm(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

fn theta_rate_bound() -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    for &l in &[1.0f64, 10.0, 100.0] {
        for &gamma0 in &[0.1f64, 1.0, 10.0] {
            for &mu in &[0.0f64, 0.01 * l, 0.1 * l] {
                let mut gamma = gamma0;
                let mut theta = 1.0f64;
                for k in 0..=1000usize {
                    let kf = k as f64;
                    let sublinear = 4.0 * l / (2.0 * l.sqrt() + gamma0.sqrt() * kf).powi(2);
                    let linear = (1.0 + (mu.min(gamma0) / l).sqrt()).powf(-kf);
                    let bound = sublinear.min(linear) * (1.0 + 1e-12);
                    worst = worst.max(theta / bound);
                    let tau = amg_step_size(gamma, l);
                    theta /= 1.0 + tau;
                    gamma = amg_gamma_next(gamma, mu, tau);
                }
            }
        }
    }
    outcome(worst <= 1.0, format!("max theta_k / bound = {worst:.6}"))
}

/// ex1 and ex2 at n = 20 with the reference point used by criteria 2 and 3.
fn convex_instances() -> Vec<(String, Box<dyn MultiObjective>, Array1<f64>)> {
    let mut out = Vec::new();
    for family in [ProblemFamily::Logsumexp, ProblemFamily::Leastsquares] {
        let bundle = ProblemSpec::new(family, 11, 20, 20, 0.05).build().unwrap();
        let refs = build_reference_set(bundle.as_ref(), 4, 200_000, 5).unwrap();
        let z = Array1::from(refs.points[0].x.clone());
        out.push((family.name().to_string(), bundle, z));
    }
    out
}

fn fixed_step_runs(instances: &[(String, Box<dyn MultiObjective>, Array1<f64>)]) -> Vec<(String, f64, RunTrace)> {
    let mut runs = Vec::new();
    for (name, bundle, _) in instances {
        let l = bundle.lipschitz().unwrap();
        let x0 = vector(&mut UniformStream::new(3, "acceptance/x0"), bundle.n(), -2.0, 2.0);
        for mu in [0.0, bundle.mu()] {
            let config = MethodConfig::new(Method::AmgQp, mu, l).with_max_iters(300);
            let trace = run_with(bundle.as_ref(), &config, x0.view(), RunOptions { record_states: true }).unwrap();
            runs.push((name.clone(), mu, trace));
        }
    }
    runs
}

fn lyapunov_contraction(
    instances: &[(String, Box<dyn MultiObjective>, Array1<f64>)],
    runs: &[(String, f64, RunTrace)],
) -> Outcome {
    let mut details = Vec::new();
    let mut passed = true;
    for (i, (name, mu, trace)) in runs.iter().enumerate() {
        let (_, bundle, z) = &instances[i / 2];
        let violations = contraction_check(bundle.as_ref(), trace, z.view()).unwrap();
        let states = trace.states.as_ref().unwrap();
        let e0 = lyapunov_discrete(bundle.as_ref(), &states[0], z.view()).unwrap();
        let e_end = lyapunov_discrete(bundle.as_ref(), states.last().unwrap(), z.view()).unwrap();
        passed &= violations.is_empty() && trace.records.len() == 301;
        details.push(format!(
            "{name}(mu={mu}): {} violations, E {e0:.3e} -> {e_end:.3e}",
            violations.len()
        ));
    }
    outcome(passed, details.join("; "))
}

fn step_identity(instances: &[(String, Box<dyn MultiObjective>, Array1<f64>)], runs: &[(String, f64, RunTrace)]) -> Outcome {
    let mut worst = 0.0f64;
    let mut replay_ok = true;
    for (i, (_, mu, trace)) in runs.iter().enumerate() {
        let bundle = instances[i / 2].1.as_ref();
        let states = trace.states.as_ref().unwrap();
        for (k, record) in trace.records.iter().enumerate().take(trace.records.len() - 1) {
            let s = &states[k];
            let mut state = SolverState::initial(s.x.clone(), s.gamma, record.m_k);
            state.z = s.z.clone();
            let step = amg_qp_step(bundle, *mu, record.m_k, &state).unwrap();
            replay_ok &= step.x_next == states[k + 1].x;
            let dx = &step.x_next - &s.x;
            let lhs = step.z_qp.dot(&dx);
            let products = step.jac_y.t().dot(&dx);
            let rhs = products.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let grad_scale = step
                .jac_y
                .columns()
                .into_iter()
                .map(|c| c.dot(&c).sqrt())
                .fold(0.0, f64::max);
            let scale = 1e-8 * (1.0 + norm(&dx) * grad_scale);
            worst = worst.max((lhs - rhs).abs() / scale);
        }
    }
    outcome(
        worst <= 1.0 && replay_ok,
        format!("max |lhs - rhs| / tolerance = {worst:.3e}, replay exact = {replay_ok}"),
    )
}

fn continuous_decay() -> Outcome {
    let n = 10;
    let mut worst_decay = f64::NEG_INFINITY;
    let mut worst_gamma = 0.0f64;
    let mut stream = UniformStream::new(21, "acceptance/flow");
    for m in 1..=3 {
        let centers: Vec<Array1<f64>> = (0..m).map(|_| vector(&mut stream, n, -1.0, 1.0)).collect();
        let diagonals: Vec<Array1<f64>> = (0..m).map(|_| vector(&mut stream, n, 0.5, 2.0)).collect();
        let bundle = Quadratic::diagonal(centers.clone(), diagonals).unwrap();
        let mu = bundle.mu();
        // The minimizer of any single objective is weakly Pareto optimal.
        let z = centers[0].clone();
        let x0 = vector(&mut stream, n, -2.0, 2.0);
        let x1 = vector(&mut stream, n, -0.5, 0.5);
        let gamma0 = 1.0;
        let traj = integrate(&bundle, mu, gamma0, x0.view(), x1.view(), 10.0, 1e-3, Scheme::Rk4).unwrap();
        let e0 = lyapunov_continuous(&bundle, &traj[0], z.view()).unwrap();
        for s in &traj {
            let e = lyapunov_continuous(&bundle, s, z.view()).unwrap();
            worst_decay = worst_decay.max(e / ((-s.t).exp() * e0 * (1.0 + 1e-3)));
            worst_gamma = worst_gamma.max((s.gamma - gamma_closed_form(mu, gamma0, s.t)).abs());
        }
    }
    outcome(
        worst_decay <= 1.0 && worst_gamma <= 1e-6,
        format!("max E(t)/bound = {worst_decay:.6}, max gamma error = {worst_gamma:.2e}"),
    )
}

fn resolver_fixed_point() -> Outcome {
    let mut stream = UniformStream::new(5, "acceptance/resolver");
    let mut worst = 0.0f64;
    let mut equal_cases = 0;
    for i in 0..500 {
        let n = 1 + (stream.next_unit() * 10.0) as usize;
        let m = 1 + (stream.next_unit() * 4.0) as usize;
        let p = matrix(&mut stream, n, m, -2.0, 2.0);
        let u = vector(&mut stream, n, -3.0, 3.0);
        let w = vector(&mut stream, n, -3.0, 3.0);
        let a = stream.next_in(0.1, 5.0);
        let b = if i % 2 == 0 {
            equal_cases += 1;
            a
        } else {
            stream.next_in(0.0, a)
        };
        let x = resolve_implicit_projection(p.view(), a, b, u.view(), w.view()).unwrap();
        let inner = &w - &(b * &x);
        let proj = hull_project(p.view(), inner.view(), QP_TOL).unwrap().point;
        let residual = norm(&(a * &x - &u + &proj));
        worst = worst.max(residual / (1e-9 * (1.0 + norm(&u) + norm(&w))));
    }
    outcome(
        worst <= 1.0,
        format!("500 instances ({equal_cases} with a = b), max residual / tolerance = {worst:.3e}"),
    )
}

fn qp_grid_oracle() -> Outcome {
    let mut stream = UniformStream::new(8, "acceptance/qp");
    let mut worst = 0.0f64;
    let steps = 1000usize;
    let h = 1.0 / steps as f64;
    for i in 0..100 {
        let m = if i % 2 == 0 { 2 } else { 3 };
        let b = matrix(&mut stream, m, m, -1.0, 1.0);
        let q = b.t().dot(&b);
        let c = vector(&mut stream, m, -1.0, 1.0);
        let objective = |l: &Array1<f64>| 0.5 * l.dot(&q.dot(l)) + c.dot(l);
        let lambda = simplex_qp(q.view(), c.view(), QP_TOL).unwrap().into_inner();
        let qp_value = objective(&lambda);
        let mut grid_min = f64::INFINITY;
        if m == 2 {
            for a in 0..=steps {
                let l = Array1::from(vec![a as f64 * h, (steps - a) as f64 * h]);
                grid_min = grid_min.min(objective(&l));
            }
        } else {
            for a in 0..=steps {
                for bb in 0..=steps - a {
                    let l = Array1::from(vec![a as f64 * h, bb as f64 * h, (steps - a - bb) as f64 * h]);
                    grid_min = grid_min.min(objective(&l));
                }
            }
        }
        worst = worst.max((qp_value - grid_min).abs());
    }
    outcome(worst <= 1e-5, format!("max |qp - grid| = {worst:.3e}"))
}

fn backtracking_bound() -> Outcome {
    let bundle = ProblemSpec::new(ProblemFamily::Leastsquares, 2, 50, 50, 0.05).build().unwrap();
    let l = bundle.lipschitz().unwrap();
    let x0 = vector(&mut UniformStream::new(1, "acceptance/bt"), 50, -2.0, 2.0);
    let mut passed = true;
    let mut details = Vec::new();
    for m0 in [10.0, l / 16.0] {
        for method in [Method::AmgQpBt, Method::AmgQpSr, Method::AmgQpResR, Method::Apg, Method::Sd] {
            let config = MethodConfig::new(method, 0.0, m0).with_max_iters(300);
            let trace = run(bundle.as_ref(), &config, x0.view()).unwrap();
            let peak = trace.records.iter().map(|r| r.m_k).fold(0.0, f64::max);
            passed &= peak <= m0.max(2.0 * l);
            details.push(format!("{}@M0={m0:.1}: max M_k/max(M0,2L) = {:.3}", method.name(), peak / m0.max(2.0 * l)));
        }
    }

    // A quadratic with curvature L_true never backtracks once M >= L_true.
    let l_true = 4.0;
    let quad = Quadratic::diagonal(
        vec![Array1::from(vec![1.0, -1.0]), Array1::from(vec![-1.0, 2.0])],
        vec![Array1::from(vec![l_true, 1.0]), Array1::from(vec![2.0, l_true])],
    )
    .unwrap();
    let config = MethodConfig::new(Method::AmgQpBt, 0.0, l_true).with_max_iters(100);
    let trace = run(&quad, &config, Array1::from(vec![3.0, 3.0]).view()).unwrap();
    let no_backtrack = trace.records.iter().all(|r| r.backtrack_count == 0);
    passed &= no_backtrack;
    details.push(format!("quadratic at M = L_true: no backtracking = {no_backtrack}"));
    outcome(passed, details.join("; "))
}

fn residual_restart_monotone() -> Outcome {
    let mut passed = true;
    let mut details = Vec::new();
    for family in [ProblemFamily::Logsumexp, ProblemFamily::Leastsquares, ProblemFamily::NonconvexPair] {
        let bundle = ProblemSpec::new(family, 4, 50, 50, 0.05).build().unwrap();
        let config = MethodConfig::new(Method::AmgQpResR, 0.0, 10.0).with_max_iters(300);
        let mut restarts = 0;
        let mut increases = 0;
        for start in 0..10 {
            let x0 = amgqp::harness::initial_point(9, start, 50, (-2.0, 2.0));
            let trace = run(bundle.as_ref(), &config, x0.view()).unwrap();
            restarts += trace.records.iter().filter(|r| r.restart_flag).count();
            increases += trace
                .records
                .windows(2)
                .filter(|w| w[1].kkt_residual > w[0].kkt_residual)
                .count();
        }
        passed &= increases == 0;
        details.push(format!("{}: {increases} increases, {restarts} restarts", family.name()));
    }
    outcome(passed, details.join("; "))
}

fn qualitative_speedup() -> Outcome {
    let delta = 0.05;
    let bundle = ProblemSpec::new(ProblemFamily::Leastsquares, 0, 100, 100, delta).build().unwrap();
    let budget = 6000;
    let methods = [
        ("SD", MethodConfig::new(Method::Sd, 0.0, 10.0)),
        ("AMG_QP(mu=delta)", MethodConfig::new(Method::AmgQpBt, delta, 10.0)),
        ("AMG_QP_ResR", MethodConfig::new(Method::AmgQpResR, 0.0, 10.0)),
    ];
    let mut medians = Vec::new();
    for (_, config) in &methods {
        let config = config.clone().with_max_iters(budget).with_kkt_tol(1e-6);
        let iters: Vec<Option<f64>> = amgqp::exec::map_indexed(Execution::Parallel, 10, |start| {
            let x0 = amgqp::harness::initial_point(0, start, 100, (-2.0, 2.0));
            run(bundle.as_ref(), &config, x0.view())
                .unwrap()
                .iterations_to(1e-6)
                .map(|k| k as f64)
        });
        medians.push(median_with_unreached(&iters));
    }
    let inf = |v: Option<f64>| v.unwrap_or(f64::INFINITY);
    let (sd, amg, resr) = (inf(medians[0]), inf(medians[1]), inf(medians[2]));
    let passed = amg.is_finite() && amg < sd && resr <= 1.5 * amg;
    let fmt = |v: f64| if v.is_finite() { format!("{v}") } else { "∞".to_string() };
    outcome(
        passed,
        format!(
            "median iterations to 1e-6 (budget {budget}): SD {}, AMG_QP(mu=delta) {}, AMG_QP_ResR {}",
            fmt(sd),
            fmt(amg),
            fmt(resr)
        ),
    )
}

fn gradient_correctness() -> Outcome {
    let mut worst = 0.0f64;
    let mut details = Vec::new();
    for family in [ProblemFamily::Logsumexp, ProblemFamily::Leastsquares, ProblemFamily::NonconvexPair] {
        let bundle = ProblemSpec::new(family, 13, 20, 20, 0.05).build().unwrap();
        let mut stream = UniformStream::new(13, "acceptance/fd");
        let mut family_worst = 0.0f64;
        for _ in 0..20 {
            let x = vector(&mut stream, 20, -2.0, 2.0);
            family_worst = family_worst.max(fd_gradient_check(bundle.as_ref(), x.view(), 1e-5).unwrap());
        }
        worst = worst.max(family_worst);
        details.push(format!("{}: {family_worst:.2e}", family.name()));
    }
    outcome(worst <= 1e-6, details.join("; "))
}

fn strip_wall_clock(csv: &str) -> String {
    csv.lines()
        .map(|line| {
            let mut cells: Vec<&str> = line.split(',').collect();
            cells.remove(1);
            cells.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn determinism() -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut config = ExperimentConfig::benchmark_default(ProblemFamily::Logsumexp);
    config.problem = ProblemSpec::new(ProblemFamily::Logsumexp, 3, 20, 20, 0.05);
    config.n_starts = 4;
    config.max_iters = 60;
    let mut listings = Vec::new();
    for dir in &dirs {
        config.output_dir = dir.path().to_path_buf();
        let outcome = cmd_run(&config, Execution::Parallel).unwrap();
        assert!(outcome.failures.is_empty());
        let mut files: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .collect();
        files.sort();
        listings.push(files);
    }
    let same_names = listings[0].iter().map(|p| p.file_name()).eq(listings[1].iter().map(|p| p.file_name()));
    let mut identical = 0;
    for (a, b) in listings[0].iter().zip(&listings[1]) {
        let (a, b) = (fs::read_to_string(a).unwrap(), fs::read_to_string(b).unwrap());
        if strip_wall_clock(&a) == strip_wall_clock(&b) {
            identical += 1;
        }
    }
    let total = listings[0].len();
    outcome(
        same_names && identical == total && total == config.methods.len() * 4,
        format!("{identical}/{total} trace files identical outside wall_seconds"),
    )
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome, Duration, Option<Duration>)> = Vec::new();
    let mut timed = |id: usize, name: &'static str, limit: Option<Duration>, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let out = f();
        results.push((id, name, out, start.elapsed(), limit));
    };

    timed(1, "theta rate bound", Some(Duration::from_secs(1)), &mut theta_rate_bound);

    // Criteria 2 and 3 share the reference points and runs; the runtime
    // limit covers reference construction plus the checks.
    let start = Instant::now();
    let instances = convex_instances();
    let runs = fixed_step_runs(&instances);
    let c2 = lyapunov_contraction(&instances, &runs);
    let c2_time = start.elapsed();
    results.push((2, "Lyapunov contraction", c2, c2_time, Some(Duration::from_secs(10))));
    let start = Instant::now();
    let c3 = step_identity(&instances, &runs);
    results.push((3, "step identity", c3, start.elapsed(), None));

    let mut timed = |id: usize, name: &'static str, limit: Option<Duration>, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let out = f();
        results.push((id, name, out, start.elapsed(), limit));
    };
    timed(4, "continuous decay", Some(Duration::from_secs(5)), &mut continuous_decay);
    timed(5, "implicit resolver", Some(Duration::from_secs(2)), &mut resolver_fixed_point);
    timed(6, "QP grid oracle", Some(Duration::from_secs(5)), &mut qp_grid_oracle);
    timed(7, "backtracking bound", None, &mut backtracking_bound);
    timed(8, "residual restart monotone", None, &mut residual_restart_monotone);
    timed(9, "qualitative speedup", Some(Duration::from_secs(60)), &mut qualitative_speedup);
    timed(10, "gradient correctness", None, &mut gradient_correctness);
    timed(11, "determinism", None, &mut determinism);

    let mut failures = 0;
    for (id, name, out, elapsed, limit) in &results {
        let in_time = limit.is_none_or(|l| *elapsed < l);
        let ok = out.passed && in_time;
        if !ok {
            failures += 1;
        }
        let limit_note = limit.map(|l| format!(" (limit {:.0}s)", l.as_secs_f64())).unwrap_or_default();
        println!(
            "{} criterion {id:>2} {name}: {} [{:.2}s{limit_note}]",
            if ok { "PASS" } else { "FAIL" },
            out.detail,
            elapsed.as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", results.len() - failures, results.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
