//! Discrete multiobjective methods and the run driver.
//!
//! All methods share the same QP engine ([`crate::hullproj`]) and the same
//! doubling backtracking test
//!
//! ```text
//! f_j(x⁺) − f_j(y⁺) − ⟨∇f_j(y⁺), x⁺ − y⁺⟩ ≤ (M/2)‖x⁺ − y⁺‖²   for all j,
//! ```
//!
//! evaluated with a rounding allowance of a few ulps of the objective values
//! so that near-converged iterates do not trigger spurious doublings.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::hullproj::{hull_project, kkt_residual, simplex_qp, QP_TOL};
use crate::problems::{eval_jacobian, eval_objectives, MultiObjective};
use crate::{Error, Result};

/// Doublings allowed per iteration before the oracle is declared broken.
pub const MAX_BACKTRACKS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "SD")]
    Sd,
    #[serde(rename = "APG")]
    Apg,
    #[serde(rename = "AMG_QP")]
    AmgQp,
    #[serde(rename = "AMG_QP_BT")]
    AmgQpBt,
    #[serde(rename = "AMG_QP_SR")]
    AmgQpSr,
    #[serde(rename = "AMG_QP_ResR")]
    AmgQpResR,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Sd => "SD",
            Method::Apg => "APG",
            Method::AmgQp => "AMG_QP",
            Method::AmgQpBt => "AMG_QP_BT",
            Method::AmgQpSr => "AMG_QP_SR",
            Method::AmgQpResR => "AMG_QP_ResR",
        }
    }

    pub fn restart(self) -> Option<RestartCriterion> {
        match self {
            Method::AmgQpSr => Some(RestartCriterion::Speed),
            Method::AmgQpResR => Some(RestartCriterion::Residual),
            _ => None,
        }
    }

    fn backtracks(self) -> bool {
        !matches!(self, Method::AmgQp)
    }
}

fn default_gamma0() -> f64 {
    1.0
}
fn default_theta0() -> f64 {
    1.0
}
fn default_max_iters() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub method: Method,
    #[serde(default)]
    pub mu: f64,
    /// Lipschitz constant for `AMG_QP`, initial backtracking estimate otherwise.
    #[serde(rename = "L_or_M0")]
    pub l_or_m0: f64,
    #[serde(default = "default_gamma0")]
    pub gamma0: f64,
    #[serde(default = "default_theta0")]
    pub theta0: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub kkt_tol: f64,
}

impl MethodConfig {
    pub fn new(method: Method, mu: f64, l_or_m0: f64) -> Self {
        Self {
            method,
            mu,
            l_or_m0,
            gamma0: default_gamma0(),
            theta0: default_theta0(),
            max_iters: default_max_iters(),
            kkt_tol: 0.0,
        }
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_kkt_tol(mut self, kkt_tol: f64) -> Self {
        self.kkt_tol = kkt_tol;
        self
    }

    pub fn with_gamma0(mut self, gamma0: f64) -> Self {
        self.gamma0 = gamma0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidInput(format!("{}: {msg}", self.method.name())));
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return bad("mu must be finite and nonnegative");
        }
        if !(self.l_or_m0 > 0.0 && self.l_or_m0.is_finite()) {
            return bad("L_or_M0 must be positive");
        }
        if !(self.gamma0 > 0.0 && self.gamma0.is_finite()) {
            return bad("gamma0 must be positive");
        }
        if !(self.theta0 > 0.0 && self.theta0.is_finite()) {
            return bad("theta0 must be positive");
        }
        if !(self.kkt_tol >= 0.0) {
            return bad("kkt_tol must be nonnegative");
        }
        if self.method.restart().is_some() && self.mu != 0.0 {
            return bad("restart variants require mu = 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RestartCriterion {
    /// Restart when the iterate gap shrinks.
    Speed,
    /// Restart when the KKT residual grows.
    Residual,
}

/// Per-iteration state shared by the discrete methods.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub k: usize,
    pub x: Array1<f64>,
    pub z: Array1<f64>,
    pub gamma: f64,
    pub m: f64,
    pub tau: f64,
    /// `x_{k−1}`, absent at `k = 0`.
    pub prev_x: Option<Array1<f64>>,
    /// KKT residual at `x_k`, absent at `k = 0`.
    pub prev_kkt: Option<f64>,
}

impl SolverState {
    /// Momentum-free start `z_0 = x_0`.
    pub fn initial(x0: Array1<f64>, gamma0: f64, m0: f64) -> Self {
        Self {
            k: 0,
            z: x0.clone(),
            x: x0,
            gamma: gamma0,
            m: m0,
            tau: 0.0,
            prev_x: None,
            prev_kkt: None,
        }
    }
}

/// `θ_{k+1}` from `θ_{k+1}^{-1} = √(θ_k^{-2} + 1/4) + 1/2`.
pub fn apg_theta_next(theta: f64) -> f64 {
    let inv = 1.0 / theta;
    1.0 / ((inv * inv + 0.25).sqrt() + 0.5)
}

/// Positive root of `Mτ² = γ(1 + τ)`.
pub fn amg_step_size(gamma: f64, m: f64) -> f64 {
    (gamma + (gamma * gamma + 4.0 * m * gamma).sqrt()) / (2.0 * m)
}

/// Implicit Euler step of `γ' = μ − γ`.
pub fn amg_gamma_next(gamma: f64, mu: f64, tau: f64) -> f64 {
    (gamma + mu * tau) / (1.0 + tau)
}

/// One AMG-QP iteration with everything needed for checks and backtracking.
#[derive(Debug, Clone)]
pub struct AmgStep {
    pub tau: f64,
    pub gamma_next: f64,
    pub x_next: Array1<f64>,
    pub y: Array1<f64>,
    pub z_next: Array1<f64>,
    /// The hull projection at `y_k` that drives the `z` update.
    pub z_qp: Array1<f64>,
    pub jac_y: Array2<f64>,
    pub values_y: Array1<f64>,
}

/// One iteration of the IMEX scheme at curvature estimate `m`.
pub fn amg_qp_step<O: MultiObjective + ?Sized>(
    bundle: &O,
    mu: f64,
    m: f64,
    state: &SolverState,
) -> Result<AmgStep> {
    if !(m > 0.0) || !(state.gamma > 0.0) {
        return Err(Error::InvalidInput(format!("need M > 0 and gamma > 0, got {m}, {}", state.gamma)));
    }
    let gamma = state.gamma;
    let (x, z) = (&state.x, &state.z);
    let tau = amg_step_size(gamma, m);
    let gamma_next = amg_gamma_next(gamma, mu, tau);
    let y = (x + &(tau * z)) / (1.0 + tau);
    let values_y = eval_objectives(bundle, y.view())?;
    let jac_y = eval_jacobian(bundle, y.view())?;
    let target = mu * (&y - x) + (gamma / tau) * (z - x);
    let z_qp = hull_project(jac_y.view(), target.view(), QP_TOL)?.point;
    let z_next = (gamma * z + &(mu * tau * &y) - &(tau * &z_qp)) / (gamma + mu * tau);
    let x_next = (x + &(tau * &z_next)) / (1.0 + tau);
    Ok(AmgStep {
        tau,
        gamma_next,
        x_next,
        y,
        z_next,
        z_qp,
        jac_y,
        values_y,
    })
}

/// The backtracking acceptance test at `(x⁺, y⁺)`.
pub fn descent_condition_holds(
    values_x: ArrayView1<f64>,
    values_y: ArrayView1<f64>,
    jac_y: ArrayView2<f64>,
    x: ArrayView1<f64>,
    y: ArrayView1<f64>,
    m: f64,
) -> bool {
    let diff = &x - &y;
    let quad = 0.5 * m * diff.dot(&diff);
    let lin = jac_y.t().dot(&diff);
    (0..values_x.len()).all(|j| {
        let delta = values_x[j] - values_y[j] - lin[j];
        let slack = 8.0 * f64::EPSILON * (values_x[j].abs() + values_y[j].abs() + lin[j].abs());
        delta <= quad + slack
    })
}

#[derive(Debug, Clone)]
pub struct Backtracked<S> {
    pub step: S,
    /// `M_{k+1} = 2^{i_k} M_k`.
    pub m_next: f64,
    /// `i_k`, number of doublings.
    pub count: usize,
}

/// AMG-QP with doubling backtracking on `M`.
pub fn backtrack<O: MultiObjective + ?Sized>(
    bundle: &O,
    mu: f64,
    m_k: f64,
    state: &SolverState,
) -> Result<Backtracked<AmgStep>> {
    let mut m = m_k;
    for count in 0..=MAX_BACKTRACKS {
        let step = amg_qp_step(bundle, mu, m, state)?;
        let values_x = eval_objectives(bundle, step.x_next.view())?;
        if descent_condition_holds(
            values_x.view(),
            step.values_y.view(),
            step.jac_y.view(),
            step.x_next.view(),
            step.y.view(),
            m,
        ) {
            return Ok(Backtracked { step, m_next: m, count });
        }
        m *= 2.0;
    }
    Err(Error::RunawayBacktracking(MAX_BACKTRACKS))
}

/// Whether the step `x_k → new_x` (with residual `new_kkt` at `new_x`)
/// triggers a restart. Never fires before the first accepted step.
pub fn restart_check(criterion: RestartCriterion, state: &SolverState, new_x: ArrayView1<f64>, new_kkt: f64) -> bool {
    match criterion {
        RestartCriterion::Speed => match &state.prev_x {
            Some(prev) => {
                let new_gap = (&new_x - &state.x).mapv(|v| v * v).sum().sqrt();
                let old_gap = (&state.x - prev).mapv(|v| v * v).sum().sqrt();
                new_gap < old_gap
            }
            None => false,
        },
        RestartCriterion::Residual => match state.prev_kkt {
            Some(prev) => new_kkt > prev,
            None => false,
        },
    }
}

/// State after a restart of the step taken from `state`: `x` stays put,
/// momentum is cleared and `γ` returns to `γ_0`. `M` and `τ` carry over.
pub fn apply_restart(state: &SolverState, gamma0: f64) -> SolverState {
    SolverState {
        k: state.k + 1,
        x: state.x.clone(),
        z: state.x.clone(),
        gamma: gamma0,
        m: state.m,
        tau: state.tau,
        prev_x: Some(state.x.clone()),
        prev_kkt: state.prev_kkt,
    }
}

#[derive(Debug, Clone)]
pub struct SdStep {
    pub x_next: Array1<f64>,
    pub direction: Array1<f64>,
}

/// Steepest descent `x⁺ = x + d(x)/M`, with `M` doubled until the descent
/// test holds at `y⁺ = x`.
pub fn sd_step<O: MultiObjective + ?Sized>(bundle: &O, x: ArrayView1<f64>, m_k: f64) -> Result<Backtracked<SdStep>> {
    let values = eval_objectives(bundle, x)?;
    let jac = eval_jacobian(bundle, x)?;
    let direction = -crate::hullproj::min_norm_element(jac.view())?.point;
    let mut m = m_k;
    for count in 0..=MAX_BACKTRACKS {
        let x_next = &x + &(&direction / m);
        let values_next = eval_objectives(bundle, x_next.view())?;
        if descent_condition_holds(values_next.view(), values.view(), jac.view(), x_next.view(), x, m) {
            return Ok(Backtracked {
                step: SdStep { x_next, direction },
                m_next: m,
                count,
            });
        }
        m *= 2.0;
    }
    Err(Error::RunawayBacktracking(MAX_BACKTRACKS))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApgState {
    pub x: Array1<f64>,
    pub y: Array1<f64>,
    pub theta: f64,
}

#[derive(Debug, Clone)]
pub struct ApgStep {
    pub next: ApgState,
    pub lambda: Array1<f64>,
    pub values_y: Array1<f64>,
    pub jac_y: Array2<f64>,
}

/// One APG iteration at step `tau`, solving the dual simplex QP
/// `min ⟨λ, F(x) − F(y)⟩ + (τ/2)‖DF(y)λ‖²`.
pub fn apg_step<O: MultiObjective + ?Sized>(bundle: &O, state: &ApgState, tau: f64) -> Result<ApgStep> {
    let values_x = eval_objectives(bundle, state.x.view())?;
    let values_y = eval_objectives(bundle, state.y.view())?;
    let jac_y = eval_jacobian(bundle, state.y.view())?;
    apg_step_from(state, tau, &values_x, values_y, jac_y)
}

fn apg_step_from(
    state: &ApgState,
    tau: f64,
    values_x: &Array1<f64>,
    values_y: Array1<f64>,
    jac_y: Array2<f64>,
) -> Result<ApgStep> {
    if !(tau > 0.0) {
        return Err(Error::InvalidInput(format!("step size {tau} must be positive")));
    }
    let m = jac_y.ncols();
    let mut q = Array2::zeros((m, m));
    for i in 0..m {
        for j in i..m {
            let v = tau * jac_y.column(i).dot(&jac_y.column(j));
            q[[i, j]] = v;
            q[[j, i]] = v;
        }
    }
    let c = values_x - &values_y;
    let lambda = simplex_qp(q.view(), c.view(), QP_TOL)?.into_inner();
    let x_next = &state.y - &(tau * jac_y.dot(&lambda));
    let theta_next = apg_theta_next(state.theta);
    let y_next = &x_next + &(theta_next * (1.0 / state.theta - 1.0) * (&x_next - &state.x));
    Ok(ApgStep {
        next: ApgState {
            x: x_next,
            y: y_next,
            theta: theta_next,
        },
        lambda,
        values_y,
        jac_y,
    })
}

/// APG with `τ = 1/M` and the backtracking test at `(x_{k+1}, y_k)`.
pub fn apg_backtrack<O: MultiObjective + ?Sized>(bundle: &O, state: &ApgState, m_k: f64) -> Result<Backtracked<ApgStep>> {
    let values_x = eval_objectives(bundle, state.x.view())?;
    let values_y = eval_objectives(bundle, state.y.view())?;
    let jac_y = eval_jacobian(bundle, state.y.view())?;
    let mut m = m_k;
    for count in 0..=MAX_BACKTRACKS {
        let step = apg_step_from(state, 1.0 / m, &values_x, values_y.clone(), jac_y.clone())?;
        let values_next = eval_objectives(bundle, step.next.x.view())?;
        if descent_condition_holds(
            values_next.view(),
            values_y.view(),
            jac_y.view(),
            step.next.x.view(),
            state.y.view(),
            m,
        ) {
            return Ok(Backtracked { step, m_next: m, count });
        }
        m *= 2.0;
    }
    Err(Error::RunawayBacktracking(MAX_BACKTRACKS))
}

/// One trace row: the iterate `x_k` and the step taken from it.
///
/// The final row of a run describes the terminal iterate; its step fields
/// (`iterate_gap`, `tau_k`, `backtrack_count`) are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub k: usize,
    pub wall_seconds: f64,
    pub kkt_residual: f64,
    /// `‖x_{k+1} − x_k‖`.
    pub iterate_gap: f64,
    /// Curvature estimate used by step `k` (after backtracking).
    #[serde(rename = "M_k")]
    pub m_k: f64,
    /// `γ_k` for AMG methods, `θ_k` for APG, 0 for SD.
    pub gamma_k: f64,
    pub tau_k: f64,
    pub restart_flag: bool,
    pub backtrack_count: usize,
}

/// Iterate snapshot kept when a run records states.
#[derive(Debug, Clone, PartialEq)]
pub struct IterState {
    pub x: Array1<f64>,
    pub z: Array1<f64>,
    pub gamma: f64,
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub method: Method,
    pub records: Vec<TraceRecord>,
    /// One entry per record when requested.
    pub states: Option<Vec<IterState>>,
    pub final_x: Array1<f64>,
}

impl RunTrace {
    /// First iteration whose residual is at or below `threshold`.
    pub fn iterations_to(&self, threshold: f64) -> Option<usize> {
        self.records.iter().find(|r| r.kkt_residual <= threshold).map(|r| r.k)
    }

    pub fn seconds_to(&self, threshold: f64) -> Option<f64> {
        self.records
            .iter()
            .find(|r| r.kkt_residual <= threshold)
            .map(|r| r.wall_seconds)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub record_states: bool,
}

/// Runs `config.method` from `x0` for at most `config.max_iters` steps.
pub fn run<O: MultiObjective + ?Sized>(bundle: &O, config: &MethodConfig, x0: ArrayView1<f64>) -> Result<RunTrace> {
    run_with(bundle, config, x0, RunOptions::default())
}

struct Recorder {
    start: Instant,
    records: Vec<TraceRecord>,
    states: Option<Vec<IterState>>,
}

impl Recorder {
    #[allow(clippy::too_many_arguments)]
    fn push(&mut self, k: usize, kkt: f64, gap: f64, m: f64, gamma: f64, tau: f64, restart: bool, count: usize) {
        self.records.push(TraceRecord {
            k,
            wall_seconds: self.start.elapsed().as_secs_f64(),
            kkt_residual: kkt,
            iterate_gap: gap,
            m_k: m,
            gamma_k: gamma,
            tau_k: tau,
            restart_flag: restart,
            backtrack_count: count,
        });
    }

    fn state(&mut self, x: &Array1<f64>, z: &Array1<f64>, gamma: f64) {
        if let Some(states) = self.states.as_mut() {
            states.push(IterState {
                x: x.clone(),
                z: z.clone(),
                gamma,
            });
        }
    }
}

fn norm(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

pub fn run_with<O: MultiObjective + ?Sized>(
    bundle: &O,
    config: &MethodConfig,
    x0: ArrayView1<f64>,
    options: RunOptions,
) -> Result<RunTrace> {
    config.validate()?;
    if x0.len() != bundle.n() || x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("x0 must be finite with length n".into()));
    }
    let mut rec = Recorder {
        start: Instant::now(),
        records: Vec::new(),
        states: options.record_states.then(Vec::new),
    };
    let stop = |k: usize, kkt: f64| k >= config.max_iters || (config.kkt_tol > 0.0 && kkt <= config.kkt_tol);
    let mut kkt = kkt_residual(bundle, x0).map_err(|e| e.at_iteration(0))?;

    let final_x = match config.method {
        Method::Sd => {
            let mut x = x0.to_owned();
            let mut m = config.l_or_m0;
            let mut k = 0;
            loop {
                rec.state(&x, &x, 0.0);
                if stop(k, kkt) {
                    rec.push(k, kkt, 0.0, m, 0.0, 0.0, false, 0);
                    break x;
                }
                let bt = sd_step(bundle, x.view(), m).map_err(|e| e.at_iteration(k))?;
                m = bt.m_next;
                let gap = norm(&(&bt.step.x_next - &x));
                rec.push(k, kkt, gap, m, 0.0, 1.0 / m, false, bt.count);
                x = bt.step.x_next;
                kkt = kkt_residual(bundle, x.view()).map_err(|e| e.at_iteration(k + 1))?;
                k += 1;
            }
        }
        Method::Apg => {
            let mut state = ApgState {
                x: x0.to_owned(),
                y: x0.to_owned(),
                theta: config.theta0,
            };
            let mut m = config.l_or_m0;
            let mut k = 0;
            loop {
                rec.state(&state.x, &state.y, state.theta);
                if stop(k, kkt) {
                    rec.push(k, kkt, 0.0, m, state.theta, 0.0, false, 0);
                    break state.x;
                }
                let bt = apg_backtrack(bundle, &state, m).map_err(|e| e.at_iteration(k))?;
                m = bt.m_next;
                let gap = norm(&(&bt.step.next.x - &state.x));
                rec.push(k, kkt, gap, m, state.theta, 1.0 / m, false, bt.count);
                state = bt.step.next;
                kkt = kkt_residual(bundle, state.x.view()).map_err(|e| e.at_iteration(k + 1))?;
                k += 1;
            }
        }
        method => {
            let mut state = SolverState::initial(x0.to_owned(), config.gamma0, config.l_or_m0);
            // The residual test only needs kkt(x_0), so it is live from the
            // first step; the speed test waits for x_{-1}, which never exists.
            state.prev_kkt = Some(kkt);
            loop {
                let k = state.k;
                rec.state(&state.x, &state.z, state.gamma);
                if stop(k, kkt) {
                    rec.push(k, kkt, 0.0, state.m, state.gamma, 0.0, false, 0);
                    break state.x;
                }
                let (step, m_next, count) = if method.backtracks() {
                    let bt = backtrack(bundle, config.mu, state.m, &state).map_err(|e| e.at_iteration(k))?;
                    (bt.step, bt.m_next, bt.count)
                } else {
                    let step = amg_qp_step(bundle, config.mu, state.m, &state).map_err(|e| e.at_iteration(k))?;
                    (step, state.m, 0)
                };
                let new_kkt = kkt_residual(bundle, step.x_next.view()).map_err(|e| e.at_iteration(k + 1))?;
                let restart = match method.restart() {
                    Some(criterion) => restart_check(criterion, &state, step.x_next.view(), new_kkt),
                    None => false,
                };
                let gamma_k = state.gamma;
                state.m = m_next;
                state.tau = step.tau;
                if restart {
                    rec.push(k, kkt, 0.0, m_next, gamma_k, step.tau, true, count);
                    state = apply_restart(&state, config.gamma0);
                    state.prev_kkt = Some(kkt);
                } else {
                    let gap = norm(&(&step.x_next - &state.x));
                    rec.push(k, kkt, gap, m_next, gamma_k, step.tau, false, count);
                    let prev = std::mem::replace(&mut state.x, step.x_next);
                    state.prev_x = Some(prev);
                    state.z = step.z_next;
                    state.gamma = step.gamma_next;
                    state.prev_kkt = Some(new_kkt);
                    state.k = k + 1;
                    kkt = new_kkt;
                }
            }
        }
    };

    Ok(RunTrace {
        method: config.method,
        records: rec.records,
        states: rec.states,
        final_x,
    })
}
