//! Fixed-step integration of the continuous AMG flow
//!
//! ```text
//! γ' = μ − γ,   X' = Z − X,   γZ' ∈ μ(X − Z) − argmin_{v ∈ C(X)} ⟨X − Z, v⟩
//! ```
//!
//! with `Z(0) = x₀ + x₁`. The argmin is resolved to the lowest-index vertex.

use std::io::Write;

use ndarray::{Array1, ArrayView1};

use crate::diagnostics::gap;
use crate::format::sci12;
use crate::hullproj::{hull_linear_min, resolve_implicit_projection};
use crate::problems::{eval_jacobian, MultiObjective};
use crate::{Error, Result};

/// Below this, `‖X − Z‖` and the hull minimum count as zero and the previous
/// vertex selection is kept.
const FREEZE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub t: f64,
    pub gamma: f64,
    pub x: Array1<f64>,
    pub z: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowDerivative {
    pub dgamma: f64,
    pub dx: Array1<f64>,
    pub dz: Array1<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Euler,
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RhsMode {
    /// `v` is the lowest-index vertex minimizing `⟨X − Z, v⟩`.
    #[default]
    VertexRule,
    /// Solve the implicit `Z'` equation with the `a = b` resolver.
    ImplicitResolver,
}

fn rhs_inner<O: MultiObjective + ?Sized>(
    bundle: &O,
    mu: f64,
    state: &FlowState,
    mode: RhsMode,
    frozen: Option<usize>,
) -> Result<(FlowDerivative, usize)> {
    if !(state.gamma > 0.0) {
        return Err(Error::InvalidState(format!("gamma = {} at t = {}", state.gamma, state.t)));
    }
    let jac = eval_jacobian(bundle, state.x.view())?;
    let diff = &state.x - &state.z;
    let dx = &state.z - &state.x;
    let (dz, vertex) = match mode {
        RhsMode::VertexRule => {
            let (mut index, _) = hull_linear_min(jac.view(), diff.view());
            let hull_min = jac.column(index).dot(&diff);
            if let Some(prev) = frozen {
                if diff.dot(&diff).sqrt() < FREEZE_EPS && hull_min.abs() < FREEZE_EPS {
                    index = prev;
                }
            }
            let v = jac.column(index);
            ((mu * &diff - v) / state.gamma, index)
        }
        RhsMode::ImplicitResolver => {
            let u = mu * &diff;
            let w = state.gamma * &dx;
            let dz = resolve_implicit_projection(jac.view(), state.gamma, state.gamma, u.view(), w.view())?;
            let (index, _) = hull_linear_min(jac.view(), (&u - &w).view());
            (dz, index)
        }
    };
    Ok((
        FlowDerivative {
            dgamma: mu - state.gamma,
            dx,
            dz,
        },
        vertex,
    ))
}

/// Right-hand side of the first-order AMG system.
pub fn flow_rhs<O: MultiObjective + ?Sized>(bundle: &O, mu: f64, state: &FlowState) -> Result<FlowDerivative> {
    rhs_inner(bundle, mu, state, RhsMode::VertexRule, None).map(|(d, _)| d)
}

pub fn flow_rhs_with<O: MultiObjective + ?Sized>(
    bundle: &O,
    mu: f64,
    state: &FlowState,
    mode: RhsMode,
) -> Result<FlowDerivative> {
    rhs_inner(bundle, mu, state, mode, None).map(|(d, _)| d)
}

fn advance(state: &FlowState, d: &FlowDerivative, h: f64) -> FlowState {
    FlowState {
        t: state.t + h,
        gamma: state.gamma + h * d.dgamma,
        x: &state.x + &(h * &d.dx),
        z: &state.z + &(h * &d.dz),
    }
}

/// Integrates from `(0, γ₀, x₀, x₀ + x₁)` to `T` with fixed step `h`,
/// returning every state.
#[allow(clippy::too_many_arguments)]
pub fn integrate<O: MultiObjective + ?Sized>(
    bundle: &O,
    mu: f64,
    gamma0: f64,
    x0: ArrayView1<f64>,
    x1: ArrayView1<f64>,
    t_end: f64,
    h: f64,
    scheme: Scheme,
) -> Result<Vec<FlowState>> {
    integrate_with(bundle, mu, gamma0, x0, x1, t_end, h, scheme, RhsMode::VertexRule)
}

fn is_finite(s: &FlowState) -> bool {
    s.gamma.is_finite() && s.x.iter().chain(s.z.iter()).all(|v| v.is_finite())
}

#[allow(clippy::too_many_arguments)]
pub fn integrate_with<O: MultiObjective + ?Sized>(
    bundle: &O,
    mu: f64,
    gamma0: f64,
    x0: ArrayView1<f64>,
    x1: ArrayView1<f64>,
    t_end: f64,
    h: f64,
    scheme: Scheme,
    mode: RhsMode,
) -> Result<Vec<FlowState>> {
    if !(h > 0.0 && h <= 1e-2) {
        return Err(Error::InvalidInput(format!("step {h} outside (0, 1e-2]")));
    }
    if !(0.0..=50.0).contains(&t_end) {
        return Err(Error::InvalidInput(format!("horizon {t_end} outside [0, 50]")));
    }
    if !(gamma0 > 0.0) || !(mu >= 0.0) {
        return Err(Error::InvalidInput("need gamma0 > 0 and mu >= 0".into()));
    }
    if x0.len() != bundle.n() || x1.len() != bundle.n() {
        return Err(Error::InvalidInput("x0 and x1 must have length n".into()));
    }
    let steps = (t_end / h).round() as usize;
    let mut state = FlowState {
        t: 0.0,
        gamma: gamma0,
        x: x0.to_owned(),
        z: &x0 + &x1,
    };
    let mut trajectory = Vec::with_capacity(steps + 1);
    trajectory.push(state.clone());
    let mut frozen = None;
    for step in 1..=steps {
        let mut eval = |s: &FlowState| -> Result<FlowDerivative> {
            if !is_finite(s) {
                return Err(Error::BlowUp { t: s.t });
            }
            let (d, v) = rhs_inner(bundle, mu, s, mode, frozen)?;
            frozen = Some(v);
            Ok(d)
        };
        let mut next = match scheme {
            Scheme::Euler => advance(&state, &eval(&state)?, h),
            Scheme::Rk4 => {
                let k1 = eval(&state)?;
                let k2 = eval(&advance(&state, &k1, 0.5 * h))?;
                let k3 = eval(&advance(&state, &k2, 0.5 * h))?;
                let k4 = eval(&advance(&state, &k3, h))?;
                let d = FlowDerivative {
                    dgamma: (k1.dgamma + 2.0 * k2.dgamma + 2.0 * k3.dgamma + k4.dgamma) / 6.0,
                    dx: (&k1.dx + &(2.0 * &k2.dx) + &(2.0 * &k3.dx) + &k4.dx) / 6.0,
                    dz: (&k1.dz + &(2.0 * &k2.dz) + &(2.0 * &k3.dz) + &k4.dz) / 6.0,
                };
                advance(&state, &d, h)
            }
        };
        // Pin t to the grid to avoid drift from repeated addition.
        next.t = step as f64 * h;
        if !is_finite(&next) {
            return Err(Error::BlowUp { t: next.t });
        }
        trajectory.push(next.clone());
        state = next;
    }
    Ok(trajectory)
}

/// `E(t; z) = f(X(t); z) + (γ(t)/2)‖Z(t) − z‖²`.
pub fn lyapunov_continuous<O: MultiObjective + ?Sized>(bundle: &O, state: &FlowState, z: ArrayView1<f64>) -> Result<f64> {
    let d = &state.z - &z;
    Ok(gap(bundle, state.x.view(), z)? + 0.5 * state.gamma * d.dot(&d))
}

/// Closed form `γ(t) = μ + (γ₀ − μ)e^{−t}`.
pub fn gamma_closed_form(mu: f64, gamma0: f64, t: f64) -> f64 {
    mu + (gamma0 - mu) * (-t).exp()
}

/// CSV with columns `t, gamma, E_z0, ..., norm_X_minus_Z`.
pub fn write_trajectory_csv<O: MultiObjective + ?Sized, W: Write>(
    out: &mut W,
    bundle: &O,
    trajectory: &[FlowState],
    refs: &[Array1<f64>],
) -> Result<()> {
    let mut header = vec!["t".to_string(), "gamma".to_string()];
    header.extend((0..refs.len()).map(|i| format!("E_z{i}")));
    header.push("norm_X_minus_Z".into());
    writeln!(out, "{}", header.join(","))?;
    for s in trajectory {
        let mut row = vec![sci12(s.t), sci12(s.gamma)];
        for z in refs {
            row.push(sci12(lyapunov_continuous(bundle, s, z.view())?));
        }
        let d = &s.x - &s.z;
        row.push(sci12(d.dot(&d).sqrt()));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
