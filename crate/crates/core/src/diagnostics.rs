//! Gap and Lyapunov instrumentation, Pareto filtering and reference sets.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::exec::{map_indexed, Execution};
use crate::hullproj::kkt_residual;
use crate::problems::{eval_objectives, MultiObjective};
use crate::rng::UniformStream;
use crate::solvers::{run, IterState, Method, MethodConfig, RunTrace};
use crate::{Error, Result};

/// Residual bar for reference points.
pub const REFERENCE_RESIDUAL: f64 = 1e-8;

/// `f(x; z) = min_j [f_j(x) − f_j(z)]`.
pub fn gap<O: MultiObjective + ?Sized>(bundle: &O, x: ArrayView1<f64>, z: ArrayView1<f64>) -> Result<f64> {
    let fx = eval_objectives(bundle, x)?;
    let fz = eval_objectives(bundle, z)?;
    Ok(gap_from_values(fx.view(), fz.view()))
}

pub fn gap_from_values(fx: ArrayView1<f64>, fz: ArrayView1<f64>) -> f64 {
    fx.iter().zip(fz).map(|(a, b)| a - b).fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub x: Vec<f64>,
    pub values: Vec<f64>,
    pub residual: f64,
}

/// Approximate weak Pareto points used as `z` in gap-based diagnostics.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReferenceSet {
    pub points: Vec<ReferencePoint>,
}

impl ReferenceSet {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// `max_{z ∈ refs} f(x; z)`, a lower bound on the merit `u₀(x)`.
pub fn merit_lower_bound<O: MultiObjective + ?Sized>(bundle: &O, x: ArrayView1<f64>, refs: &ReferenceSet) -> Result<f64> {
    if refs.points.is_empty() {
        return Err(Error::InvalidInput("empty reference set".into()));
    }
    let fx = eval_objectives(bundle, x)?;
    Ok(refs
        .points
        .iter()
        .map(|p| gap_from_values(fx.view(), ArrayView1::from(&p.values)))
        .fold(f64::NEG_INFINITY, f64::max))
}

/// `E_k(z) = f(x_k; z) + (γ_k/2)‖z_k − z‖²`.
pub fn lyapunov_discrete<O: MultiObjective + ?Sized>(bundle: &O, state: &IterState, z: ArrayView1<f64>) -> Result<f64> {
    let d = &state.z - &z;
    Ok(gap(bundle, state.x.view(), z)? + 0.5 * state.gamma * d.dot(&d))
}

/// Indices `k` where `E_{k+1} − E_k > −τ_k E_{k+1} + 1e-9(1 + |E_k|)`.
pub fn contraction_violations(energies: &[f64], taus: &[f64]) -> Vec<usize> {
    energies
        .windows(2)
        .zip(taus)
        .enumerate()
        .filter(|(_, (e, &tau))| e[1] - e[0] > -tau * e[1] + 1e-9 * (1.0 + e[0].abs()))
        .map(|(k, _)| k)
        .collect()
}

/// Contraction check over a run recorded with states. Restarted steps are
/// skipped since the reset breaks the recursion by design.
pub fn contraction_check<O: MultiObjective + ?Sized>(bundle: &O, trace: &RunTrace, z: ArrayView1<f64>) -> Result<Vec<usize>> {
    let states = trace
        .states
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("trace was recorded without states".into()))?;
    let energies = states
        .iter()
        .map(|s| lyapunov_discrete(bundle, s, z))
        .collect::<Result<Vec<_>>>()?;
    let taus: Vec<f64> = trace.records.iter().map(|r| r.tau_k).collect();
    Ok(contraction_violations(&energies, &taus)
        .into_iter()
        .filter(|&k| !trace.records[k].restart_flag)
        .collect())
}

/// Indices of points not strictly dominated by any other, in input order.
pub fn dominance_filter(values: &[Array1<f64>]) -> Vec<usize> {
    let dominates = |a: &Array1<f64>, b: &Array1<f64>| a.iter().zip(b).all(|(x, y)| x <= y) && a != b;
    (0..values.len())
        .filter(|&i| !values.iter().any(|other| dominates(other, &values[i])))
        .collect()
}

/// Multi-start SD terminal points with residual at most `1e-8`,
/// dominance-filtered. Starts are drawn from `[-2, 2]^n` on stream
/// `(seed, "reference/<i>")`.
pub fn build_reference_set<O: MultiObjective + ?Sized>(
    bundle: &O,
    n_starts: usize,
    budget: usize,
    seed: u64,
) -> Result<ReferenceSet> {
    let m0 = bundle.lipschitz().unwrap_or(10.0);
    let config = MethodConfig::new(Method::Sd, 0.0, m0)
        .with_max_iters(budget)
        .with_kkt_tol(0.1 * REFERENCE_RESIDUAL);
    let results = map_indexed(Execution::Parallel, n_starts, |i| -> Result<Option<ReferencePoint>> {
        let x0 = Array1::from(UniformStream::new(seed, &format!("reference/{i}")).fill(bundle.n(), -2.0, 2.0));
        let trace = run(bundle, &config, x0.view())?;
        let residual = kkt_residual(bundle, trace.final_x.view())?;
        if residual > REFERENCE_RESIDUAL {
            return Ok(None);
        }
        let values = eval_objectives(bundle, trace.final_x.view())?;
        Ok(Some(ReferencePoint {
            x: trace.final_x.to_vec(),
            values: values.to_vec(),
            residual,
        }))
    });
    let mut points = Vec::new();
    for r in results {
        if let Some(p) = r? {
            points.push(p);
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyReference);
    }
    let values: Vec<Array1<f64>> = points.iter().map(|p| Array1::from(p.values.clone())).collect();
    let keep = dominance_filter(&values);
    let points = keep.into_iter().map(|i| points[i].clone()).collect();
    Ok(ReferenceSet { points })
}
