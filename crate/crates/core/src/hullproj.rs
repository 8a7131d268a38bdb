//! Projection onto the convex hull of a few points and the simplex QP behind it.
//!
//! Every method in this crate reduces its subproblem to
//!
//! ```text
//! minimize ½ λᵀQλ + cᵀλ   over the unit simplex Δ_m
//! ```
//!
//! with `m` the number of objectives (2 or 3 in practice). For small `m` the
//! solver enumerates the faces of the simplex and solves each face's KKT
//! system directly; projected gradient with an exact sort-based simplex
//! projection handles larger `m` and polishes any face solution that misses
//! the tolerance.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::problems::{eval_jacobian, MultiObjective};
use crate::{Error, Result};

/// Default stationarity tolerance for every QP subproblem.
pub const QP_TOL: f64 = 1e-12;

/// Largest `m` solved by face enumeration (2^m − 1 faces).
const FACE_ENUM_MAX: usize = 8;
const PG_MAX_ITERS: usize = 100_000;
const CLAMP: f64 = 1e-14;

/// A point of the unit simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexWeights(Array1<f64>);

impl SimplexWeights {
    /// Clamps entries below `1e-14` to zero and renormalizes.
    pub fn from_raw(mut lambda: Array1<f64>) -> Self {
        lambda.mapv_inplace(|v| if v < CLAMP { 0.0 } else { v });
        let total = lambda.sum();
        if total > 0.0 {
            lambda /= total;
        } else {
            let uniform = 1.0 / lambda.len() as f64;
            lambda.fill(uniform);
        }
        Self(lambda)
    }

    pub fn lambda(&self) -> ArrayView1<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array1<f64> {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct HullProjection {
    pub point: Array1<f64>,
    pub weights: SimplexWeights,
    pub qp_kkt: f64,
}

/// Euclidean projection onto the unit simplex (sort-based, exact).
pub fn project_simplex(v: ArrayView1<f64>) -> Array1<f64> {
    let mut sorted: Vec<f64> = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    v.mapv(|x| (x - theta).max(0.0))
}

fn qp_scale(q: ArrayView2<f64>, c: ArrayView1<f64>) -> f64 {
    let q_one = q
        .axis_iter(Axis(1))
        .map(|col| col.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let c_inf = c.iter().map(|v| v.abs()).fold(0.0, f64::max);
    q_one.max(c_inf).max(1.0)
}

/// Fixed-point residual `‖λ − Π(λ − (Qλ + c)/s)‖` with `s = max(1, ‖Q‖₁, ‖c‖∞)`.
///
/// For problems already scaled to `s = 1` this is the unit-step projected
/// gradient residual.
pub fn stationarity_residual(q: ArrayView2<f64>, c: ArrayView1<f64>, lambda: ArrayView1<f64>) -> f64 {
    let s = qp_scale(q, c);
    let grad = q.dot(&lambda) + c;
    let trial = &lambda - &(grad / s);
    let diff = &lambda - &project_simplex(trial.view());
    diff.dot(&diff).sqrt()
}

fn objective(q: ArrayView2<f64>, c: ArrayView1<f64>, lambda: ArrayView1<f64>) -> f64 {
    0.5 * lambda.dot(&q.dot(&lambda)) + c.dot(&lambda)
}

fn validate_qp(q: ArrayView2<f64>, c: ArrayView1<f64>, tol: f64) -> Result<()> {
    let m = c.len();
    if m == 0 || q.dim() != (m, m) {
        return Err(Error::InvalidInput(format!("Q is {:?}, c has length {m}", q.dim())));
    }
    if !(1e-14..=1e-6).contains(&tol) {
        return Err(Error::InvalidInput(format!("tolerance {tol} outside [1e-14, 1e-6]")));
    }
    if q.iter().chain(c.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite QP data".into()));
    }
    let big = q.iter().map(|v| v.abs()).fold(0.0, f64::max);
    for i in 0..m {
        for j in (i + 1)..m {
            if (q[[i, j]] - q[[j, i]]).abs() > 1e-12 * (1.0 + big) {
                return Err(Error::InvalidInput("Q is not symmetric".into()));
            }
        }
    }
    Ok(())
}

/// Solves the KKT system of the QP restricted to the face spanned by `support`.
fn solve_face(q: ArrayView2<f64>, c: ArrayView1<f64>, support: &[usize]) -> Option<Array1<f64>> {
    let k = support.len();
    let mut kkt = DMatrix::<f64>::zeros(k + 1, k + 1);
    let mut rhs = DVector::<f64>::zeros(k + 1);
    for (a, &i) in support.iter().enumerate() {
        for (b, &j) in support.iter().enumerate() {
            kkt[(a, b)] = q[[i, j]];
        }
        kkt[(a, k)] = 1.0;
        kkt[(k, a)] = 1.0;
        rhs[a] = -c[i];
    }
    rhs[k] = 1.0;
    let sol = kkt.lu().solve(&rhs)?;
    let mut lambda = Array1::zeros(c.len());
    for (a, &i) in support.iter().enumerate() {
        let v = sol[a];
        if !v.is_finite() || v < -1e-12 {
            return None;
        }
        lambda[i] = v.max(0.0);
    }
    let total = lambda.sum();
    if !(total > 0.0) {
        return None;
    }
    Some(lambda / total)
}

fn enumerate_faces(q: ArrayView2<f64>, c: ArrayView1<f64>) -> Array1<f64> {
    let m = c.len();
    let mut masks: Vec<u32> = (1..(1u32 << m)).collect();
    masks.sort_by_key(|mask| (mask.count_ones(), *mask));
    let s = qp_scale(q, c);
    let mut best: Option<(f64, Array1<f64>)> = None;
    for mask in masks {
        let support: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let Some(lambda) = solve_face(q, c, &support) else {
            continue;
        };
        let value = objective(q, c, lambda.view());
        let improves = match &best {
            None => true,
            Some((b, _)) => value < *b - 1e-15 * s,
        };
        if improves {
            best = Some((value, lambda));
        }
    }
    // Every vertex is a feasible one-element face, so `best` is always set.
    best.map(|(_, l)| l).unwrap_or_else(|| Array1::from_elem(m, 1.0 / m as f64))
}

/// Projected gradient on `λ` with step `1/(‖Q‖₁ + ε)`.
pub fn simplex_qp_projected_gradient(
    q: ArrayView2<f64>,
    c: ArrayView1<f64>,
    tol: f64,
    start: Option<ArrayView1<f64>>,
) -> Result<SimplexWeights> {
    validate_qp(q, c, tol)?;
    let m = c.len();
    let q_one = q
        .axis_iter(Axis(1))
        .map(|col| col.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let step = 1.0 / (q_one + f64::EPSILON * qp_scale(q, c));
    let mut lambda = match start {
        Some(s) => project_simplex(s),
        None => Array1::from_elem(m, 1.0 / m as f64),
    };
    let mut best = (f64::INFINITY, lambda.clone());
    for _ in 0..PG_MAX_ITERS {
        let residual = stationarity_residual(q, c, lambda.view());
        if residual < best.0 {
            best = (residual, lambda.clone());
        }
        if residual <= tol {
            return Ok(SimplexWeights::from_raw(lambda));
        }
        let grad = q.dot(&lambda) + c;
        lambda = project_simplex((&lambda - &(step * grad)).view());
    }
    Err(Error::Convergence {
        best: best.1,
        residual: best.0,
        iterations: PG_MAX_ITERS,
    })
}

/// Minimizes `½λᵀQλ + cᵀλ` over the unit simplex.
pub fn simplex_qp(q: ArrayView2<f64>, c: ArrayView1<f64>, tol: f64) -> Result<SimplexWeights> {
    validate_qp(q, c, tol)?;
    let m = c.len();
    if m == 1 {
        return Ok(SimplexWeights(Array1::ones(1)));
    }
    if m > FACE_ENUM_MAX {
        return simplex_qp_projected_gradient(q, c, tol, None);
    }
    let lambda = enumerate_faces(q, c);
    let weights = SimplexWeights::from_raw(lambda);
    if stationarity_residual(q, c, weights.lambda()) <= tol {
        return Ok(weights);
    }
    simplex_qp_projected_gradient(q, c, tol, Some(weights.lambda()))
}

/// Gram matrix `DᵀD`, exactly symmetric.
fn gram(d: ArrayView2<f64>) -> Array2<f64> {
    let m = d.ncols();
    let mut g = Array2::zeros((m, m));
    for i in 0..m {
        for j in i..m {
            let v = d.column(i).dot(&d.column(j));
            g[[i, j]] = v;
            g[[j, i]] = v;
        }
    }
    g
}

/// Euclidean projection of `w` onto `conv{p_1, ..., p_m}` (columns of `p`).
pub fn hull_project(p: ArrayView2<f64>, w: ArrayView1<f64>, tol: f64) -> Result<HullProjection> {
    if p.nrows() != w.len() || p.ncols() == 0 {
        return Err(Error::InvalidInput(format!(
            "hull of {:?} columns vs point of length {}",
            p.dim(),
            w.len()
        )));
    }
    // Work in coordinates centred at w: ‖Pλ − w‖² = ‖(P − w1ᵀ)λ‖² on the simplex.
    let shifted = &p - &w.insert_axis(Axis(1));
    let q = gram(shifted.view());
    let c = Array1::zeros(p.ncols());
    let weights = simplex_qp(q.view(), c.view(), tol)?;
    let qp_kkt = stationarity_residual(q.view(), c.view(), weights.lambda());
    let point = p.dot(&weights.lambda());
    Ok(HullProjection { point, weights, qp_kkt })
}

/// Minimum-norm element of the hull of the gradient columns of `jac`.
pub fn min_norm_element(jac: ArrayView2<f64>) -> Result<HullProjection> {
    let origin = Array1::zeros(jac.nrows());
    hull_project(jac, origin.view(), QP_TOL)
}

/// `‖proj_{C(x)}(0)‖`, zero exactly at Pareto critical points.
pub fn kkt_residual<O: MultiObjective + ?Sized>(bundle: &O, x: ArrayView1<f64>) -> Result<f64> {
    let jac = eval_jacobian(bundle, x)?;
    let proj = min_norm_element(jac.view())?;
    Ok(proj.point.dot(&proj.point).sqrt())
}

/// Multiobjective steepest descent direction `d(x) = −proj_{C(x)}(0)`.
pub fn steepest_direction<O: MultiObjective + ?Sized>(bundle: &O, x: ArrayView1<f64>) -> Result<Array1<f64>> {
    let jac = eval_jacobian(bundle, x)?;
    Ok(-min_norm_element(jac.view())?.point)
}

/// Vertex of the hull minimizing `⟨g, p_j⟩`; lowest index on ties.
pub fn hull_linear_min(p: ArrayView2<f64>, g: ArrayView1<f64>) -> (usize, Array1<f64>) {
    let mut best = (0usize, f64::INFINITY);
    for (j, col) in p.axis_iter(Axis(1)).enumerate() {
        let v = col.dot(&g);
        if v < best.1 {
            best = (j, v);
        }
    }
    (best.0, p.column(best.0).to_owned())
}

/// Solves `a·x = u − proj_C(w − b·x)` for `x`, with `C` the hull of the
/// columns of `p`, `a > 0` and `0 ≤ b ≤ a`.
pub fn resolve_implicit_projection(
    p: ArrayView2<f64>,
    a: f64,
    b: f64,
    u: ArrayView1<f64>,
    w: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    if !(a > 0.0) || !(b >= 0.0) || b > a {
        return Err(Error::InvalidInput(format!("need a > 0 and 0 <= b <= a, got a={a}, b={b}")));
    }
    if u.len() != p.nrows() || w.len() != p.nrows() {
        return Err(Error::InvalidInput("u, w must match the hull dimension".into()));
    }
    let v = if a > b {
        let target = (a * &w - b * &u) / (a - b);
        hull_project(p, target.view(), QP_TOL)?.point
    } else {
        hull_linear_min(p, (&u - &w).view()).1
    };
    Ok((&u - &v) / a)
}
