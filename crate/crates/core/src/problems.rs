//! Vector objectives `F = (f_1, ..., f_m)` and the seeded benchmark families.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::rng::UniformStream;
use crate::{Error, Result};

/// A smooth vector objective with value and Jacobian oracles.
///
/// `jacobian` returns an `n x m` matrix whose column `j` is the gradient of
/// `f_j`. Implementations must be pure: the same `x` gives bit-identical
/// output.
pub trait MultiObjective: Send + Sync {
    fn n(&self) -> usize;
    fn m(&self) -> usize;
    fn values(&self, x: ArrayView1<f64>) -> Array1<f64>;
    fn jacobian(&self, x: ArrayView1<f64>) -> Array2<f64>;
    /// Common strong-convexity modulus, 0 when unknown or absent.
    fn mu(&self) -> f64 {
        0.0
    }
    /// Common gradient Lipschitz constant when known.
    fn lipschitz(&self) -> Option<f64> {
        None
    }
}

fn check_point(n: usize, x: ArrayView1<f64>) -> Result<()> {
    if x.len() != n {
        return Err(Error::InvalidInput(format!(
            "point has length {}, expected {n}",
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("point has non-finite entries".into()));
    }
    Ok(())
}

/// `[f_1(x), ..., f_m(x)]`, rejecting non-finite results.
pub fn eval_objectives<O: MultiObjective + ?Sized>(bundle: &O, x: ArrayView1<f64>) -> Result<Array1<f64>> {
    check_point(bundle.n(), x)?;
    let values = bundle.values(x);
    if let Some(objective) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::DomainEvaluation { objective });
    }
    Ok(values)
}

/// The transposed Jacobian `DF(x)`, columns are gradients.
pub fn eval_jacobian<O: MultiObjective + ?Sized>(bundle: &O, x: ArrayView1<f64>) -> Result<Array2<f64>> {
    check_point(bundle.n(), x)?;
    let jac = bundle.jacobian(x);
    for (objective, col) in jac.axis_iter(Axis(1)).enumerate() {
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::DomainEvaluation { objective });
        }
    }
    Ok(jac)
}

/// Largest eigenvalue of `AᵀA` by power iteration from the all-ones vector.
pub fn spectral_norm_sq(a: &Array2<f64>) -> f64 {
    const ITERS: usize = 100;
    const TOL: f64 = 1e-10;
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return 0.0;
    }
    let mut v = Array1::from_elem(n, 1.0 / (n as f64).sqrt());
    let mut estimate = 0.0;
    for _ in 0..ITERS {
        let w = a.t().dot(&a.dot(&v));
        let next = v.dot(&w);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        let done = (next - estimate).abs() <= TOL * next.abs().max(1.0);
        estimate = next;
        if done {
            break;
        }
    }
    // Rayleigh quotient at the final iterate.
    let av = a.dot(&v);
    estimate.max(av.dot(&av))
}

/// `f_j(x) = (δ/2)‖x‖² + ln Σ_i exp(⟨a_i^j, x⟩ − b_i^j)`.
#[derive(Debug, Clone)]
pub struct LogSumExp {
    delta: f64,
    a: Vec<Array2<f64>>,
    b: Vec<Array1<f64>>,
    lipschitz: f64,
}

impl LogSumExp {
    /// `a[j]` is `p x n` with rows `a_i^j`.
    pub fn new(delta: f64, a: Vec<Array2<f64>>, b: Vec<Array1<f64>>) -> Result<Self> {
        validate_blocks(&a, &b)?;
        if !(delta >= 0.0) {
            return Err(Error::InvalidSpec("delta must be nonnegative".into()));
        }
        // The softmax covariance has spectral norm at most 1/2.
        let lipschitz = delta + 0.5 * a.iter().map(spectral_norm_sq).fold(0.0, f64::max);
        Ok(Self { delta, a, b, lipschitz })
    }

    fn shifted_exponents(&self, j: usize, x: ArrayView1<f64>) -> Array1<f64> {
        self.a[j].dot(&x) - &self.b[j]
    }
}

fn log_sum_exp(s: &Array1<f64>) -> (f64, Array1<f64>) {
    let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = s.mapv(|v| (v - max).exp());
    let total = e.sum();
    (max + total.ln(), e / total)
}

impl MultiObjective for LogSumExp {
    fn n(&self) -> usize {
        self.a[0].ncols()
    }
    fn m(&self) -> usize {
        self.a.len()
    }
    fn values(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let q = 0.5 * self.delta * x.dot(&x);
        Array1::from_iter((0..self.m()).map(|j| q + log_sum_exp(&self.shifted_exponents(j, x)).0))
    }
    fn jacobian(&self, x: ArrayView1<f64>) -> Array2<f64> {
        let mut jac = Array2::zeros((self.n(), self.m()));
        for j in 0..self.m() {
            let (_, softmax) = log_sum_exp(&self.shifted_exponents(j, x));
            let g = self.a[j].t().dot(&softmax) + self.delta * &x;
            jac.column_mut(j).assign(&g);
        }
        jac
    }
    fn mu(&self) -> f64 {
        self.delta
    }
    fn lipschitz(&self) -> Option<f64> {
        Some(self.lipschitz)
    }
}

/// `f_j(x) = (δ/2)‖x‖² + ½‖A^j x − b^j‖²`.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    delta: f64,
    a: Vec<Array2<f64>>,
    b: Vec<Array1<f64>>,
    lipschitz: f64,
}

impl LeastSquares {
    pub fn new(delta: f64, a: Vec<Array2<f64>>, b: Vec<Array1<f64>>) -> Result<Self> {
        validate_blocks(&a, &b)?;
        if !(delta >= 0.0) {
            return Err(Error::InvalidSpec("delta must be nonnegative".into()));
        }
        let lipschitz = delta + a.iter().map(spectral_norm_sq).fold(0.0, f64::max);
        Ok(Self { delta, a, b, lipschitz })
    }

    pub fn blocks(&self) -> (&[Array2<f64>], &[Array1<f64>]) {
        (&self.a, &self.b)
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

impl MultiObjective for LeastSquares {
    fn n(&self) -> usize {
        self.a[0].ncols()
    }
    fn m(&self) -> usize {
        self.a.len()
    }
    fn values(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let q = 0.5 * self.delta * x.dot(&x);
        Array1::from_iter((0..self.m()).map(|j| {
            let r = self.a[j].dot(&x) - &self.b[j];
            q + 0.5 * r.dot(&r)
        }))
    }
    fn jacobian(&self, x: ArrayView1<f64>) -> Array2<f64> {
        let mut jac = Array2::zeros((self.n(), self.m()));
        for j in 0..self.m() {
            let r = self.a[j].dot(&x) - &self.b[j];
            jac.column_mut(j).assign(&(self.a[j].t().dot(&r) + self.delta * &x));
        }
        jac
    }
    fn mu(&self) -> f64 {
        self.delta
    }
    fn lipschitz(&self) -> Option<f64> {
        Some(self.lipschitz)
    }
}

fn validate_blocks(a: &[Array2<f64>], b: &[Array1<f64>]) -> Result<()> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::InvalidSpec("need one (A, b) block per objective".into()));
    }
    let (p, n) = a[0].dim();
    if p == 0 || n == 0 {
        return Err(Error::InvalidSpec("p and n must be positive".into()));
    }
    if a.iter().any(|m| m.dim() != (p, n)) || b.iter().any(|v| v.len() != p) {
        return Err(Error::InvalidSpec("inconsistent block shapes".into()));
    }
    Ok(())
}

/// The nonconvex two-objective example built from `s_i = ⟨a_i, x⟩`:
///
/// ```text
/// f_{1,2}(x) = ½(√(1+s_1²) + √(1+s_2²) ± s_2) + exp(−s_2²)
/// ```
#[derive(Debug, Clone)]
pub struct NonconvexPair {
    a1: Array1<f64>,
    a2: Array1<f64>,
}

impl NonconvexPair {
    pub fn new(a1: Array1<f64>, a2: Array1<f64>) -> Result<Self> {
        if a1.is_empty() || a1.len() != a2.len() {
            return Err(Error::InvalidSpec("a1 and a2 must share a positive length".into()));
        }
        Ok(Self { a1, a2 })
    }
}

impl MultiObjective for NonconvexPair {
    fn n(&self) -> usize {
        self.a1.len()
    }
    fn m(&self) -> usize {
        2
    }
    fn values(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let s1 = self.a1.dot(&x);
        let s2 = self.a2.dot(&x);
        let common = 0.5 * ((1.0 + s1 * s1).sqrt() + (1.0 + s2 * s2).sqrt()) + (-s2 * s2).exp();
        Array1::from(vec![common + 0.5 * s2, common - 0.5 * s2])
    }
    fn jacobian(&self, x: ArrayView1<f64>) -> Array2<f64> {
        let s1 = self.a1.dot(&x);
        let s2 = self.a2.dot(&x);
        let c1 = 0.5 * s1 / (1.0 + s1 * s1).sqrt();
        let c2 = 0.5 * s2 / (1.0 + s2 * s2).sqrt() - 2.0 * s2 * (-s2 * s2).exp();
        let mut jac = Array2::zeros((self.n(), 2));
        for (j, sign) in [(0, 0.5), (1, -0.5)] {
            let g = c1 * &self.a1 + (c2 + sign) * &self.a2;
            jac.column_mut(j).assign(&g);
        }
        jac
    }
}

/// `f_j(x) = ½(x − c_j)ᵀ H_j (x − c_j) + o_j`, mainly for tests and flows.
#[derive(Debug, Clone)]
pub struct Quadratic {
    centers: Vec<Array1<f64>>,
    hessians: Vec<Array2<f64>>,
    offsets: Vec<f64>,
    mu: f64,
    lipschitz: f64,
}

impl Quadratic {
    /// `mu` and `lipschitz` must bound the spectra of every `H_j`.
    pub fn new(
        centers: Vec<Array1<f64>>,
        hessians: Vec<Array2<f64>>,
        offsets: Vec<f64>,
        mu: f64,
        lipschitz: f64,
    ) -> Result<Self> {
        if centers.is_empty() || centers.len() != hessians.len() || centers.len() != offsets.len() {
            return Err(Error::InvalidSpec("one center, Hessian and offset per objective".into()));
        }
        let n = centers[0].len();
        if n == 0 || centers.iter().any(|c| c.len() != n) || hessians.iter().any(|h| h.dim() != (n, n)) {
            return Err(Error::InvalidSpec("inconsistent quadratic shapes".into()));
        }
        if !(mu >= 0.0 && lipschitz > 0.0 && mu <= lipschitz) {
            return Err(Error::InvalidSpec("need 0 <= mu <= lipschitz, lipschitz > 0".into()));
        }
        Ok(Self { centers, hessians, offsets, mu, lipschitz })
    }

    /// Diagonal Hessians; `mu`/`lipschitz` are read off the diagonals.
    pub fn diagonal(centers: Vec<Array1<f64>>, diagonals: Vec<Array1<f64>>) -> Result<Self> {
        let mu = diagonals.iter().flat_map(|d| d.iter().cloned()).fold(f64::INFINITY, f64::min);
        let lipschitz = diagonals.iter().flat_map(|d| d.iter().cloned()).fold(0.0, f64::max);
        let hessians = diagonals.iter().map(Array2::from_diag).collect();
        let offsets = vec![0.0; centers.len()];
        Self::new(centers, hessians, offsets, mu.max(0.0), lipschitz)
    }

    pub fn centers(&self) -> &[Array1<f64>] {
        &self.centers
    }
}

impl MultiObjective for Quadratic {
    fn n(&self) -> usize {
        self.centers[0].len()
    }
    fn m(&self) -> usize {
        self.centers.len()
    }
    fn values(&self, x: ArrayView1<f64>) -> Array1<f64> {
        Array1::from_iter((0..self.m()).map(|j| {
            let d = &x - &self.centers[j];
            0.5 * d.dot(&self.hessians[j].dot(&d)) + self.offsets[j]
        }))
    }
    fn jacobian(&self, x: ArrayView1<f64>) -> Array2<f64> {
        let mut jac = Array2::zeros((self.n(), self.m()));
        for j in 0..self.m() {
            let d = &x - &self.centers[j];
            jac.column_mut(j).assign(&self.hessians[j].dot(&d));
        }
        jac
    }
    fn mu(&self) -> f64 {
        self.mu
    }
    fn lipschitz(&self) -> Option<f64> {
        Some(self.lipschitz)
    }
}

/// `f_j(x) = ⟨g_j, x⟩ + c_j`; curvature zero.
#[derive(Debug, Clone)]
pub struct Affine {
    slopes: Array2<f64>,
    intercepts: Array1<f64>,
}

impl Affine {
    /// `slopes` is `n x m`, column `j` is `g_j`.
    pub fn new(slopes: Array2<f64>, intercepts: Array1<f64>) -> Result<Self> {
        if slopes.nrows() == 0 || slopes.ncols() == 0 || slopes.ncols() != intercepts.len() {
            return Err(Error::InvalidSpec("inconsistent affine shapes".into()));
        }
        Ok(Self { slopes, intercepts })
    }
}

impl MultiObjective for Affine {
    fn n(&self) -> usize {
        self.slopes.nrows()
    }
    fn m(&self) -> usize {
        self.slopes.ncols()
    }
    fn values(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.slopes.t().dot(&x) + &self.intercepts
    }
    fn jacobian(&self, _x: ArrayView1<f64>) -> Array2<f64> {
        self.slopes.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemFamily {
    Logsumexp,
    Leastsquares,
    #[serde(rename = "nonconvex_pair")]
    NonconvexPair,
}

impl ProblemFamily {
    pub fn name(self) -> &'static str {
        match self {
            ProblemFamily::Logsumexp => "logsumexp",
            ProblemFamily::Leastsquares => "leastsquares",
            ProblemFamily::NonconvexPair => "nonconvex_pair",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub family: ProblemFamily,
    pub seed: u64,
    pub n: usize,
    pub p: usize,
    pub delta: f64,
}

impl ProblemSpec {
    pub fn new(family: ProblemFamily, seed: u64, n: usize, p: usize, delta: f64) -> Self {
        Self { family, seed, n, p, delta }
    }

    fn stream(&self, array: &str) -> UniformStream {
        UniformStream::new(self.seed, &format!("{}/{array}", self.family.name()))
    }

    fn check(&self, family: ProblemFamily, needs_p: bool) -> Result<()> {
        if self.family != family {
            return Err(Error::InvalidSpec(format!(
                "expected family {}, got {}",
                family.name(),
                self.family.name()
            )));
        }
        if self.n == 0 || (needs_p && self.p == 0) {
            return Err(Error::InvalidSpec("n and p must be positive".into()));
        }
        if !(self.delta >= 0.0) || !self.delta.is_finite() {
            return Err(Error::InvalidSpec("delta must be finite and nonnegative".into()));
        }
        Ok(())
    }

    fn blocks(&self, m: usize, lo: f64, hi: f64) -> (Vec<Array2<f64>>, Vec<Array1<f64>>) {
        let (n, p) = (self.n, self.p);
        let a = (0..m)
            .map(|j| {
                let data = self.stream(&format!("A{j}")).fill(p * n, lo, hi);
                Array2::from_shape_vec((p, n), data).expect("shape matches draw count")
            })
            .collect();
        let b = (0..m)
            .map(|j| Array1::from(self.stream(&format!("b{j}")).fill(p, lo, hi)))
            .collect();
        (a, b)
    }

    /// Builds the family named in this description.
    pub fn build(&self) -> Result<Box<dyn MultiObjective>> {
        Ok(match self.family {
            ProblemFamily::Logsumexp => Box::new(gen_logsumexp(self)?),
            ProblemFamily::Leastsquares => Box::new(gen_leastsquares(self)?),
            ProblemFamily::NonconvexPair => Box::new(gen_nonconvex_pair(self)?),
        })
    }
}

/// Three log-sum-exp objectives with `a_i^j, b_i^j ~ U[-1, 1)`.
pub fn gen_logsumexp(spec: &ProblemSpec) -> Result<LogSumExp> {
    spec.check(ProblemFamily::Logsumexp, true)?;
    let (a, b) = spec.blocks(3, -1.0, 1.0);
    LogSumExp::new(spec.delta, a, b)
}

/// Two regularized least-squares objectives with `A^j, b^j ~ U[0, 1)`.
pub fn gen_leastsquares(spec: &ProblemSpec) -> Result<LeastSquares> {
    spec.check(ProblemFamily::Leastsquares, true)?;
    let (a, b) = spec.blocks(2, 0.0, 1.0);
    LeastSquares::new(spec.delta, a, b)
}

/// The nonconvex pair with `a_1, a_2 ~ U[0, 1)^n`, unnormalized.
pub fn gen_nonconvex_pair(spec: &ProblemSpec) -> Result<NonconvexPair> {
    spec.check(ProblemFamily::NonconvexPair, false)?;
    let a1 = Array1::from(spec.stream("a1").fill(spec.n, 0.0, 1.0));
    let a2 = Array1::from(spec.stream("a2").fill(spec.n, 0.0, 1.0));
    NonconvexPair::new(a1, a2)
}

/// Max over objectives of `‖g_j − g_j^fd‖ / max(‖g_j‖, 1)` with central
/// differences of step `h`.
pub fn fd_gradient_check<O: MultiObjective + ?Sized>(bundle: &O, x: ArrayView1<f64>, h: f64) -> Result<f64> {
    if !(h > 0.0 && h <= 1e-2) {
        return Err(Error::InvalidInput(format!("step {h} outside (0, 1e-2]")));
    }
    let jac = eval_jacobian(bundle, x)?;
    let mut fd = Array2::zeros(jac.dim());
    let mut probe = x.to_owned();
    for i in 0..bundle.n() {
        let xi = probe[i];
        probe[i] = xi + h;
        let plus = eval_objectives(bundle, probe.view())?;
        probe[i] = xi - h;
        let minus = eval_objectives(bundle, probe.view())?;
        probe[i] = xi;
        fd.row_mut(i).assign(&((plus - minus) / (2.0 * h)));
    }
    let worst = jac
        .axis_iter(Axis(1))
        .zip(fd.axis_iter(Axis(1)))
        .map(|(g, f)| {
            let diff = &g - &f;
            diff.dot(&diff).sqrt() / g.dot(&g).sqrt().max(1.0)
        })
        .fold(0.0, f64::max);
    Ok(worst)
}
