//! Entropic optimal transport.
//!
//! [`solve`] minimizes `⟨γ, C⟩ + λ Σ γᵢⱼ ln γᵢⱼ` over couplings with marginals
//! `p` and `q`. The default iteration runs on the dual potentials with
//! log-sum-exp reductions, which stays finite for any `λ > 0`. The kernel is
//! `exp(−C/λ)`.
//!
//! Rows with `pᵢ = 0` and columns with `qⱼ = 0` are dropped before iterating
//! and receive zero mass.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Probability vector on the simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram<T: Scalar> {
    weights: DVector<T>,
}

impl<T: Scalar> Histogram<T> {
    pub fn new(weights: DVector<T>) -> Result<Self> {
        let n = weights.len();
        if n == 0 {
            return Err(Error::InvalidHistogram("empty".into()));
        }
        if let Some(i) = weights.iter().position(|w| !(*w >= T::zero()) || !w.is_finite()) {
            return Err(Error::InvalidHistogram(format!(
                "weight {i} is {}",
                weights[i]
            )));
        }
        let tol = T::lit(1e-12).max(T::lit(8.0) * T::from_count(n) * T::EPSILON);
        let total = weights.sum();
        if (total - T::one()).abs() > tol {
            return Err(Error::InvalidHistogram(format!("weights sum to {total}")));
        }
        Ok(Self { weights })
    }

    pub fn from_slice(weights: &[T]) -> Result<Self> {
        Self::new(DVector::from_column_slice(weights))
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidHistogram("empty".into()));
        }
        Ok(Self {
            weights: DVector::from_element(n, T::one() / T::from_count(n)),
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &DVector<T> {
        &self.weights
    }

    pub fn get(&self, i: usize) -> T {
        self.weights[i]
    }
}

/// Nonnegative `m × n` ground cost.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix<T: Scalar> {
    entries: DMatrix<T>,
}

impl<T: Scalar> CostMatrix<T> {
    pub fn new(entries: DMatrix<T>) -> Result<Self> {
        if let Some(v) = entries.iter().find(|v| !(**v >= T::zero()) || !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "cost entries must be finite and nonnegative, found {v}"
            )));
        }
        Ok(Self { entries })
    }

    /// Clamps round-off negatives to zero.
    pub fn from_clamped(mut entries: DMatrix<T>) -> Result<Self> {
        for v in entries.iter_mut() {
            if *v < T::zero() {
                *v = T::zero();
            }
        }
        Self::new(entries)
    }

    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<T> {
        self.entries
    }

    /// Median entry; the mean of the two middle entries for even counts.
    pub fn median(&self) -> T {
        let mut v: Vec<T> = self.entries.iter().copied().collect();
        let n = v.len();
        if n == 0 {
            return T::zero();
        }
        let cmp = |a: &T, b: &T| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal);
        let mid = n / 2;
        let (lower, hi, _) = v.select_nth_unstable_by(mid, cmp);
        let hi = *hi;
        if n % 2 == 1 {
            hi
        } else {
            let lo = lower.iter().copied().fold(T::min_value().unwrap(), |a, b| a.max(b));
            (lo + hi) * T::lit(0.5)
        }
    }
}

/// Solver diagnostics attached to a plan.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveStats<T> {
    pub iterations: usize,
    /// `max(‖γ1 − p‖₁, ‖γᵀ1 − q‖₁)` of the returned plan.
    pub marginal_error: T,
    pub converged: bool,
}

/// Coupling `γ` between two histograms.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan<T: Scalar> {
    entries: DMatrix<T>,
    row_marginal: Histogram<T>,
    col_marginal: Histogram<T>,
    stats: SolveStats<T>,
}

impl<T: Scalar> TransportPlan<T> {
    /// Wraps a nonnegative matrix; marginal feasibility is measured, not enforced.
    pub fn new(entries: DMatrix<T>, p: &Histogram<T>, q: &Histogram<T>) -> Result<Self> {
        check_dims(entries.nrows(), entries.ncols(), p, q)?;
        if let Some(v) = entries.iter().find(|v| !(**v >= T::zero())) {
            return Err(Error::InvalidParameter(format!(
                "plan entries must be nonnegative, found {v}"
            )));
        }
        let (er, ec) = marginal_error_of(&entries, p, q);
        Ok(Self {
            entries,
            row_marginal: p.clone(),
            col_marginal: q.clone(),
            stats: SolveStats {
                iterations: 0,
                marginal_error: er.max(ec),
                converged: true,
            },
        })
    }

    /// Product coupling `p·qᵀ`.
    pub fn product(p: &Histogram<T>, q: &Histogram<T>) -> Self {
        let entries = p.weights() * q.weights().transpose();
        Self::new(entries, p, q).expect("product plan is valid")
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<T> {
        self.entries
    }

    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn row_marginal(&self) -> &Histogram<T> {
        &self.row_marginal
    }

    pub fn col_marginal(&self) -> &Histogram<T> {
        &self.col_marginal
    }

    pub fn stats(&self) -> &SolveStats<T> {
        &self.stats
    }

    /// Transport cost `⟨γ, C⟩`.
    pub fn cost(&self, c: &CostMatrix<T>) -> Result<T> {
        if c.rows() != self.rows() || c.cols() != self.cols() {
            return Err(Error::DimensionMismatch(format!(
                "plan {}x{} vs cost {}x{}",
                self.rows(),
                self.cols(),
                c.rows(),
                c.cols()
            )));
        }
        Ok(self.entries.dot(c.matrix()))
    }
}

/// Iteration scheme used by [`solve`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SinkhornMethod {
    /// Dual potentials updated with log-sum-exp reductions.
    #[default]
    LogDomain,
    /// Plain diagonal scaling of `exp(−C/λ)`; underflows for small `λ`.
    Scaling,
    /// Diagonal scaling on a kernel whose potentials are periodically
    /// absorbed into log-domain offsets. Same iterates as `LogDomain`.
    Stabilized,
    /// Newton steps on the dual with backtracking, after a few log-domain
    /// sweeps. Converges in a handful of steps where the fixed-point
    /// iteration crawls (costs much larger than `λ`); each step costs a
    /// dense `n×n` solve.
    Newton,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SinkhornConfig<T> {
    /// Entropic weight `λ > 0`.
    pub lambda: T,
    pub max_iter: usize,
    /// Stop once both L1 marginal errors fall below this value.
    pub tol: T,
    pub method: SinkhornMethod,
}

impl<T: Scalar> SinkhornConfig<T> {
    pub fn new(lambda: T) -> Self {
        Self {
            lambda,
            max_iter: 10_000,
            tol: T::lit(1e-9),
            method: SinkhornMethod::LogDomain,
        }
    }

    pub fn with_tol(mut self, tol: T) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_method(mut self, method: SinkhornMethod) -> Self {
        self.method = method;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > T::zero()) || !self.lambda.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.tol > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

fn check_dims<T: Scalar>(rows: usize, cols: usize, p: &Histogram<T>, q: &Histogram<T>) -> Result<()> {
    if rows != p.len() || cols != q.len() {
        return Err(Error::DimensionMismatch(format!(
            "matrix {rows}x{cols} vs marginals {} and {}",
            p.len(),
            q.len()
        )));
    }
    Ok(())
}

fn marginal_error_of<T: Scalar>(g: &DMatrix<T>, p: &Histogram<T>, q: &Histogram<T>) -> (T, T) {
    let mut row = T::zero();
    for i in 0..g.nrows() {
        let s = g.row(i).sum();
        row += (s - p.get(i)).abs();
    }
    let mut col = T::zero();
    for j in 0..g.ncols() {
        let s = g.column(j).sum();
        col += (s - q.get(j)).abs();
    }
    (row, col)
}

/// `(‖γ1 − p‖₁, ‖γᵀ1 − q‖₁)`.
pub fn marginal_error<T: Scalar>(
    g: &TransportPlan<T>,
    p: &Histogram<T>,
    q: &Histogram<T>,
) -> Result<(T, T)> {
    check_dims(g.rows(), g.cols(), p, q)?;
    Ok(marginal_error_of(g.matrix(), p, q))
}

/// Negative entropy `Σ γᵢⱼ ln γᵢⱼ` with `0 ln 0 = 0`.
pub fn entropy<T: Scalar>(g: &TransportPlan<T>) -> T {
    entropy_of(g.matrix())
}

pub(crate) fn entropy_of<T: Scalar>(g: &DMatrix<T>) -> T {
    g.iter()
        .filter(|v| **v > T::zero())
        .fold(T::zero(), |acc, &v| acc + v * v.ln())
}

/// Support of the marginals and the cost divided by `λ` on it.
struct Reduced<T> {
    rows: Vec<usize>,
    cols: Vec<usize>,
    p: Vec<T>,
    q: Vec<T>,
    log_p: Vec<T>,
    log_q: Vec<T>,
    /// `C/λ` restricted to the support, row-major.
    k_by_row: Vec<T>,
    /// Same values, column-major.
    k_by_col: Vec<T>,
}

impl<T: Scalar> Reduced<T> {
    fn new(c: &CostMatrix<T>, p: &Histogram<T>, q: &Histogram<T>, lambda: T) -> Self {
        let rows: Vec<usize> = (0..p.len()).filter(|&i| p.get(i) > T::zero()).collect();
        let cols: Vec<usize> = (0..q.len()).filter(|&j| q.get(j) > T::zero()).collect();
        let pw: Vec<T> = rows.iter().map(|&i| p.get(i)).collect();
        let qw: Vec<T> = cols.iter().map(|&j| q.get(j)).collect();
        let inv = T::one() / lambda;
        let cm = c.matrix();
        let mut k_by_col = Vec::with_capacity(rows.len() * cols.len());
        for &j in &cols {
            for &i in &rows {
                k_by_col.push(cm[(i, j)] * inv);
            }
        }
        let (m, n) = (rows.len(), cols.len());
        let mut k_by_row = vec![T::zero(); m * n];
        for jj in 0..n {
            for ii in 0..m {
                k_by_row[ii * n + jj] = k_by_col[jj * m + ii];
            }
        }
        Self {
            log_p: pw.iter().map(|v| v.ln()).collect(),
            log_q: qw.iter().map(|v| v.ln()).collect(),
            p: pw,
            q: qw,
            rows,
            cols,
            k_by_row,
            k_by_col,
        }
    }

    fn m(&self) -> usize {
        self.rows.len()
    }

    fn n(&self) -> usize {
        self.cols.len()
    }

    /// Scatters `γ` given on the support back into the full `m × n` shape.
    fn expand(&self, full_rows: usize, full_cols: usize, value: impl Fn(usize, usize) -> T) -> DMatrix<T> {
        let mut out = DMatrix::zeros(full_rows, full_cols);
        for (jj, &j) in self.cols.iter().enumerate() {
            for (ii, &i) in self.rows.iter().enumerate() {
                out[(i, j)] = value(ii, jj);
            }
        }
        out
    }
}

/// `ln Σ exp(vₖ)` over `shift[k] − k[k]`.
#[inline]
fn log_sum_exp<T: Scalar>(shift: &[T], k: &[T]) -> T {
    let mut top = T::min_value().unwrap();
    for (s, c) in shift.iter().zip(k) {
        let v = *s - *c;
        if v > top {
            top = v;
        }
    }
    if !top.is_finite() {
        return top;
    }
    let mut acc = T::zero();
    for (s, c) in shift.iter().zip(k) {
        acc += (*s - *c - top).exp();
    }
    top + acc.ln()
}

/// Entropic OT plan for cost `c` between `p` and `q`.
///
/// Stops when `max(‖γ1 − p‖₁, ‖γᵀ1 − q‖₁) < tol` or after `max_iter` sweeps;
/// hitting the cap is reported through [`SolveStats::converged`], not as an
/// error.
pub fn solve<T: Scalar>(
    c: &CostMatrix<T>,
    p: &Histogram<T>,
    q: &Histogram<T>,
    cfg: &SinkhornConfig<T>,
) -> Result<TransportPlan<T>> {
    solve_warm(c, p, q, cfg, None).map(|(g, _)| g)
}

/// Dual potentials `(f, g)` in cost units, so `γᵢⱼ = exp((fᵢ + gⱼ − Cᵢⱼ)/λ)`.
/// Entries for zero-weight rows and columns are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Potentials<T: Scalar> {
    pub f: DVector<T>,
    pub g: DVector<T>,
}

/// [`solve`] started from `warm` potentials (if any), also returning the
/// final potentials. A start from the potentials of a nearby cost usually
/// needs far fewer sweeps.
pub fn solve_warm<T: Scalar>(
    c: &CostMatrix<T>,
    p: &Histogram<T>,
    q: &Histogram<T>,
    cfg: &SinkhornConfig<T>,
    warm: Option<&Potentials<T>>,
) -> Result<(TransportPlan<T>, Potentials<T>)> {
    cfg.validate()?;
    check_dims(c.rows(), c.cols(), p, q)?;
    if let Some(w) = warm {
        if w.f.len() != c.rows() || w.g.len() != c.cols() {
            return Err(Error::DimensionMismatch(format!(
                "warm potentials of sizes {} and {} for a {}x{} cost",
                w.f.len(),
                w.g.len(),
                c.rows(),
                c.cols()
            )));
        }
    }
    let red = Reduced::new(c, p, q, cfg.lambda);
    let inv = T::one() / cfg.lambda;
    let a0: Vec<T> = match warm {
        Some(w) => red.rows.iter().map(|&i| w.f[i] * inv).collect(),
        None => vec![T::zero(); red.m()],
    };
    let b0: Vec<T> = match warm {
        Some(w) => red.cols.iter().map(|&j| w.g[j] * inv).collect(),
        None => vec![T::zero(); red.n()],
    };
    let (entries, iterations, a, b) = match cfg.method {
        SinkhornMethod::LogDomain => {
            let (a, b, it) = log_domain(&red, cfg, a0, b0);
            let n = red.n();
            let g = red.expand(c.rows(), c.cols(), |ii, jj| {
                (a[ii] + b[jj] - red.k_by_row[ii * n + jj]).exp()
            });
            (g, it, a, b)
        }
        SinkhornMethod::Scaling => scaling(&red, cfg, c.rows(), c.cols(), &b0)?,
        SinkhornMethod::Stabilized => stabilized(&red, cfg, c.rows(), c.cols(), a0, b0),
        SinkhornMethod::Newton => {
            let (a, b, it) = newton(&red, cfg, a0, b0);
            let n = red.n();
            let g = red.expand(c.rows(), c.cols(), |ii, jj| {
                (a[ii] + b[jj] - red.k_by_row[ii * n + jj]).exp()
            });
            (g, it, a, b)
        }
    };
    let mut f = DVector::zeros(c.rows());
    for (ii, &i) in red.rows.iter().enumerate() {
        f[i] = a[ii] * cfg.lambda;
    }
    let mut g = DVector::zeros(c.cols());
    for (jj, &j) in red.cols.iter().enumerate() {
        g[j] = b[jj] * cfg.lambda;
    }
    let (er, ec) = marginal_error_of(&entries, p, q);
    let err = er.max(ec);
    let plan = TransportPlan {
        entries,
        row_marginal: p.clone(),
        col_marginal: q.clone(),
        stats: SolveStats {
            iterations,
            marginal_error: err,
            converged: err < cfg.tol,
        },
    };
    Ok((plan, Potentials { f, g }))
}

/// Runs log-domain sweeps from the scaled potentials `(a, b) = (f/λ, g/λ)`.
fn log_domain<T: Scalar>(
    red: &Reduced<T>,
    cfg: &SinkhornConfig<T>,
    mut a: Vec<T>,
    mut b: Vec<T>,
) -> (Vec<T>, Vec<T>, usize) {
    let (m, n) = (red.m(), red.n());
    let mut lse = vec![T::zero(); m];
    let mut iterations = 0;
    for it in 0..cfg.max_iter {
        for (i, l) in lse.iter_mut().enumerate() {
            *l = log_sum_exp(&b, &red.k_by_row[i * n..(i + 1) * n]);
        }
        if it > 0 {
            // columns are exact after the previous b-update, so the row
            // error is the full stopping criterion
            let err = (0..m).fold(T::zero(), |acc, i| acc + ((a[i] + lse[i]).exp() - red.p[i]).abs());
            if err < cfg.tol {
                break;
            }
        }
        for i in 0..m {
            a[i] = red.log_p[i] - lse[i];
        }
        for j in 0..n {
            b[j] = red.log_q[j] - log_sum_exp(&a, &red.k_by_col[j * m..(j + 1) * m]);
        }
        iterations = it + 1;
    }
    (a, b, iterations)
}

type Solved<T> = (DMatrix<T>, usize, Vec<T>, Vec<T>);

fn scaling<T: Scalar>(
    red: &Reduced<T>,
    cfg: &SinkhornConfig<T>,
    rows: usize,
    cols: usize,
    b0: &[T],
) -> Result<Solved<T>> {
    let (m, n) = (red.m(), red.n());
    let k_row: Vec<T> = red.k_by_row.iter().map(|v| (-*v).exp()).collect();
    let k_col: Vec<T> = red.k_by_col.iter().map(|v| (-*v).exp()).collect();
    let mut u = vec![T::one(); m];
    let mut v: Vec<T> = b0.iter().map(|b| b.exp()).collect();
    let mut kv = vec![T::zero(); m];
    let mut iterations = 0;
    for it in 0..cfg.max_iter {
        for (i, out) in kv.iter_mut().enumerate() {
            *out = dot(&k_row[i * n..(i + 1) * n], &v);
        }
        if it > 0 {
            let err = (0..m).fold(T::zero(), |acc, i| acc + (u[i] * kv[i] - red.p[i]).abs());
            if err < cfg.tol {
                break;
            }
        }
        for i in 0..m {
            u[i] = red.p[i] / kv[i];
        }
        for j in 0..n {
            v[j] = red.q[j] / dot(&k_col[j * m..(j + 1) * m], &u);
        }
        if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NumericalBreakdown(format!(
                "scaling Sinkhorn overflowed at iteration {} (lambda {} too small for exp(-C/lambda))",
                it + 1,
                cfg.lambda
            )));
        }
        iterations = it + 1;
    }
    let g = red.expand(rows, cols, |ii, jj| u[ii] * k_row[ii * n + jj] * v[jj]);
    Ok((g, iterations, u.iter().map(|x| x.ln()).collect(), v.iter().map(|x| x.ln()).collect()))
}

/// Scaling factors beyond `e^{±ABSORB}` are folded into the potentials.
const ABSORB: f64 = 50.0;

fn stabilized<T: Scalar>(
    red: &Reduced<T>,
    cfg: &SinkhornConfig<T>,
    rows: usize,
    cols: usize,
    a0: Vec<T>,
    b0: Vec<T>,
) -> Solved<T> {
    let (m, n) = (red.m(), red.n());
    // one exact log-domain sweep puts every kernel row on a sane scale
    let warm = SinkhornConfig { max_iter: 1, ..*cfg };
    let (mut a, mut b, _) = log_domain(red, &warm, a0, b0);
    let build = |a: &[T], b: &[T]| -> (Vec<T>, Vec<T>) {
        let mut kr = vec![T::zero(); m * n];
        let mut kc = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                let v = (a[i] + b[j] - red.k_by_row[i * n + j]).exp();
                kr[i * n + j] = v;
                kc[j * m + i] = v;
            }
        }
        (kr, kc)
    };
    let (mut k_row, mut k_col) = build(&a, &b);
    let mut u = vec![T::one(); m];
    let mut v = vec![T::one(); n];
    let mut kv = vec![T::zero(); m];
    let hi = T::lit(ABSORB);
    let mut iterations = 1;
    // the warm sweep counts as the first iteration
    for _ in 1..cfg.max_iter {
        for (i, out) in kv.iter_mut().enumerate() {
            *out = dot(&k_row[i * n..(i + 1) * n], &v);
        }
        let err = (0..m).fold(T::zero(), |acc, i| acc + (u[i] * kv[i] - red.p[i]).abs());
        if err < cfg.tol {
            break;
        }
        let underflow = kv.iter().any(|x| !(*x > T::zero()));
        if !underflow {
            for i in 0..m {
                u[i] = red.p[i] / kv[i];
            }
        }
        let mut ok = !underflow;
        if ok {
            for j in 0..n {
                let s = dot(&k_col[j * m..(j + 1) * m], &u);
                if !(s > T::zero()) {
                    ok = false;
                    break;
                }
                v[j] = red.q[j] / s;
            }
        }
        if !ok {
            // fall back to an exact log-domain sweep from the absorbed state
            for i in 0..m {
                a[i] += u[i].ln();
            }
            for j in 0..n {
                b[j] += v[j].ln();
            }
            let (na, nb, _) = log_domain(red, &warm, a, b);
            a = na;
            b = nb;
            (k_row, k_col) = build(&a, &b);
            u.fill(T::one());
            v.fill(T::one());
        } else if u.iter().chain(v.iter()).any(|x| x.ln().abs() > hi) {
            for i in 0..m {
                a[i] += u[i].ln();
            }
            for j in 0..n {
                b[j] += v[j].ln();
            }
            (k_row, k_col) = build(&a, &b);
            u.fill(T::one());
            v.fill(T::one());
        }
        iterations += 1;
    }
    let g = red.expand(rows, cols, |ii, jj| u[ii] * k_row[ii * n + jj] * v[jj]);
    for i in 0..m {
        a[i] += u[i].ln();
    }
    for j in 0..n {
        b[j] += v[j].ln();
    }
    (g, iterations, a, b)
}

/// Log-domain sweeps run before the first Newton step.
const NEWTON_WARMUP: usize = 10;
/// Armijo constant and the number of step halvings tried per damping level.
const ARMIJO: f64 = 1e-4;
const HALVINGS: usize = 4;
/// Damping levels tried before falling back to a plain sweep, and the
/// factor between them.
const DAMPING_TRIES: usize = 6;
const DAMPING_GROWTH: f64 = 10.0;

/// Scaled dual `Σpᵢaᵢ + Σqⱼbⱼ − Σᵢⱼ exp(aᵢ + bⱼ − kᵢⱼ)`, concave in `(a, b)`,
/// and the larger L1 marginal error of the matching plan.
fn dual_and_error<T: Scalar>(red: &Reduced<T>, a: &[T], b: &[T]) -> (T, T) {
    let n = red.n();
    let mut mass = T::zero();
    let mut err_r = T::zero();
    let mut col = vec![T::zero(); n];
    for (i, ai) in a.iter().enumerate() {
        let k = &red.k_by_row[i * n..(i + 1) * n];
        let mut row = T::zero();
        for ((bj, kij), cj) in b.iter().zip(k).zip(col.iter_mut()) {
            let v = (*ai + *bj - *kij).exp();
            row += v;
            *cj += v;
        }
        mass += row;
        err_r += (row - red.p[i]).abs();
    }
    let err_c = col.iter().zip(&red.q).fold(T::zero(), |acc, (c, q)| acc + (*c - *q).abs());
    (dot(&red.p, a) + dot(&red.q, b) - mass, err_r.max(err_c))
}

/// Damped Newton ascent on the dual. The damping `μ = ν·err` vanishes with
/// the residual, so the fast local convergence of Newton is kept, while
/// `ν` grows whenever a step is rejected.
fn newton<T: Scalar>(red: &Reduced<T>, cfg: &SinkhornConfig<T>, a0: Vec<T>, b0: Vec<T>) -> (Vec<T>, Vec<T>, usize) {
    let (m, n) = (red.m(), red.n());
    let sweep = SinkhornConfig {
        max_iter: NEWTON_WARMUP.min(cfg.max_iter),
        ..*cfg
    };
    let (mut a, mut b, mut iterations) = log_domain(red, &sweep, a0, b0);
    let one_sweep = SinkhornConfig { max_iter: 1, ..*cfg };
    let growth = T::lit(DAMPING_GROWTH);
    let mut nu = T::one();
    let mut g = DMatrix::zeros(m, n);
    while iterations < cfg.max_iter {
        for i in 0..m {
            for j in 0..n {
                g[(i, j)] = (a[i] + b[j] - red.k_by_row[i * n + j]).exp();
            }
        }
        let r = g.column_sum();
        let c = g.row_sum();
        let err_r = (0..m).fold(T::zero(), |acc, i| acc + (r[i] - red.p[i]).abs());
        let err_c = (0..n).fold(T::zero(), |acc, j| acc + (c[j] - red.q[j]).abs());
        let err = err_r.max(err_c);
        if err < cfg.tol {
            break;
        }
        iterations += 1;
        let base = dual_and_error(red, &a, &b).0;
        let mut accepted = None;
        for _ in 0..DAMPING_TRIES {
            if let Some((da, db)) = newton_direction(red, &g, &r, &c, nu * err) {
                let slope = (0..m).fold(T::zero(), |acc, i| acc + (red.p[i] - r[i]) * da[i])
                    + (0..n).fold(T::zero(), |acc, j| acc + (red.q[j] - c[j]) * db[j]);
                if slope > T::zero() {
                    let mut t = T::one();
                    for _ in 0..HALVINGS {
                        let na: Vec<T> = (0..m).map(|i| a[i] + t * da[i]).collect();
                        let nb: Vec<T> = (0..n).map(|j| b[j] + t * db[j]).collect();
                        let (v, e) = dual_and_error(red, &na, &nb);
                        // near the optimum the dual change drowns in rounding,
                        // so a full step that shrinks the residual is taken
                        let full_ok = t == T::one() && e < err;
                        if v.is_finite() && (full_ok || v >= base + T::lit(ARMIJO) * t * slope) {
                            accepted = Some((na, nb, t == T::one()));
                            break;
                        }
                        t *= T::lit(0.5);
                    }
                }
            }
            if accepted.is_some() {
                break;
            }
            nu *= growth;
        }
        match accepted {
            Some((na, nb, full)) => {
                a = na;
                b = nb;
                if full {
                    nu = (nu / growth).max(T::lit(1e-12));
                }
            }
            None => {
                let (na, nb, _) = log_domain(red, &one_sweep, a, b);
                a = na;
                b = nb;
            }
        }
    }
    (a, b, iterations)
}

/// Solves `[[diag r + μ, γ], [γᵀ, diag c + μ]]·(δa, δb) = (p − r, q − c)`,
/// the damped Newton system of the scaled dual, through the Schur
/// complement `diag(c + μ) − γᵀ diag(r + μ)⁻¹ γ`.
fn newton_direction<T: Scalar>(
    red: &Reduced<T>,
    g: &DMatrix<T>,
    r: &DVector<T>,
    c: &nalgebra::RowDVector<T>,
    mu: T,
) -> Option<(Vec<T>, Vec<T>)> {
    let (m, n) = (red.m(), red.n());
    let rd: Vec<T> = (0..m).map(|i| r[i] + mu).collect();
    if rd.iter().any(|v| !(*v > T::zero())) {
        return None;
    }
    let res_r: Vec<T> = (0..m).map(|i| red.p[i] - r[i]).collect();
    let res_c: Vec<T> = (0..n).map(|j| red.q[j] - c[j]).collect();
    let mut scaled = g.clone();
    for i in 0..m {
        scaled.row_mut(i).scale_mut(T::one() / rd[i].sqrt());
    }
    let mut schur = -(scaled.transpose() * &scaled);
    for j in 0..n {
        schur[(j, j)] += c[j] + mu;
    }
    let mut rhs = DVector::from_iterator(n, res_c.iter().copied());
    for i in 0..m {
        let w = res_r[i] / rd[i];
        for j in 0..n {
            rhs[j] -= g[(i, j)] * w;
        }
    }
    let db = if mu > T::zero() {
        schur.cholesky()?.solve(&rhs)
    } else {
        // undamped: fix the gauge δbₙ = 0
        let k = n - 1;
        let sub = schur.view((0, 0), (k, k)).into_owned();
        let mut sol = sub.cholesky()?.solve(&rhs.rows(0, k).into_owned()).data.as_vec().clone();
        sol.push(T::zero());
        DVector::from_vec(sol)
    };
    if db.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let da = (0..m)
        .map(|i| {
            let gd = (0..n).fold(T::zero(), |acc, j| acc + g[(i, j)] * db[j]);
            (res_r[i] - gd) / rd[i]
        })
        .collect();
    Some((da, db.iter().copied().collect()))
}

/// Four independent partial sums so the loop vectorizes.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .fold(T::zero(), |s, (x, y)| s + *x * *y);
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Upper bound on `m·n` for spanning-tree enumeration.
const MAX_ENUMERATED_CELLS: usize = 16;
/// Upper bound on `n` for the permutation case.
const MAX_PERMUTATION_SIZE: usize = 8;

/// Exact minimizer of the unregularized problem `min ⟨γ, C⟩` by enumeration.
///
/// For square problems with uniform marginals the optimum sits on a
/// permutation matrix scaled by `1/n`, and all `n!` of them are tried. Other
/// small problems enumerate every basic feasible solution of the transport
/// polytope (spanning trees of the bipartite support graph). The first
/// minimizer in enumeration order wins ties.
pub fn exact_ot_oracle<T: Scalar>(
    c: &CostMatrix<T>,
    p: &Histogram<T>,
    q: &Histogram<T>,
) -> Result<TransportPlan<T>> {
    check_dims(c.rows(), c.cols(), p, q)?;
    let (m, n) = (c.rows(), c.cols());
    let uniform = |h: &Histogram<T>| {
        let w = T::one() / T::from_count(h.len());
        h.weights().iter().all(|v| (*v - w).abs() <= T::lit(1e-12).max(T::EPSILON * T::lit(4.0)))
    };
    if m == n && m <= MAX_PERMUTATION_SIZE && uniform(p) && uniform(q) {
        return permutation_oracle(c, p, q);
    }
    if m * n <= MAX_ENUMERATED_CELLS {
        return vertex_oracle(c, p, q);
    }
    Err(Error::TooLarge(format!("{m}x{n} transport problem")))
}

fn permutation_oracle<T: Scalar>(
    c: &CostMatrix<T>,
    p: &Histogram<T>,
    q: &Histogram<T>,
) -> Result<TransportPlan<T>> {
    let n = c.rows();
    let cm = c.matrix();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best_perm = perm.clone();
    let mut best = T::max_value().unwrap();
    loop {
        let cost = perm.iter().enumerate().fold(T::zero(), |acc, (i, &j)| acc + cm[(i, j)]);
        if cost < best {
            best = cost;
            best_perm.clone_from(&perm);
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    let w = T::one() / T::from_count(n);
    let mut g = DMatrix::zeros(n, n);
    for (i, &j) in best_perm.iter().enumerate() {
        g[(i, j)] = w;
    }
    TransportPlan::new(g, p, q)
}

/// Advances to the next permutation in lexicographic order.
fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

fn vertex_oracle<T: Scalar>(
    c: &CostMatrix<T>,
    p: &Histogram<T>,
    q: &Histogram<T>,
) -> Result<TransportPlan<T>> {
    let (m, n) = (c.rows(), c.cols());
    let cells = m * n;
    let k = m + n - 1;
    let cm = c.matrix();
    let mut best: Option<(T, DMatrix<T>)> = None;
    let mut combo: Vec<usize> = (0..k).collect();
    loop {
        if let Some(g) = tree_flow(&combo, m, n, p, q) {
            let cost = g.dot(cm);
            if best.as_ref().is_none_or(|(b, _)| cost < *b) {
                best = Some((cost, g));
            }
        }
        // next k-combination of 0..cells
        let mut i = k;
        while i > 0 && combo[i - 1] == cells - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        combo[i - 1] += 1;
        for t in i..k {
            combo[t] = combo[t - 1] + 1;
        }
    }
    let (_, g) = best.expect("transport polytope has a vertex");
    TransportPlan::new(g, p, q)
}

/// Flow on a spanning tree of the bipartite graph, if the cells form one and
/// the flow is nonnegative. Cell `e` joins row `e / n` with column `e % n`.
fn tree_flow<T: Scalar>(
    cells: &[usize],
    m: usize,
    n: usize,
    p: &Histogram<T>,
    q: &Histogram<T>,
) -> Option<DMatrix<T>> {
    // union-find cycle check over m + n nodes
    let mut parent: Vec<usize> = (0..m + n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &e in cells {
        let (a, b) = (find(&mut parent, e / n), find(&mut parent, m + e % n));
        if a == b {
            return None;
        }
        parent[a] = b;
    }
    let mut residual: Vec<T> = (0..m).map(|i| p.get(i)).chain((0..n).map(|j| q.get(j))).collect();
    let mut degree = vec![0usize; m + n];
    for &e in cells {
        degree[e / n] += 1;
        degree[m + e % n] += 1;
    }
    let mut alive = vec![true; cells.len()];
    let mut g = DMatrix::zeros(m, n);
    let neg_tol = T::lit(-1e-12);
    for _ in 0..cells.len() {
        // peel a leaf: a node touching exactly one live edge
        let (slot, leaf) = cells.iter().enumerate().filter(|(s, _)| alive[*s]).find_map(|(s, &e)| {
            let (r, cnode) = (e / n, m + e % n);
            if degree[r] == 1 {
                Some((s, r))
            } else if degree[cnode] == 1 {
                Some((s, cnode))
            } else {
                None
            }
        })?;
        let e = cells[slot];
        let (r, cnode) = (e / n, m + e % n);
        let other = if leaf == r { cnode } else { r };
        let flow = residual[leaf];
        if flow < neg_tol {
            return None;
        }
        let flow = flow.max(T::zero());
        g[(r, e % n)] = flow;
        residual[leaf] = T::zero();
        residual[other] -= flow;
        degree[r] -= 1;
        degree[cnode] -= 1;
        alive[slot] = false;
    }
    Some(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_support::permutation_cost_range;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cost(rows: usize, data: &[f64]) -> CostMatrix<f64> {
        CostMatrix::new(DMatrix::from_row_slice(rows, data.len() / rows, data)).unwrap()
    }

    fn half() -> Histogram<f64> {
        Histogram::uniform(2).unwrap()
    }

    #[test]
    fn histogram_validation() {
        assert!(Histogram::from_slice(&[0.5, 0.5]).is_ok());
        assert!(Histogram::from_slice(&[0.5, 0.6]).is_err());
        assert!(Histogram::from_slice(&[1.5, -0.5]).is_err());
        assert!(Histogram::<f64>::from_slice(&[]).is_err());
        assert!(CostMatrix::new(DMatrix::from_element(1, 1, -1.0)).is_err());
        assert_eq!(CostMatrix::from_clamped(DMatrix::from_element(1, 1, -1e-17)).unwrap().matrix()[(0, 0)], 0.0);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(cost(1, &[3.0, 1.0, 2.0]).median(), 2.0);
        assert_eq!(cost(2, &[4.0, 1.0, 3.0, 2.0]).median(), 2.5);
    }

    #[test]
    fn zero_cost_gives_product_plan() {
        for method in [SinkhornMethod::LogDomain, SinkhornMethod::Scaling, SinkhornMethod::Stabilized] {
            let c = cost(2, &[0.0; 4]);
            let cfg = SinkhornConfig::new(1.0).with_method(method);
            let g = solve(&c, &half(), &half(), &cfg).unwrap();
            assert!((g.matrix() - DMatrix::from_element(2, 2, 0.25)).amax() < 1e-15);
            assert!(g.stats().converged);
        }
    }

    #[test]
    fn antidiagonal_cost_small_lambda() {
        let c = cost(2, &[0.0, 1.0, 1.0, 0.0]);
        let exact = exact_ot_oracle(&c, &half(), &half()).unwrap();
        let cfg = SinkhornConfig::new(0.01);
        let g = solve(&c, &half(), &half(), &cfg).unwrap();
        assert!((g.matrix() - exact.matrix()).amax() < 1e-3);
        assert!((exact.matrix() - DMatrix::from_diagonal_element(2, 2, 0.5)).amax() == 0.0);
    }

    #[test]
    fn three_by_three_against_permutations() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u = Histogram::<f64>::uniform(3).unwrap();
        for _ in 0..20 {
            let c = CostMatrix::new(DMatrix::from_fn(3, 3, |_, _| rng.gen_range(0.0..1.0))).unwrap();
            let (lo, hi) = permutation_cost_range(c.matrix());
            let lambda = 0.05;
            let g = solve(&c, &u, &u, &SinkhornConfig::new(lambda)).unwrap();
            let entropic = g.cost(&c).unwrap();
            // the entropic optimum beats the exact one on ⟨γ,C⟩ + λΩ, and
            // Ω ranges over [−ln 9, −ln 3], which bounds the cost gap
            let slack = lambda * (9f64.ln() - 3f64.ln());
            assert!(entropic >= lo - 1e-9);
            assert!(entropic <= lo + slack + 1e-9, "{entropic} vs {lo} (range {})", hi - lo);
            let exact = exact_ot_oracle(&c, &u, &u).unwrap();
            assert!((exact.cost(&c).unwrap() - lo).abs() < 1e-12);
        }
    }

    #[test]
    fn entropy_examples() {
        let u = half();
        let g = TransportPlan::product(&u, &u);
        assert!((entropy(&g) + 4f64.ln()).abs() < 1e-15);
        let g = TransportPlan::new(DMatrix::from_diagonal_element(2, 2, 0.5), &u, &u).unwrap();
        assert!((entropy(&g) + 2f64.ln()).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = crate::test_support::random_plan(4, 5, &mut rng);
        let mut naive = 0.0;
        for v in m.iter() {
            naive += v * v.ln();
        }
        let p = Histogram::new(DVector::from_fn(4, |i, _| m.row(i).sum())).unwrap();
        let q = Histogram::new(DVector::from_fn(5, |j, _| m.column(j).sum())).unwrap();
        let g = TransportPlan::new(m, &p, &q).unwrap();
        assert!((entropy(&g) - naive).abs() < 1e-12);
    }

    #[test]
    fn marginal_error_examples() {
        let p = Histogram::from_slice(&[0.2, 0.8]).unwrap();
        let q = Histogram::from_slice(&[0.3, 0.3, 0.4]).unwrap();
        let g = TransportPlan::product(&p, &q);
        let (a, b) = marginal_error(&g, &p, &q).unwrap();
        assert!(a < 1e-15 && b < 1e-15);
        let half_plan = TransportPlan::new(g.matrix() * 0.5, &p, &q).unwrap();
        let (a, b) = marginal_error(&half_plan, &p, &q).unwrap();
        assert!((a - 0.5f64).abs() < 1e-15 && (b - 0.5f64).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let c = CostMatrix::new(DMatrix::from_fn(2, 3, |_, _| rng.gen_range(0.0..2.0))).unwrap();
        let g = solve(&c, &p, &q, &SinkhornConfig::new(0.1)).unwrap();
        let (a, b) = marginal_error(&g, &p, &q).unwrap();
        assert!(a < 1e-9 && b < 1e-9);
        assert!(marginal_error(&g, &q, &p).is_err());
    }

    #[test]
    fn newton_handles_costs_far_above_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let c = CostMatrix::new(DMatrix::from_fn(20, 20, |_, _| rng.gen_range(0.0..40.0))).unwrap();
        let u = Histogram::uniform(20).unwrap();
        let cfg = SinkhornConfig::new(0.1).with_tol(1e-12).with_max_iter(200);
        let g = solve(&c, &u, &u, &cfg.with_method(SinkhornMethod::Newton)).unwrap();
        assert!(g.stats().converged, "{:?}", g.stats());
        let (er, ec) = marginal_error(&g, &u, &u).unwrap();
        assert!(er < 1e-12 && ec < 1e-12);
    }

    #[test]
    fn potentials_reproduce_plan() {
        let (c, p, q) = random_instance(3, 4, 5);
        let cfg = SinkhornConfig::new(0.3).with_tol(1e-12);
        let (g, pot) = solve_warm(&c, &p, &q, &cfg, None).unwrap();
        for i in 0..4 {
            for j in 0..5 {
                let v = ((pot.f[i] + pot.g[j] - c.matrix()[(i, j)]) / 0.3).exp();
                assert!((v - g.matrix()[(i, j)]).abs() < 1e-12);
            }
        }
        let bad = Potentials { f: DVector::zeros(3), g: DVector::zeros(5) };
        assert!(solve_warm(&c, &p, &q, &cfg, Some(&bad)).is_err());
    }

    #[test]
    fn zero_weight_rows_get_no_mass() {
        let p = Histogram::from_slice(&[0.5, 0.0, 0.5]).unwrap();
        let q = Histogram::from_slice(&[0.0, 1.0]).unwrap();
        let c = cost(3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        for method in [
            SinkhornMethod::LogDomain,
            SinkhornMethod::Scaling,
            SinkhornMethod::Stabilized,
            SinkhornMethod::Newton,
        ] {
            let g = solve(&c, &p, &q, &SinkhornConfig::new(0.1).with_method(method)).unwrap();
            assert_eq!(g.matrix().row(1).sum(), 0.0);
            assert_eq!(g.matrix().column(0).sum(), 0.0);
            assert!((g.matrix()[(0, 1)] - 0.5).abs() < 1e-12);
            assert!(g.matrix().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn oracle_examples() {
        // zero diagonal, identity permutation is cheaper
        let c = cost(2, &[0.0, 1.0, 1.0, 0.0]);
        let g = exact_ot_oracle(&c, &half(), &half()).unwrap();
        assert_eq!(g.matrix(), &DMatrix::from_diagonal_element(2, 2, 0.5));
        let c = cost(2, &[1.0, 0.0, 0.0, 1.0]);
        let g = exact_ot_oracle(&c, &half(), &half()).unwrap();
        assert_eq!(g.matrix()[(0, 1)], 0.5);

        // strictly dominant assignment 0→2, 1→0, 2→1
        let u = Histogram::uniform(3).unwrap();
        let c = cost(3, &[5.0, 5.0, 0.0, 0.0, 5.0, 5.0, 5.0, 0.0, 5.0]);
        let g = exact_ot_oracle(&c, &u, &u).unwrap();
        let third = 1.0 / 3.0;
        assert_eq!(g.matrix()[(0, 2)], third);
        assert_eq!(g.matrix()[(1, 0)], third);
        assert_eq!(g.matrix()[(2, 1)], third);

        let big = Histogram::<f64>::uniform(5).unwrap();
        let c = CostMatrix::new(DMatrix::zeros(5, 4)).unwrap();
        assert!(matches!(
            exact_ot_oracle(&c, &big, &Histogram::uniform(4).unwrap()),
            Err(Error::TooLarge(_))
        ));
    }

    #[test]
    fn vertex_oracle_matches_northwest_on_monge_cost() {
        // squared distance on sorted 1-D supports is Monge, so the north-west
        // corner rule is optimal
        let xs = [0.0f64, 1.0, 2.5];
        let zs = [0.2, 1.1, 3.0];
        let c = CostMatrix::new(DMatrix::from_fn(3, 3, |i, j| (xs[i] - zs[j]).powi(2))).unwrap();
        let p = Histogram::from_slice(&[0.5, 0.3, 0.2]).unwrap();
        let q = Histogram::from_slice(&[0.2, 0.4, 0.4]).unwrap();
        let g = exact_ot_oracle(&c, &p, &q).unwrap();
        let nw = DMatrix::from_row_slice(3, 3, &[0.2, 0.3, 0.0, 0.0, 0.1, 0.2, 0.0, 0.0, 0.2]);
        assert!((g.matrix() - nw).amax() < 1e-12, "{}", g.matrix());
    }

    #[test]
    fn nonconvergence_is_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = CostMatrix::new(DMatrix::from_fn(6, 6, |_, _| rng.gen_range(0.0..1.0))).unwrap();
        let u = Histogram::uniform(6).unwrap();
        let g = solve(&c, &u, &u, &SinkhornConfig::new(0.001).with_max_iter(2)).unwrap();
        assert!(!g.stats().converged);
        assert_eq!(g.stats().iterations, 2);
    }

    #[test]
    fn invalid_config() {
        let c = cost(2, &[0.0; 4]);
        assert!(solve(&c, &half(), &half(), &SinkhornConfig::new(0.0)).is_err());
        assert!(solve(&c, &half(), &half(), &SinkhornConfig::new(1.0).with_tol(0.0)).is_err());
        let three = Histogram::uniform(3).unwrap();
        assert!(matches!(
            solve(&c, &three, &half(), &SinkhornConfig::new(1.0)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn scaling_breaks_down_at_tiny_lambda() {
        let c = cost(2, &[0.0, 1000.0, 1000.0, 2000.0]);
        let r = solve(&c, &half(), &half(), &SinkhornConfig::new(1e-3).with_method(SinkhornMethod::Scaling));
        assert!(matches!(r, Err(Error::NumericalBreakdown(_))));
        let g = solve(&c, &half(), &half(), &SinkhornConfig::new(1e-3)).unwrap();
        assert!(g.matrix().iter().all(|v| v.is_finite()));
    }

    fn random_instance(seed: u64, m: usize, n: usize) -> (CostMatrix<f64>, Histogram<f64>, Histogram<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = CostMatrix::new(DMatrix::from_fn(m, n, |_, _| rng.gen_range(0.0..1.0))).unwrap();
        let raw_p = DVector::from_fn(m, |_, _| rng.gen_range(0.1..1.0));
        let raw_q = DVector::from_fn(n, |_, _| rng.gen_range(0.1..1.0));
        let p = Histogram::new(&raw_p / raw_p.sum()).unwrap();
        let q = Histogram::new(&raw_q / raw_q.sum()).unwrap();
        (c, p, q)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn feasible_and_positive(seed in 0u64..10_000, m in 1usize..7, n in 1usize..7, lambda in 0.02f64..2.0) {
            let (c, p, q) = random_instance(seed, m, n);
            let g = solve(&c, &p, &q, &SinkhornConfig::new(lambda)).unwrap();
            let (er, ec) = marginal_error(&g, &p, &q).unwrap();
            prop_assert!(er < 1e-9 && ec < 1e-9);
            prop_assert!(g.matrix().iter().all(|v| *v > 0.0));
        }

        #[test]
        fn methods_agree(seed in 0u64..10_000, m in 1usize..7, n in 1usize..7, lambda in 0.1f64..2.0) {
            let (c, p, q) = random_instance(seed, m, n);
            let cfg = SinkhornConfig::new(lambda).with_tol(1e-12);
            let log = solve(&c, &p, &q, &cfg).unwrap();
            let sc = solve(&c, &p, &q, &cfg.with_method(SinkhornMethod::Scaling)).unwrap();
            let st = solve(&c, &p, &q, &cfg.with_method(SinkhornMethod::Stabilized)).unwrap();
            let nt = solve(&c, &p, &q, &cfg.with_method(SinkhornMethod::Newton)).unwrap();
            prop_assert!((log.matrix() - sc.matrix()).amax() < 1e-8);
            prop_assert!((log.matrix() - st.matrix()).amax() < 1e-8);
            prop_assert!((log.matrix() - nt.matrix()).amax() < 1e-8);
        }

        #[test]
        fn warm_start_reaches_same_plan(seed in 0u64..10_000, m in 1usize..7, n in 1usize..7, lambda in 0.1f64..2.0) {
            let (c, p, q) = random_instance(seed, m, n);
            let (c2, _, _) = random_instance(seed + 1, m, n);
            for method in [SinkhornMethod::LogDomain, SinkhornMethod::Stabilized, SinkhornMethod::Newton] {
                let cfg = SinkhornConfig::new(lambda).with_tol(1e-12).with_method(method);
                let cold = solve(&c, &p, &q, &cfg).unwrap();
                let (_, pot) = solve_warm(&c2, &p, &q, &cfg, None).unwrap();
                let (warm, _) = solve_warm(&c, &p, &q, &cfg, Some(&pot)).unwrap();
                prop_assert!((cold.matrix() - warm.matrix()).amax() < 1e-8);
            }
        }

        #[test]
        fn cost_monotone_in_lambda(seed in 0u64..10_000, l1 in 0.05f64..1.0, factor in 1.1f64..4.0) {
            let (c, _, _) = random_instance(seed, 4, 4);
            let u = Histogram::uniform(4).unwrap();
            let cfg = SinkhornConfig::new(l1).with_tol(1e-12);
            let small = solve(&c, &u, &u, &cfg).unwrap().cost(&c).unwrap();
            let large = solve(&c, &u, &u, &SinkhornConfig { lambda: l1 * factor, ..cfg }).unwrap().cost(&c).unwrap();
            prop_assert!(small <= large + 1e-8);
        }
    }

    #[test]
    fn approaches_exact_cost_as_lambda_shrinks() {
        let u = Histogram::<f64>::uniform(3).unwrap();
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let c = CostMatrix::new(DMatrix::from_fn(3, 3, |_, _| rng.gen_range(0.0..1.0))).unwrap();
            let (lo, hi) = permutation_cost_range(c.matrix());
            let mut prev = f64::INFINITY;
            for lambda in [0.5, 0.1, 0.02] {
                let v = solve(&c, &u, &u, &SinkhornConfig::new(lambda)).unwrap().cost(&c).unwrap();
                assert!(v >= lo - 1e-12 && v <= prev + 1e-12);
                prev = v;
            }
            // near-tied permutations leave an entropic bias of order λ, so the
            // bound is loose enough for those instances too
            assert!(prev - lo < 5e-2 * (hi - lo), "gap {} range {}", prev - lo, hi - lo);
        }
    }
}
