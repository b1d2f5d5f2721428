//! Joint learning of a transport plan and an SPD ground metric.
//!
//! The objective over couplings `γ ∈ Γ(p, q)` and SPD matrices `A` is
//!
//! ```text
//! Σᵢⱼ γᵢⱼ (xᵢ−zⱼ)ᵀ A (xᵢ−zⱼ) + ⟨A⁻¹, D⟩ + λ Σᵢⱼ γᵢⱼ ln γᵢⱼ
//! ```
//!
//! For fixed `γ` the first term is `⟨A, C_γ⟩` with
//! `C_γ = Σᵢⱼ γᵢⱼ (xᵢ−zⱼ)(xᵢ−zⱼ)ᵀ`, and the minimizer over `A` solves the
//! Riccati equation `A C_γ A = D`. For fixed `A` the problem is entropic OT
//! with Mahalanobis costs. [`fit`] alternates the two exact minimizations
//! starting from the product coupling `p·qᵀ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sinkhorn::{self, CostMatrix, Histogram, SinkhornConfig, TransportPlan};
use crate::spd::{self, FloorPolicy, SpdMatrix, SymMatrix};

/// Regularizer matrix `D` in `⟨A⁻¹, D⟩`.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum DChoice<T: Scalar> {
    #[default]
    Identity,
    /// `XXᵀ + ZZᵀ`, floored.
    GramSum,
    /// Inverse of the floored `XXᵀ + ZZᵀ`.
    GramSumInverse,
    Custom(SpdMatrix<T>),
}

/// Fixed metrics used as baselines.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineKind {
    /// Squared Euclidean cost.
    Identity,
    /// `W = [X, Z][X, Z]ᵀ`, floored.
    Gram,
    /// `W⁻¹`, which whitens the pooled data.
    GramInverse,
}

/// Size of the `ε·I` lift applied to (near) singular statistics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EpsPolicy<T> {
    Absolute(T),
    /// `factor · trace(S)/d` for the matrix `S` being lifted (`factor` when
    /// the trace vanishes).
    TraceRelative(T),
}

impl<T: Scalar> Default for EpsPolicy<T> {
    fn default() -> Self {
        EpsPolicy::TraceRelative(T::lit(1e-6))
    }
}

impl<T: Scalar> EpsPolicy<T> {
    pub fn resolve(&self, s: &DMatrix<T>) -> T {
        match *self {
            EpsPolicy::Absolute(e) => e,
            EpsPolicy::TraceRelative(f) => {
                let d = s.nrows().max(1);
                let scale = s.trace() / T::from_count(d);
                if scale > T::zero() && scale.is_finite() {
                    f * scale
                } else {
                    f
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let v = match *self {
            EpsPolicy::Absolute(e) | EpsPolicy::TraceRelative(e) => e,
        };
        if !(v > T::zero()) {
            return Err(Error::InvalidParameter(format!("eps must be positive, got {v}")));
        }
        Ok(())
    }
}

/// How `SinkhornConfig::lambda` is interpreted inside [`fit`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaScale {
    /// Used as given.
    #[default]
    Absolute,
    /// Multiplied by the median entry of the first cost matrix of the run,
    /// then held fixed for the remaining iterations.
    MedianCost,
}

/// Whether [`fit`] learns the metric or keeps a fixed one.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum MetricMode<T: Scalar> {
    #[default]
    Learn,
    Frozen(SpdMatrix<T>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmlConfig<T: Scalar> {
    /// Number of alternating sweeps `l`.
    pub outer_iters: usize,
    pub eps: EpsPolicy<T>,
    pub d_choice: DChoice<T>,
    pub sinkhorn: SinkhornConfig<T>,
    /// Stop once the relative objective decrease drops below this; zero
    /// disables early stopping.
    pub objective_rtol: T,
    pub lambda_scale: LambdaScale,
    pub metric: MetricMode<T>,
}

impl<T: Scalar> GmlConfig<T> {
    pub fn new(lambda: T) -> Self {
        Self {
            outer_iters: 20,
            eps: EpsPolicy::default(),
            d_choice: DChoice::Identity,
            sinkhorn: SinkhornConfig::new(lambda),
            objective_rtol: T::lit(1e-6),
            lambda_scale: LambdaScale::Absolute,
            metric: MetricMode::Learn,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.outer_iters == 0 {
            return Err(Error::InvalidParameter("outer_iters must be at least 1".into()));
        }
        if !(self.objective_rtol >= T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "objective_rtol must be nonnegative, got {}",
                self.objective_rtol
            )));
        }
        self.eps.validate()?;
        self.sinkhorn.validate()
    }
}

/// Output of [`fit`].
#[derive(Clone, Debug)]
pub struct FitResult<T: Scalar> {
    pub plan: TransportPlan<T>,
    pub metric: SpdMatrix<T>,
    /// Objective after each full sweep (metric step then plan step).
    ///
    /// When the metric is learned this is the lifted objective
    /// `⟨γ, C_A⟩ + ε·trace(A) + ⟨A⁻¹, D⟩ + λΩ(γ)`, the quantity the two
    /// half-steps minimize exactly, so it is non-increasing up to Sinkhorn
    /// tolerance.
    pub objective_history: Vec<T>,
    /// Early-stop criterion met (always true for a frozen metric).
    pub converged: bool,
    pub iters_run: usize,
    /// Absolute entropic weight used for every plan step.
    pub lambda: T,
    /// Lift applied to `C_γ`; zero for a frozen metric.
    pub eps: T,
    /// Whether every Sinkhorn call met its tolerance.
    pub sinkhorn_converged: bool,
}

fn check_clouds<T: Scalar>(x: &PointCloud<T>, z: &PointCloud<T>) -> Result<()> {
    if x.dim() != z.dim() {
        return Err(Error::DimensionMismatch(format!(
            "source dimension {} vs target dimension {}",
            x.dim(),
            z.dim()
        )));
    }
    if x.is_empty() || z.is_empty() || x.dim() == 0 {
        return Err(Error::InvalidParameter("point clouds must be nonempty".into()));
    }
    Ok(())
}

/// `C_γ` through `X diag(γ1) Xᵀ + Z diag(γᵀ1) Zᵀ − XγZᵀ − ZγᵀXᵀ`, unlifted.
fn cgamma_raw<T: Scalar>(x: &PointCloud<T>, z: &PointCloud<T>, plan: &DMatrix<T>) -> Result<DMatrix<T>> {
    check_clouds(x, z)?;
    if plan.nrows() != x.len() || plan.ncols() != z.len() {
        return Err(Error::DimensionMismatch(format!(
            "plan {}x{} vs clouds of {} and {} points",
            plan.nrows(),
            plan.ncols(),
            x.len(),
            z.len()
        )));
    }
    let (xm, zm) = (x.matrix(), z.matrix());
    let row_mass: DVector<T> = plan.column_sum();
    let col_mass: DVector<T> = plan.row_sum().transpose();
    let mut xr = xm.clone();
    for (i, mut col) in xr.column_iter_mut().enumerate() {
        col *= row_mass[i];
    }
    let mut zc = zm.clone();
    for (j, mut col) in zc.column_iter_mut().enumerate() {
        col *= col_mass[j];
    }
    let cross = (xm * plan) * zm.transpose();
    let mut out = xr * xm.transpose() + zc * zm.transpose() - &cross - cross.transpose();
    let n = out.nrows();
    let half = T::lit(0.5);
    for j in 0..n {
        for i in (j + 1)..n {
            let v = (out[(i, j)] + out[(j, i)]) * half;
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

fn add_diagonal<T: Scalar>(mut m: DMatrix<T>, eps: T) -> DMatrix<T> {
    for i in 0..m.nrows() {
        m[(i, i)] += eps;
    }
    m
}

/// `C_γ + eps·I` for the plan `g` between `x` and `z`.
pub fn compute_cgamma<T: Scalar>(
    x: &PointCloud<T>,
    z: &PointCloud<T>,
    g: &TransportPlan<T>,
    eps: T,
) -> Result<SpdMatrix<T>> {
    if !(eps > T::zero()) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    let raw = cgamma_raw(x, z, g.matrix())?;
    // PSD plus a positive shift
    Ok(SpdMatrix::from_trusted(add_diagonal(raw, eps)))
}

/// Minimizer of `⟨A, C_γ⟩ + ⟨A⁻¹, D⟩` over SPD `A`: the solution of `A C_γ A = D`.
pub fn update_metric<T: Scalar>(cg: &SpdMatrix<T>, d: &SpdMatrix<T>) -> Result<SpdMatrix<T>> {
    spd::riccati_solve(cg, d)
}

/// Mahalanobis costs `C(i, j) = (xᵢ−zⱼ)ᵀ A (xᵢ−zⱼ)` via
/// `diag(XᵀAX)·1ᵀ + 1·diag(ZᵀAZ)ᵀ − 2XᵀAZ`.
pub fn cost_matrix<T: Scalar>(
    x: &PointCloud<T>,
    z: &PointCloud<T>,
    a: &SpdMatrix<T>,
) -> Result<CostMatrix<T>> {
    check_clouds(x, z)?;
    if a.dim() != x.dim() {
        return Err(Error::DimensionMismatch(format!(
            "metric is {}x{} but points have dimension {}",
            a.dim(),
            a.dim(),
            x.dim()
        )));
    }
    let (xm, zm, am) = (x.matrix(), z.matrix(), a.as_matrix());
    if a.is_identity() {
        return expanded_cost(xm, xm, zm, zm);
    }
    expanded_cost(xm, &(am * xm), zm, &(am * zm))
}

/// `Cᵢⱼ = xᵢᵀBxᵢ + zⱼᵀBzⱼ − 2xᵢᵀBzⱼ` from `bx = B·X` and `bz = B·Z`.
/// For `A = LᵀL` the arguments `(LX, LX, LZ, LZ)` give the same costs.
fn expanded_cost<T: Scalar>(
    xm: &DMatrix<T>,
    bx: &DMatrix<T>,
    zm: &DMatrix<T>,
    bz: &DMatrix<T>,
) -> Result<CostMatrix<T>> {
    let sq_x: Vec<T> = (0..xm.ncols()).map(|i| xm.column(i).dot(&bx.column(i))).collect();
    let sq_z: Vec<T> = (0..zm.ncols()).map(|j| zm.column(j).dot(&bz.column(j))).collect();
    let mut c = xm.transpose() * bz;
    let two = T::lit(2.0);
    for (j, mut col) in c.column_iter_mut().enumerate() {
        for (i, v) in col.iter_mut().enumerate() {
            *v = sq_x[i] + sq_z[j] - two * *v;
        }
    }
    CostMatrix::from_clamped(c)
}

/// `⟨γ, C_A⟩ + ⟨A⁻¹, D⟩ + λ·Σγᵢⱼ ln γᵢⱼ`.
pub fn objective<T: Scalar>(
    x: &PointCloud<T>,
    z: &PointCloud<T>,
    g: &TransportPlan<T>,
    a: &SpdMatrix<T>,
    d: &SpdMatrix<T>,
    lambda: T,
) -> Result<T> {
    let a_inv = a.inverse()?;
    objective_with_inverse(x, z, g, a, &a_inv, d, lambda)
}

fn objective_with_inverse<T: Scalar>(
    x: &PointCloud<T>,
    z: &PointCloud<T>,
    g: &TransportPlan<T>,
    a: &SpdMatrix<T>,
    a_inv: &SpdMatrix<T>,
    d: &SpdMatrix<T>,
    lambda: T,
) -> Result<T> {
    let cost = cost_matrix(x, z, a)?;
    Ok(g.cost(&cost)? + spd::trace_inner(a_inv, d)? + lambda * sinkhorn::entropy(g))
}

fn gram_sum<T: Scalar>(x: &PointCloud<T>, z: &PointCloud<T>) -> Result<SymMatrix<T>> {
    check_clouds(x, z)?;
    let (xm, zm) = (x.matrix(), z.matrix());
    SymMatrix::new(xm * xm.transpose() + zm * zm.transpose())
}

fn floored_gram<T: Scalar>(x: &PointCloud<T>, z: &PointCloud<T>, eps: &EpsPolicy<T>) -> Result<SpdMatrix<T>> {
    eps.validate()?;
    let w = gram_sum(x, z)?;
    let e = eps.resolve(w.as_matrix());
    spd::eigen_floor(&w, e, FloorPolicy::Always)
}

/// Regularizer `D` for the given choice.
pub fn make_d<T: Scalar>(
    choice: &DChoice<T>,
    x: &PointCloud<T>,
    z: &PointCloud<T>,
    eps: &EpsPolicy<T>,
) -> Result<SpdMatrix<T>> {
    check_clouds(x, z)?;
    match choice {
        DChoice::Identity => Ok(SpdMatrix::identity(x.dim())),
        DChoice::GramSum => floored_gram(x, z, eps),
        DChoice::GramSumInverse => floored_gram(x, z, eps)?.inverse(),
        DChoice::Custom(d) => {
            if d.dim() != x.dim() {
                return Err(Error::DimensionMismatch(format!(
                    "custom D is {}x{} but points have dimension {}",
                    d.dim(),
                    d.dim(),
                    x.dim()
                )));
            }
            SpdMatrix::new(d.as_matrix().clone())
        }
    }
}

/// Fixed baseline metric.
pub fn baseline_metric<T: Scalar>(
    kind: BaselineKind,
    x: &PointCloud<T>,
    z: &PointCloud<T>,
    eps: &EpsPolicy<T>,
) -> Result<SpdMatrix<T>> {
    check_clouds(x, z)?;
    match kind {
        BaselineKind::Identity => Ok(SpdMatrix::identity(x.dim())),
        BaselineKind::Gram => floored_gram(x, z, eps),
        BaselineKind::GramInverse => floored_gram(x, z, eps)?.inverse(),
    }
}

/// Metric iterate; with `D = I` only the eigendecomposition of `C_γ` is kept
/// and `A` is formed once at the end.
enum Metric<T: Scalar> {
    Explicit(SpdMatrix<T>),
    Factored(spd::EigenDecomposition<T>),
}

fn resolve_lambda<T: Scalar>(cfg: &GmlConfig<T>, cost: &CostMatrix<T>) -> T {
    match cfg.lambda_scale {
        LambdaScale::Absolute => cfg.sinkhorn.lambda,
        LambdaScale::MedianCost => {
            let med = cost.median();
            if med > T::zero() && med.is_finite() {
                cfg.sinkhorn.lambda * med
            } else {
                cfg.sinkhorn.lambda
            }
        }
    }
}

/// Alternating minimization from `γ⁰ = p·qᵀ`.
///
/// Each sweep sets `A ← riccati(C_γ + εI, D)` and then
/// `γ ← sinkhorn(C_A, p, q)`. `ε` is resolved once from the first `C_γ`. With
/// [`MetricMode::Frozen`] the metric step is skipped and a single Sinkhorn
/// solve on the fixed cost is returned.
pub fn fit<T: Scalar>(
    x: &PointCloud<T>,
    z: &PointCloud<T>,
    p: &Histogram<T>,
    q: &Histogram<T>,
    cfg: &GmlConfig<T>,
) -> Result<FitResult<T>> {
    cfg.validate()?;
    check_clouds(x, z)?;
    if p.len() != x.len() || q.len() != z.len() {
        return Err(Error::DimensionMismatch(format!(
            "histograms of size {} and {} for clouds of {} and {} points",
            p.len(),
            q.len(),
            x.len(),
            z.len()
        )));
    }
    let d = make_d(&cfg.d_choice, x, z, &cfg.eps)?;

    if let MetricMode::Frozen(a) = &cfg.metric {
        let cost = cost_matrix(x, z, a)?;
        let lambda = resolve_lambda(cfg, &cost);
        let sk = SinkhornConfig { lambda, ..cfg.sinkhorn };
        let plan = sinkhorn::solve(&cost, p, q, &sk)?;
        let a_inv = a.inverse()?;
        let value = plan.cost(&cost)? + spd::trace_inner(&a_inv, &d)? + lambda * sinkhorn::entropy(&plan);
        let sinkhorn_converged = plan.stats().converged;
        return Ok(FitResult {
            plan,
            metric: a.clone(),
            objective_history: vec![value],
            converged: true,
            iters_run: 1,
            lambda,
            eps: T::zero(),
            sinkhorn_converged,
        });
    }

    let mut plan = TransportPlan::product(p, q);
    let mut metric = Metric::Explicit(SpdMatrix::identity(x.dim()));
    let mut potentials = None;
    let mut history = Vec::with_capacity(cfg.outer_iters);
    let mut eps = None;
    let mut lambda = None;
    let mut converged = false;
    let mut sinkhorn_converged = true;
    let mut iters_run = 0;
    for _ in 0..cfg.outer_iters {
        let raw = cgamma_raw(x, z, plan.matrix())?;
        let e = *eps.get_or_insert_with(|| cfg.eps.resolve(&raw));
        let cg = SpdMatrix::from_trusted(add_diagonal(raw, e));
        let (next, cost, trace_a, regularizer) = if d.is_identity() {
            // A = C^{-1/2} = LᵀL with L = diag(λ^{-1/4}) Vᵀ
            let eig = spd::checked_eigen(&cg)?;
            let mut l = eig.eigenvectors.transpose();
            for (k, mut row) in l.row_iter_mut().enumerate() {
                row *= T::one() / eig.eigenvalues[k].sqrt().sqrt();
            }
            let (lx, lz) = (&l * x.matrix(), &l * z.matrix());
            let cost = expanded_cost(&lx, &lx, &lz, &lz)?;
            let trace_a = eig.eigenvalues.iter().fold(T::zero(), |s, &v| s + T::one() / v.sqrt());
            let trace_inv = eig.eigenvalues.iter().fold(T::zero(), |s, &v| s + v.sqrt());
            (Metric::Factored(eig), cost, trace_a, trace_inv)
        } else {
            let sol = spd::riccati_solve_with_inverse(&cg, &d)?;
            let cost = cost_matrix(x, z, &sol.solution)?;
            let regularizer = spd::trace_inner(&sol.inverse, &d)?;
            (Metric::Explicit(sol.solution.clone()), cost, sol.solution.trace(), regularizer)
        };
        let lam = *lambda.get_or_insert_with(|| resolve_lambda(cfg, &cost));
        let sk = SinkhornConfig { lambda: lam, ..cfg.sinkhorn };
        let (g, pot) = sinkhorn::solve_warm(&cost, p, q, &sk, potentials.as_ref())?;
        plan = g;
        potentials = Some(pot);
        sinkhorn_converged &= plan.stats().converged;
        metric = next;
        iters_run += 1;

        let value = plan.cost(&cost)? + e * trace_a + regularizer + lam * sinkhorn::entropy(&plan);
        // a zero tolerance disables early stopping
        let stop = cfg.objective_rtol > T::zero()
            && history
                .last()
                .is_some_and(|&prev: &T| (prev - value) <= cfg.objective_rtol * prev.abs());
        history.push(value);
        if stop {
            converged = true;
            break;
        }
    }
    let metric = match metric {
        Metric::Explicit(a) => a,
        Metric::Factored(eig) => SpdMatrix::from_trusted(eig.map(|l| T::one() / l.sqrt())),
    };

    Ok(FitResult {
        plan,
        metric,
        objective_history: history,
        converged,
        iters_run,
        lambda: lambda.unwrap_or(cfg.sinkhorn.lambda),
        eps: eps.unwrap_or_else(T::zero),
        sinkhorn_converged,
    })
}
