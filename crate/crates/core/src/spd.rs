//! Symmetric and symmetric positive definite matrices.
//!
//! Every matrix function here (square root, inverse square root, inverse)
//! is evaluated through a symmetric eigendecomposition `V diag(f(λ)) Vᵀ`,
//! which yields the principal branch directly. Inputs are symmetrized on
//! construction and outputs are symmetrized again before they are returned,
//! so values stay exactly symmetric through long alternating loops.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Relative floor below which an eigenvalue counts as non-positive.
const POSITIVITY_RTOL: f64 = 1e-12;

/// Square matrix that equals its own transpose bit for bit.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix<T: Scalar>(DMatrix<T>);

/// Symmetric matrix with strictly positive spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct SpdMatrix<T: Scalar>(DMatrix<T>);

/// Spectral decomposition of a symmetric matrix, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct EigenDecomposition<T: Scalar> {
    pub eigenvalues: DVector<T>,
    pub eigenvectors: DMatrix<T>,
}

/// How [`eigen_floor`] applies its lift.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FloorPolicy {
    /// Always return `S + eps·I`.
    #[default]
    Always,
    /// Add `eps·I` only when the smallest eigenvalue is `<= eps`.
    Conditional,
}

/// Matrices known to be symmetric.
pub trait Symmetric<T: Scalar> {
    fn matrix(&self) -> &DMatrix<T>;

    fn dim(&self) -> usize {
        self.matrix().nrows()
    }
}

impl<T: Scalar> Symmetric<T> for SymMatrix<T> {
    fn matrix(&self) -> &DMatrix<T> {
        &self.0
    }
}

impl<T: Scalar> Symmetric<T> for SpdMatrix<T> {
    fn matrix(&self) -> &DMatrix<T> {
        &self.0
    }
}

fn check_square<T: Scalar>(m: &DMatrix<T>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(())
}

fn check_same_dim(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch(format!("{what}: {a} vs {b}")));
    }
    Ok(())
}

/// Symmetric part `(M + Mᵀ)/2` in place.
fn symmetrize_in_place<T: Scalar>(m: &mut DMatrix<T>) {
    let n = m.nrows();
    let half = T::lit(0.5);
    for j in 0..n {
        for i in (j + 1)..n {
            let v = (m[(i, j)] + m[(j, i)]) * half;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Returns `(M + Mᵀ)/2`.
pub fn symmetrize<T: Scalar>(m: &DMatrix<T>) -> Result<SymMatrix<T>> {
    check_square(m)?;
    let mut out = m.clone();
    symmetrize_in_place(&mut out);
    Ok(SymMatrix(out))
}

fn positivity_floor<T: Scalar>(eigenvalues: &DVector<T>) -> T {
    let top = eigenvalues.iter().copied().fold(T::one(), |a, b| a.max(b));
    T::lit(POSITIVITY_RTOL) * top
}

fn check_positive<T: Scalar>(eigenvalues: &DVector<T>) -> Result<()> {
    let floor = positivity_floor(eigenvalues);
    // eigenvalues are ascending; NaN must fail too
    match eigenvalues.iter().next() {
        Some(&low) if low >= floor => Ok(()),
        Some(&low) => Err(Error::Positivity {
            eigenvalue: low.as_f64(),
            floor: floor.as_f64(),
        }),
        None => Ok(()),
    }
}

impl<T: Scalar> SymMatrix<T> {
    /// Symmetrizes `m`; fails when it is not square.
    pub fn new(m: DMatrix<T>) -> Result<Self> {
        check_square(&m)?;
        let mut m = m;
        symmetrize_in_place(&mut m);
        Ok(Self(m))
    }

    pub fn zeros(d: usize) -> Self {
        Self(DMatrix::zeros(d, d))
    }

    pub fn identity(d: usize) -> Self {
        Self(DMatrix::identity(d, d))
    }

    pub fn as_matrix(&self) -> &DMatrix<T> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<T> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn eigen(&self) -> EigenDecomposition<T> {
        EigenDecomposition::of(self)
    }

    /// Validates positive definiteness.
    pub fn into_spd(self) -> Result<SpdMatrix<T>> {
        let eig = self.eigen();
        check_positive(&eig.eigenvalues)?;
        Ok(SpdMatrix(self.0))
    }
}

impl<T: Scalar> SpdMatrix<T> {
    /// Symmetrizes `m` and checks that every eigenvalue clears the floor.
    pub fn new(m: DMatrix<T>) -> Result<Self> {
        SymMatrix::new(m)?.into_spd()
    }

    /// Wraps a matrix that is SPD by construction, skipping the spectral check.
    pub(crate) fn from_trusted(mut m: DMatrix<T>) -> Self {
        symmetrize_in_place(&mut m);
        Self(m)
    }

    pub fn identity(d: usize) -> Self {
        Self(DMatrix::identity(d, d))
    }

    pub fn scaled_identity(d: usize, c: T) -> Result<Self> {
        if !(c > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "scale must be positive, got {c}"
            )));
        }
        Ok(Self(DMatrix::identity(d, d) * c))
    }

    pub fn from_diagonal(diag: &[T]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn as_matrix(&self) -> &DMatrix<T> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<T> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn to_sym(&self) -> SymMatrix<T> {
        SymMatrix(self.0.clone())
    }

    pub fn is_identity(&self) -> bool {
        let n = self.dim();
        (0..n).all(|j| {
            (0..n).all(|i| {
                let want = if i == j { T::one() } else { T::zero() };
                self.0[(i, j)] == want
            })
        })
    }

    pub fn eigen(&self) -> EigenDecomposition<T> {
        EigenDecomposition::of_matrix(&self.0)
    }

    pub fn trace(&self) -> T {
        self.0.trace()
    }

    /// Inverse through the eigendecomposition.
    pub fn inverse(&self) -> Result<Self> {
        let eig = self.eigen();
        check_positive(&eig.eigenvalues)?;
        Ok(Self(eig.map(|l| T::one() / l)))
    }

    /// `c · self` for positive `c`.
    pub fn scale(&self, c: T) -> Result<Self> {
        if !(c > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "scale must be positive, got {c}"
            )));
        }
        Ok(Self(&self.0 * c))
    }
}

impl<T: Scalar> AsRef<DMatrix<T>> for SymMatrix<T> {
    fn as_ref(&self) -> &DMatrix<T> {
        &self.0
    }
}

impl<T: Scalar> AsRef<DMatrix<T>> for SpdMatrix<T> {
    fn as_ref(&self) -> &DMatrix<T> {
        &self.0
    }
}

impl<T: Scalar> From<SpdMatrix<T>> for SymMatrix<T> {
    fn from(s: SpdMatrix<T>) -> Self {
        SymMatrix(s.0)
    }
}

impl<T: Scalar> EigenDecomposition<T> {
    pub fn of(s: &SymMatrix<T>) -> Self {
        Self::of_matrix(&s.0)
    }

    fn of_matrix(m: &DMatrix<T>) -> Self {
        let (eigenvalues, eigenvectors) = T::symmetric_eigen(m);
        Self {
            eigenvalues,
            eigenvectors,
        }
    }

    pub fn min_eigenvalue(&self) -> Option<T> {
        self.eigenvalues.iter().next().copied()
    }

    /// `V diag(f(λ)) Vᵀ`, symmetrized.
    pub fn map(&self, f: impl Fn(T) -> T) -> DMatrix<T> {
        let mut scaled = self.eigenvectors.clone();
        for (k, mut col) in scaled.column_iter_mut().enumerate() {
            col *= f(self.eigenvalues[k]);
        }
        let mut out = scaled * self.eigenvectors.transpose();
        symmetrize_in_place(&mut out);
        out
    }

    pub fn reconstruct(&self) -> DMatrix<T> {
        self.map(|l| l)
    }
}

pub(crate) fn checked_eigen<T: Scalar>(s: &SpdMatrix<T>) -> Result<EigenDecomposition<T>> {
    let eig = s.eigen();
    check_positive(&eig.eigenvalues)?;
    Ok(eig)
}

/// Principal square root.
pub fn spd_sqrt<T: Scalar>(s: &SpdMatrix<T>) -> Result<SpdMatrix<T>> {
    let eig = checked_eigen(s)?;
    Ok(SpdMatrix(eig.map(|l| l.sqrt())))
}

/// Inverse of the principal square root.
pub fn spd_inv_sqrt<T: Scalar>(s: &SpdMatrix<T>) -> Result<SpdMatrix<T>> {
    let eig = checked_eigen(s)?;
    Ok(SpdMatrix(eig.map(|l| T::one() / l.sqrt())))
}

/// Solution of `A·C·A = D` together with its inverse.
#[derive(Clone, Debug)]
pub struct RiccatiSolution<T: Scalar> {
    pub solution: SpdMatrix<T>,
    pub inverse: SpdMatrix<T>,
}

/// Unique SPD `A` with `A·C·A = D`, plus `A⁻¹`.
///
/// `A = C^{-1/2} (C^{1/2} D C^{1/2})^{1/2} C^{-1/2}` and
/// `A⁻¹ = C^{1/2} (C^{1/2} D C^{1/2})^{-1/2} C^{1/2}`. When `D` is exactly the
/// identity the inner root collapses and `A = C^{-1/2}`.
pub fn riccati_solve_with_inverse<T: Scalar>(
    c: &SpdMatrix<T>,
    d: &SpdMatrix<T>,
) -> Result<RiccatiSolution<T>> {
    check_same_dim(c.dim(), d.dim(), "riccati_solve")?;
    let eig_c = checked_eigen(c)?;
    let c_half = eig_c.map(|l| l.sqrt());
    let c_inv_half = eig_c.map(|l| T::one() / l.sqrt());
    if d.is_identity() {
        return Ok(RiccatiSolution {
            solution: SpdMatrix(c_inv_half),
            inverse: SpdMatrix(c_half),
        });
    }
    let inner = SpdMatrix::from_trusted(&c_half * d.as_matrix() * &c_half);
    let eig_inner = checked_eigen(&inner)?;
    let inner_half = eig_inner.map(|l| l.sqrt());
    let inner_inv_half = eig_inner.map(|l| T::one() / l.sqrt());
    Ok(RiccatiSolution {
        solution: SpdMatrix::from_trusted(&c_inv_half * inner_half * &c_inv_half),
        inverse: SpdMatrix::from_trusted(&c_half * inner_inv_half * &c_half),
    })
}

/// Unique SPD `A` with `A·C·A = D`.
pub fn riccati_solve<T: Scalar>(c: &SpdMatrix<T>, d: &SpdMatrix<T>) -> Result<SpdMatrix<T>> {
    riccati_solve_with_inverse(c, d).map(|s| s.solution)
}

/// Affine-invariant geometric mean `P^{1/2} (P^{-1/2} Q P^{-1/2})^{1/2} P^{1/2}`,
/// the midpoint of the geodesic joining `P` and `Q`.
pub fn geometric_mean<T: Scalar>(p: &SpdMatrix<T>, q: &SpdMatrix<T>) -> Result<SpdMatrix<T>> {
    check_same_dim(p.dim(), q.dim(), "geometric_mean")?;
    let eig_p = checked_eigen(p)?;
    let p_half = eig_p.map(|l| l.sqrt());
    let p_inv_half = eig_p.map(|l| T::one() / l.sqrt());
    let inner = SpdMatrix::from_trusted(&p_inv_half * q.as_matrix() * &p_inv_half);
    let inner_half = spd_sqrt(&inner)?;
    Ok(SpdMatrix::from_trusted(
        &p_half * inner_half.as_matrix() * &p_half,
    ))
}

/// Lifts `S` to an SPD matrix by adding `eps·I`.
pub fn eigen_floor<T: Scalar>(
    s: &SymMatrix<T>,
    eps: T,
    policy: FloorPolicy,
) -> Result<SpdMatrix<T>> {
    if !(eps > T::zero()) {
        return Err(Error::InvalidParameter(format!(
            "eps must be positive, got {eps}"
        )));
    }
    let lifted = || {
        let mut m = s.0.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += eps;
        }
        SymMatrix(m)
    };
    match policy {
        FloorPolicy::Always => lifted().into_spd(),
        FloorPolicy::Conditional => {
            let eig = s.eigen();
            match eig.min_eigenvalue() {
                Some(low) if low > eps => {
                    check_positive(&eig.eigenvalues)?;
                    Ok(SpdMatrix(s.0.clone()))
                }
                _ => lifted().into_spd(),
            }
        }
    }
}

/// Frobenius inner product `Σᵢⱼ AᵢⱼBᵢⱼ`, equal to `trace(A·B)` for symmetric arguments.
pub fn trace_inner<T: Scalar>(a: &impl Symmetric<T>, b: &impl Symmetric<T>) -> Result<T> {
    check_same_dim(a.dim(), b.dim(), "trace_inner")?;
    Ok(a.matrix().dot(b.matrix()))
}
