//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! All matrix code is written against [`Scalar`], which is implemented for
//! `f32` and `f64`. The trait bundles the nalgebra field operations with the
//! one kernel nalgebra is slow at (dense symmetric eigendecomposition), which
//! is delegated to faer.

use std::fmt::{Debug, Display};

use nalgebra::{DMatrix, DVector, RealField};
use num_traits::{FromPrimitive, ToPrimitive};

/// Real floating-point type usable by the solvers.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Display + Debug + Send + Sync + 'static
{
    /// Machine epsilon of the type.
    const EPSILON: Self;

    /// Symmetric eigendecomposition. Only the lower triangle of `m` is read.
    ///
    /// Eigenvalues are returned in ascending order with matching
    /// orthonormal eigenvector columns.
    fn symmetric_eigen(m: &DMatrix<Self>) -> (DVector<Self>, DMatrix<Self>);

    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    /// Lossy conversion from a count.
    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            const EPSILON: Self = <$t>::EPSILON;

            fn symmetric_eigen(m: &DMatrix<Self>) -> (DVector<Self>, DMatrix<Self>) {
                let n = m.nrows();
                debug_assert_eq!(n, m.ncols());
                if n == 0 {
                    return (DVector::zeros(0), DMatrix::zeros(0, 0));
                }
                let fm = faer::Mat::<$t>::from_fn(n, n, |i, j| {
                    if i >= j {
                        m[(i, j)]
                    } else {
                        m[(j, i)]
                    }
                });
                let evd = fm.selfadjoint_eigendecomposition(faer::Side::Lower);
                let s = evd.s().column_vector();
                let u = evd.u();
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&a, &b| s.read(a).total_cmp(&s.read(b)));
                let values = DVector::from_fn(n, |k, _| s.read(order[k]));
                let vectors = DMatrix::from_fn(n, n, |i, k| u.read(i, order[k]));
                (values, vectors)
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);

/// Runs every eigendecomposition on the calling thread from now on. By
/// default faer spreads large decompositions over all cores, and the
/// rounding of the result may then depend on the thread count.
pub fn force_single_thread() {
    faer::set_global_parallelism(faer::Parallelism::None);
}
