//! Random instance generators and brute-force oracles for tests.
//!
//! Nothing in here is used by the solvers; the naive loops are the
//! independent references that the fast paths are checked against.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::cloud::PointCloud;
use crate::spd::SpdMatrix;

/// Entries uniform in [-1, 1).
pub fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

/// Random orthogonal matrix from the QR factor of a random square matrix.
pub fn random_orthogonal(d: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    random_matrix(d, d, rng).qr().q()
}

/// Random SPD matrix with eigenvalues log-spaced in `[1, cond]` and a random
/// overall scale in `[0.1, 10]`.
pub fn random_spd(d: usize, cond: f64, rng: &mut impl Rng) -> SpdMatrix<f64> {
    let q = random_orthogonal(d, rng);
    let scale: f64 = 10f64.powf(rng.gen_range(-1.0..1.0));
    let eig = DVector::from_fn(d, |i, _| {
        let t = if d > 1 { i as f64 / (d - 1) as f64 } else { 0.0 };
        scale * cond.powf(t)
    });
    let m = &q * DMatrix::from_diagonal(&eig) * q.transpose();
    SpdMatrix::new(m).expect("random SPD")
}

/// Random well-conditioned invertible matrix: `Q · diag(s)` with `s` in [0.5, 2].
pub fn random_invertible(d: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let q = random_orthogonal(d, rng);
    let s = DVector::from_fn(d, |_, _| rng.gen_range(0.5..2.0));
    q * DMatrix::from_diagonal(&s) * random_orthogonal(d, rng)
}

/// Random cloud of `k` points in `R^d`, entries uniform in [-1, 1).
pub fn random_cloud(d: usize, k: usize, rng: &mut impl Rng) -> PointCloud<f64> {
    PointCloud::new(random_matrix(d, k, rng))
}

/// Random nonnegative matrix normalized to total mass one.
pub fn random_plan(m: usize, n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(m, n, |_, _| rng.gen_range(0.0..1.0));
    let total = g.sum();
    g / total
}

/// `‖a − b‖_F / ‖b‖_F`.
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// Per-pair quadratic forms `(xᵢ−zⱼ)ᵀ A (xᵢ−zⱼ)`.
pub fn naive_cost(x: &DMatrix<f64>, z: &DMatrix<f64>, a: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(x.ncols(), z.ncols(), |i, j| {
        let diff = x.column(i) - z.column(j);
        let mut acc = 0.0;
        for r in 0..diff.len() {
            for c in 0..diff.len() {
                acc += diff[r] * a[(r, c)] * diff[c];
            }
        }
        acc
    })
}

/// `Σᵢⱼ γᵢⱼ (xᵢ−zⱼ)(xᵢ−zⱼ)ᵀ` by direct summation.
pub fn naive_cgamma(x: &DMatrix<f64>, z: &DMatrix<f64>, plan: &DMatrix<f64>) -> DMatrix<f64> {
    let d = x.nrows();
    let mut out = DMatrix::zeros(d, d);
    for i in 0..x.ncols() {
        for j in 0..z.ncols() {
            let diff = x.column(i) - z.column(j);
            for r in 0..d {
                for c in 0..d {
                    out[(r, c)] += plan[(i, j)] * diff[r] * diff[c];
                }
            }
        }
    }
    out
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for k in 0..used.len() {
            if !used[k] {
                used[k] = true;
                prefix.push(k);
                go(prefix, used, out);
                prefix.pop();
                used[k] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Minimum and maximum of `Σᵢ C[i, σ(i)] / n` over all permutations σ.
pub fn permutation_cost_range(cost: &DMatrix<f64>) -> (f64, f64) {
    let n = cost.nrows();
    permutations(n)
        .iter()
        .map(|p| p.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum::<f64>() / n as f64)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
            (lo.min(c), hi.max(c))
        })
}
