//! Sparse and dense linear algebra used by the discretization.

mod cg;
mod dense;
mod factor;
mod lanczos;
mod saddle;
mod schur;
mod skyline;
mod sparse;

pub use cg::{cg_solve, CgOutcome, Identity, Jacobi, LinearOperator, Preconditioner};
pub use dense::{BunchKaufman, DenseLdl, DenseMatrix};
pub use factor::{factorize, Factorization, FactorKind};
pub use lanczos::condition_estimate;
pub use saddle::SaddlePointSolver;
pub use schur::{schur_solve, BlockSystem, SchurOutcome};
pub use skyline::{reverse_cuthill_mckee, SkylineLdl};
pub use sparse::{CsrMatrix, SparseSymmetric};

use crate::scalar::Real;

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn norm2<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

pub fn norm_inf<T: Real>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
}

/// `y += alpha * x`
pub fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x - y).collect()
}

pub fn scale<T: Real>(alpha: T, x: &mut [T]) {
    for xi in x {
        *xi *= alpha;
    }
}

pub fn to_f64<T: Real>(x: &[T]) -> Vec<f64> {
    x.iter().map(|v| v.to_f64()).collect()
}

pub fn from_f64<T: Real>(x: &[f64]) -> Vec<T> {
    x.iter().map(|&v| T::from_f64(v)).collect()
}
