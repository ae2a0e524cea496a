use crate::scalar::Real;

use super::dense::DenseMatrix;
use super::sparse::SparseSymmetric;
use super::{axpy, dot, norm2};

pub trait LinearOperator<T: Real> {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[T], y: &mut [T]);
}

impl<T: Real> LinearOperator<T> for SparseSymmetric<T> {
    fn dim(&self) -> usize {
        SparseSymmetric::dim(self)
    }
    fn apply(&self, x: &[T], y: &mut [T]) {
        self.matvec_into(x, y);
    }
}

impl<T: Real> LinearOperator<T> for DenseMatrix<T> {
    fn dim(&self) -> usize {
        self.rows()
    }
    fn apply(&self, x: &[T], y: &mut [T]) {
        y.copy_from_slice(&self.matvec(x));
    }
}

pub trait Preconditioner<T: Real> {
    fn apply(&self, r: &[T], z: &mut [T]);
}

pub struct Identity;

impl<T: Real> Preconditioner<T> for Identity {
    fn apply(&self, r: &[T], z: &mut [T]) {
        z.copy_from_slice(r);
    }
}

/// Diagonal (Jacobi) preconditioner.
#[derive(Debug, Clone)]
pub struct Jacobi<T> {
    inv_diag: Vec<T>,
}

impl<T: Real> Jacobi<T> {
    pub fn new(diag: &[T]) -> Self {
        let inv_diag = diag
            .iter()
            .map(|&d| if d == T::zero() { T::one() } else { T::one() / d })
            .collect();
        Self { inv_diag }
    }

    pub fn from_matrix(m: &SparseSymmetric<T>) -> Self {
        Self::new(&m.diagonal())
    }
}

impl<T: Real> Preconditioner<T> for Jacobi<T> {
    fn apply(&self, r: &[T], z: &mut [T]) {
        for ((zi, &ri), &d) in z.iter_mut().zip(r).zip(&self.inv_diag) {
            *zi = ri * d;
        }
    }
}

#[derive(Debug, Clone)]
pub struct CgOutcome<T> {
    pub x: Vec<T>,
    pub iterations: usize,
    /// ‖b − Mx‖ / ‖b‖ at exit (the recursively updated residual).
    pub relative_residual: f64,
    pub converged: bool,
}

/// Preconditioned conjugate gradients from a zero initial guess.
pub fn cg_solve<T: Real>(
    m: &impl LinearOperator<T>,
    rhs: &[T],
    precond: &impl Preconditioner<T>,
    tol: f64,
    maxit: usize,
) -> CgOutcome<T> {
    let n = m.dim();
    assert_eq!(rhs.len(), n);
    let mut x = vec![T::zero(); n];
    let bnorm = norm2(rhs);
    if bnorm == T::zero() {
        return CgOutcome {
            x,
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
        };
    }
    let mut r = rhs.to_vec();
    let mut z = vec![T::zero(); n];
    precond.apply(&r, &mut z);
    let mut p = z.clone();
    let mut q = vec![T::zero(); n];
    let mut rz = dot(&r, &z);
    let mut rel = 1.0;
    for it in 1..=maxit {
        m.apply(&p, &mut q);
        let pq = dot(&p, &q);
        if !(pq > T::zero()) {
            return CgOutcome {
                x,
                iterations: it - 1,
                relative_residual: rel,
                converged: false,
            };
        }
        let alpha = rz / pq;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &q, &mut r);
        rel = (norm2(&r) / bnorm).to_f64();
        if rel <= tol {
            return CgOutcome {
                x,
                iterations: it,
                relative_residual: rel,
                converged: true,
            };
        }
        precond.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, &zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    CgOutcome {
        x,
        iterations: maxit,
        relative_residual: rel,
        converged: false,
    }
}
