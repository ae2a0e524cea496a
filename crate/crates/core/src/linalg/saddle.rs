use crate::error::{Error, Result};
use crate::scalar::Real;

use super::dense::{DenseLdl, DenseMatrix};
use super::skyline::SkylineLdl;
use super::sparse::{CsrMatrix, SparseSymmetric};

/// Solver for `[[A, Cᵀ], [C, 0]] (x, μ) = (f, g)` with `A` symmetric positive
/// definite and `C` of full row rank.
///
/// Uses the range-space method: `A` is factored sparsely and the Schur
/// complement `S = C A⁻¹ Cᵀ` densely. Every solve costs two `A` solves and one
/// `S` solve, and is followed by one step of iterative refinement on the full
/// system.
#[derive(Debug, Clone)]
pub struct SaddlePointSolver<T> {
    a: SparseSymmetric<T>,
    c: CsrMatrix<T>,
    a_fact: SkylineLdl<T>,
    s_fact: Option<DenseLdl<T>>,
}

impl<T: Real> SaddlePointSolver<T> {
    pub fn new(a: SparseSymmetric<T>, c: CsrMatrix<T>, system: &str) -> Result<Self> {
        let n = a.dim();
        if c.cols() != n {
            return Err(Error::InvalidInput(format!(
                "{system}: constraint matrix has {} columns, stiffness block has dimension {n}",
                c.cols()
            )));
        }
        let m = c.rows();
        if m > n {
            return Err(Error::InvalidInput(format!(
                "{system}: {m} constraints for {n} unknowns are overdetermined"
            )));
        }
        let a_fact = SkylineLdl::factor(&a, system)?;
        let s_fact = if m == 0 {
            None
        } else {
            let mut s = DenseMatrix::zeros(m, m);
            let mut col = vec![T::zero(); n];
            for k in 0..m {
                col.iter_mut().for_each(|v| *v = T::zero());
                for (j, v) in c.row(k) {
                    col[j] = v;
                }
                a_fact.solve_in_place(&mut col);
                let sk = c.matvec(&col);
                for (i, v) in sk.into_iter().enumerate() {
                    s[(i, k)] = v;
                }
            }
            // Symmetrize away roundoff before the Cholesky-type factorization.
            for i in 0..m {
                for j in 0..i {
                    let avg = (s[(i, j)] + s[(j, i)]) * T::from_f64(0.5);
                    s[(i, j)] = avg;
                    s[(j, i)] = avg;
                }
            }
            Some(DenseLdl::factor(&s, &format!("{system} (constraint Schur complement)"))?)
        };
        Ok(Self { a, c, a_fact, s_fact })
    }

    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    pub fn constraint_count(&self) -> usize {
        self.c.rows()
    }

    pub fn stiffness(&self) -> &SparseSymmetric<T> {
        &self.a
    }

    pub fn constraints(&self) -> &CsrMatrix<T> {
        &self.c
    }

    fn solve_once(&self, f: &[T], g: &[T]) -> (Vec<T>, Vec<T>) {
        let mut y = f.to_vec();
        self.a_fact.solve_in_place(&mut y);
        let Some(s) = &self.s_fact else {
            return (y, Vec::new());
        };
        let cy = self.c.matvec(&y);
        let rhs: Vec<T> = cy.iter().zip(g).map(|(&a, &b)| a - b).collect();
        let mu = s.solve(&rhs);
        let ctmu = self.c.transpose_matvec(&mu);
        let mut x: Vec<T> = f.iter().zip(&ctmu).map(|(&a, &b)| a - b).collect();
        self.a_fact.solve_in_place(&mut x);
        (x, mu)
    }

    /// Solves the full system, returning `(x, μ)`.
    pub fn solve_full(&self, f: &[T], g: &[T]) -> (Vec<T>, Vec<T>) {
        assert_eq!(f.len(), self.dim());
        assert_eq!(g.len(), self.constraint_count());
        let (mut x, mut mu) = self.solve_once(f, g);
        let (r1, r2) = self.residual(&x, &mu, f, g);
        let (dx, dmu) = self.solve_once(&r1, &r2);
        for (a, b) in x.iter_mut().zip(dx) {
            *a += b;
        }
        for (a, b) in mu.iter_mut().zip(dmu) {
            *a += b;
        }
        (x, mu)
    }

    /// Solves with homogeneous constraints `C x = 0`.
    pub fn solve(&self, f: &[T]) -> Vec<T> {
        let g = vec![T::zero(); self.constraint_count()];
        self.solve_full(f, &g).0
    }

    /// Residual `(f − A x − Cᵀ μ, g − C x)`.
    pub fn residual(&self, x: &[T], mu: &[T], f: &[T], g: &[T]) -> (Vec<T>, Vec<T>) {
        let ax = self.a.matvec(x);
        let ctmu = if mu.is_empty() {
            vec![T::zero(); x.len()]
        } else {
            self.c.transpose_matvec(mu)
        };
        let r1 = f.iter().zip(ax).zip(ctmu).map(|((&fi, a), c)| fi - a - c).collect();
        let cx = self.c.matvec(x);
        let r2 = g.iter().zip(cx).map(|(&gi, c)| gi - c).collect();
        (r1, r2)
    }
}
