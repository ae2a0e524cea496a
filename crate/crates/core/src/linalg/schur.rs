use crate::error::Result;
use crate::scalar::Real;

use super::cg::{cg_solve, Jacobi, LinearOperator};
use super::skyline::SkylineLdl;
use super::sparse::{CsrMatrix, SparseSymmetric};

/// Symmetric 2×2 block system `[[A11, A12], [A21, A22]]` split after the
/// first `n1` unknowns.
#[derive(Debug, Clone)]
pub struct BlockSystem<T> {
    full: SparseSymmetric<T>,
    n1: usize,
    a11: SparseSymmetric<T>,
    a22: SparseSymmetric<T>,
    /// Rows: second block, columns: first block.
    a21: CsrMatrix<T>,
}

impl<T: Real> BlockSystem<T> {
    pub fn split(full: SparseSymmetric<T>, n1: usize) -> Self {
        let n = full.dim();
        assert!(n1 <= n);
        let first: Vec<usize> = (0..n1).collect();
        let second: Vec<usize> = (n1..n).collect();
        let a11 = full.submatrix(&first);
        let a22 = full.submatrix(&second);
        let a21 = CsrMatrix::from_triplets(
            n - n1,
            n1,
            full.iter_lower().filter(|&(i, j, _)| i >= n1 && j < n1).map(|(i, j, v)| (i - n1, j, v)),
        );
        Self {
            full,
            n1,
            a11,
            a22,
            a21,
        }
    }

    pub fn dim(&self) -> usize {
        self.full.dim()
    }

    pub fn first_block_dim(&self) -> usize {
        self.n1
    }

    pub fn matrix(&self) -> &SparseSymmetric<T> {
        &self.full
    }
}

#[derive(Debug, Clone)]
pub struct SchurOutcome<T> {
    /// Solution of the full system (first block followed by second block).
    pub x: Vec<T>,
    pub cg_iterations: usize,
    pub cg_converged: bool,
    /// True if the second block could not be factored and a direct solve of
    /// the whole system was used instead.
    pub fell_back: bool,
}

struct SchurOperator<'a, T> {
    sys: &'a BlockSystem<T>,
    a22: &'a SkylineLdl<T>,
}

impl<T: Real> LinearOperator<T> for SchurOperator<'_, T> {
    fn dim(&self) -> usize {
        self.sys.n1
    }

    fn apply(&self, x: &[T], y: &mut [T]) {
        self.sys.a11.matvec_into(x, y);
        if self.sys.a22.dim() == 0 {
            return;
        }
        let mut w = self.sys.a21.matvec(x);
        self.a22.solve_in_place(&mut w);
        let back = self.sys.a21.transpose_matvec(&w);
        for (yi, b) in y.iter_mut().zip(back) {
            *yi -= b;
        }
    }
}

/// Solves the block system by eliminating the second block with a direct
/// factorization and running Jacobi-preconditioned CG on the Schur complement
/// `A11 − A12 A22⁻¹ A21`.
pub fn schur_solve<T: Real>(sys: &BlockSystem<T>, rhs: &[T], tol: f64, maxit: usize) -> Result<SchurOutcome<T>> {
    let n = sys.dim();
    let n1 = sys.n1;
    assert_eq!(rhs.len(), n);
    let a22 = match SkylineLdl::factor(&sys.a22, "enrichment block") {
        Ok(f) => f,
        Err(err) => {
            log::warn!("{err}; falling back to a direct solve of the whole system");
            let f = SkylineLdl::factor(&sys.full, "full multiscale system")?;
            let mut x = f.solve(rhs);
            let r: Vec<T> = rhs.iter().zip(sys.full.matvec(&x)).map(|(&b, a)| b - a).collect();
            for (xi, d) in x.iter_mut().zip(f.solve(&r)) {
                *xi += d;
            }
            return Ok(SchurOutcome {
                x,
                cg_iterations: 0,
                cg_converged: true,
                fell_back: true,
            });
        }
    };
    let (b1, b2) = rhs.split_at(n1);
    // Reduced right-hand side b1 − A12 A22⁻¹ b2.
    let mut t = b2.to_vec();
    if !t.is_empty() {
        a22.solve_in_place(&mut t);
    }
    let mut reduced = b1.to_vec();
    if !t.is_empty() {
        for (r, v) in reduced.iter_mut().zip(sys.a21.transpose_matvec(&t)) {
            *r -= v;
        }
    }
    let op = SchurOperator { sys, a22: &a22 };
    let pc = Jacobi::from_matrix(&sys.a11);
    let out = cg_solve(&op, &reduced, &pc, tol, maxit);
    let x1 = out.x;
    let mut x2: Vec<T> = b2.to_vec();
    if !x2.is_empty() {
        for (r, v) in x2.iter_mut().zip(sys.a21.matvec(&x1)) {
            *r -= v;
        }
        a22.solve_in_place(&mut x2);
    }
    let mut x = x1;
    x.extend(x2);
    Ok(SchurOutcome {
        x,
        cg_iterations: out.iterations,
        cg_converged: out.converged,
        fell_back: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{factorize, FactorKind};

    fn spd(n: usize) -> SparseSymmetric<f64> {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 4.0 + i as f64 * 0.1));
            if i + 1 < n {
                t.push((i + 1, i, -1.0));
            }
            if i + 4 < n {
                t.push((i + 4, i, 0.5));
            }
        }
        SparseSymmetric::from_triplets(n, t)
    }

    #[test]
    fn matches_direct_solve() {
        let m = spd(20);
        let b: Vec<f64> = (0..20).map(|i| (i as f64).cos()).collect();
        let direct = factorize(&m, FactorKind::Spd, "full").unwrap().solve_refined(&m, &b);
        let sys = BlockSystem::split(m, 8);
        let out = schur_solve(&sys, &b, 1e-14, 100).unwrap();
        assert!(!out.fell_back && out.cg_converged);
        for (a, e) in out.x.iter().zip(&direct) {
            assert!((a - e).abs() < 1e-10);
        }
    }

    #[test]
    fn empty_second_block_is_plain_solve() {
        let m = spd(6);
        let b = vec![1.0; 6];
        let sys = BlockSystem::split(m.clone(), 6);
        let out = schur_solve(&sys, &b, 1e-14, 50).unwrap();
        let r: Vec<f64> = m.matvec(&out.x).iter().zip(&b).map(|(a, b)| a - b).collect();
        assert!(r.iter().all(|v| v.abs() < 1e-12));
    }
}
