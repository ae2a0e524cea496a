use crate::error::Result;
use crate::scalar::Real;

use super::dense::BunchKaufman;
use super::skyline::SkylineLdl;
use super::sparse::SparseSymmetric;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorKind {
    Spd,
    SymmetricIndefinite,
}

/// A reusable direct factorization.
///
/// SPD matrices use the sparse skyline LDLᵀ; indefinite ones are factored
/// densely with Bunch–Kaufman pivoting, which is only meant for small systems.
#[derive(Debug, Clone)]
pub enum Factorization<T> {
    Spd(SkylineLdl<T>),
    Indefinite(BunchKaufman<T>),
}

pub fn factorize<T: Real>(m: &SparseSymmetric<T>, kind: FactorKind, system: &str) -> Result<Factorization<T>> {
    Ok(match kind {
        FactorKind::Spd => Factorization::Spd(SkylineLdl::factor(m, system)?),
        FactorKind::SymmetricIndefinite => Factorization::Indefinite(BunchKaufman::factor(&m.to_dense(), system)?),
    })
}

impl<T: Real> Factorization<T> {
    pub fn dim(&self) -> usize {
        match self {
            Factorization::Spd(f) => f.dim(),
            Factorization::Indefinite(f) => f.dim(),
        }
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        match self {
            Factorization::Spd(f) => f.solve(b),
            Factorization::Indefinite(f) => f.solve(b),
        }
    }

    /// Solve followed by one step of iterative refinement against `m`.
    pub fn solve_refined(&self, m: &SparseSymmetric<T>, b: &[T]) -> Vec<T> {
        let mut x = self.solve(b);
        let r: Vec<T> = b.iter().zip(m.matvec(&x)).map(|(&bi, ai)| bi - ai).collect();
        let dx = self.solve(&r);
        for (xi, d) in x.iter_mut().zip(dx) {
            *xi += d;
        }
        x
    }
}
