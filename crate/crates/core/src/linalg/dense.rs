use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    let b = other[(k, j)];
                    out[(i, j)] += a * b;
                }
            }
        }
        out
    }
}

impl<T> Index<(usize, usize)> for DenseMatrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for DenseMatrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// LDLᵀ of a dense symmetric positive definite matrix (no pivoting).
#[derive(Debug, Clone)]
pub struct DenseLdl<T> {
    n: usize,
    /// Unit lower factor, row-major, strictly-lower part used.
    l: Vec<T>,
    d: Vec<T>,
}

impl<T: Real> DenseLdl<T> {
    pub fn factor(a: &DenseMatrix<T>, system: &str) -> Result<Self> {
        assert_eq!(a.rows(), a.cols());
        let n = a.rows();
        let mut l = vec![T::zero(); n * n];
        let mut d = vec![T::zero(); n];
        let mut g = vec![T::zero(); n];
        for i in 0..n {
            for j in 0..i {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= g[k] * l[j * n + k];
                }
                g[j] = s;
            }
            let mut di = a[(i, i)];
            for j in 0..i {
                let lij = g[j] / d[j];
                l[i * n + j] = lij;
                di -= g[j] * lij;
            }
            if !(di > T::zero()) || !di.is_finite() {
                return Err(Error::Factorization {
                    system: system.to_string(),
                    index: i,
                    value: di.to_f64(),
                });
            }
            d[i] = di;
        }
        Ok(Self { n, l, d })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut x = b.to_vec();
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= self.l[i * n + k] * x[k];
            }
            x[i] = s;
        }
        for i in 0..n {
            x[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * x[k];
            }
            x[i] = s;
        }
        x
    }

    /// Pivots of the factorization (all positive).
    pub fn pivots(&self) -> &[T] {
        &self.d
    }
}

/// Block diagonal entry of a Bunch–Kaufman factorization.
#[derive(Debug, Clone, Copy)]
enum Pivot<T> {
    One(T),
    /// 2×2 block `[[a, b], [b, c]]` starting at this index.
    Two(T, T, T),
    /// Second row of a 2×2 block.
    Tail,
}

/// Symmetric indefinite factorization `P A Pᵀ = L D Lᵀ` with Bunch–Kaufman
/// pivoting (1×1 and 2×2 diagonal blocks).
#[derive(Debug, Clone)]
pub struct BunchKaufman<T> {
    n: usize,
    /// `perm[i]` is the original index at permuted position `i`.
    perm: Vec<usize>,
    l: Vec<T>,
    pivots: Vec<Pivot<T>>,
}

impl<T: Real> BunchKaufman<T> {
    pub fn factor(a: &DenseMatrix<T>, system: &str) -> Result<Self> {
        assert_eq!(a.rows(), a.cols());
        let n = a.rows();
        // Full symmetric working copy; trailing block updated on both triangles.
        let mut w: Vec<T> = (0..n * n).map(|k| a[(k / n, k % n)]).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut pivots = vec![Pivot::Tail; n];
        let alpha = T::from_f64((1.0 + 17f64.sqrt()) / 8.0);
        let scale = w.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
        let tiny = scale * T::epsilon() * T::from_usize(n.max(1));

        let swap = |w: &mut Vec<T>, perm: &mut Vec<usize>, p: usize, q: usize| {
            if p == q {
                return;
            }
            for c in 0..n {
                w.swap(p * n + c, q * n + c);
            }
            for r in 0..n {
                w.swap(r * n + p, r * n + q);
            }
            perm.swap(p, q);
        };

        let mut k = 0;
        while k < n {
            let akk = w[k * n + k].abs();
            let (imax, colmax) = (k + 1..n)
                .map(|i| (i, w[i * n + k].abs()))
                .fold((k, T::zero()), |best, cur| if cur.1 > best.1 { cur } else { best });

            if akk.max(colmax) <= tiny {
                return Err(Error::Factorization {
                    system: system.to_string(),
                    index: k,
                    value: akk.to_f64(),
                });
            }

            let mut step = 1;
            let mut kp = k;
            if akk < alpha * colmax {
                let rowmax = (k..n)
                    .filter(|&j| j != imax)
                    .map(|j| w[imax * n + j].abs())
                    .fold(T::zero(), T::max);
                if akk * rowmax >= alpha * colmax * colmax {
                    kp = k;
                } else if w[imax * n + imax].abs() >= alpha * rowmax {
                    kp = imax;
                } else {
                    kp = imax;
                    step = 2;
                }
            }

            let kk = k + step - 1;
            swap(&mut w, &mut perm, kk, kp);

            if step == 1 {
                let d = w[k * n + k];
                for i in k + 1..n {
                    let lik = w[i * n + k] / d;
                    for j in k + 1..n {
                        let v = w[k * n + j];
                        w[i * n + j] -= lik * v;
                    }
                    w[i * n + k] = lik;
                }
                pivots[k] = Pivot::One(d);
            } else {
                let a11 = w[k * n + k];
                let a21 = w[(k + 1) * n + k];
                let a22 = w[(k + 1) * n + k + 1];
                let det = a11 * a22 - a21 * a21;
                for i in k + 2..n {
                    let b1 = w[i * n + k];
                    let b2 = w[i * n + k + 1];
                    // [l1, l2] = [b1, b2] D⁻¹
                    let l1 = (b1 * a22 - b2 * a21) / det;
                    let l2 = (b2 * a11 - b1 * a21) / det;
                    for j in k + 2..n {
                        let c1 = w[k * n + j];
                        let c2 = w[(k + 1) * n + j];
                        w[i * n + j] -= l1 * c1 + l2 * c2;
                    }
                    w[i * n + k] = l1;
                    w[i * n + k + 1] = l2;
                }
                pivots[k] = Pivot::Two(a11, a21, a22);
                pivots[k + 1] = Pivot::Tail;
            }
            k += step;
        }

        let mut l = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..i {
                l[i * n + j] = w[i * n + j];
            }
        }
        // Within a 2×2 block the (k+1, k) entry belongs to D, not L.
        for k in 0..n {
            if let Pivot::Two(..) = pivots[k] {
                l[(k + 1) * n + k] = T::zero();
            }
        }
        Ok(Self { n, perm, l, pivots })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Inertia `(positive, negative)` of the factored matrix.
    pub fn inertia(&self) -> (usize, usize) {
        let mut pos = 0;
        let mut neg = 0;
        for p in &self.pivots {
            match *p {
                Pivot::One(d) => {
                    if d > T::zero() {
                        pos += 1
                    } else {
                        neg += 1
                    }
                }
                // A 2×2 Bunch–Kaufman block always has one eigenvalue of each sign.
                Pivot::Two(..) => {
                    pos += 1;
                    neg += 1;
                }
                Pivot::Tail => {}
            }
        }
        (pos, neg)
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= self.l[i * n + k] * x[k];
            }
            x[i] = s;
        }
        let mut k = 0;
        while k < n {
            match self.pivots[k] {
                Pivot::One(d) => {
                    x[k] /= d;
                    k += 1;
                }
                Pivot::Two(a, b2, c) => {
                    let det = a * c - b2 * b2;
                    let (y1, y2) = (x[k], x[k + 1]);
                    x[k] = (c * y1 - b2 * y2) / det;
                    x[k + 1] = (a * y2 - b2 * y1) / det;
                    k += 2;
                }
                Pivot::Tail => unreachable!("tail pivot visited directly"),
            }
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * x[k];
            }
            x[i] = s;
        }
        let mut out = vec![T::zero(); n];
        for (i, &p) in self.perm.iter().enumerate() {
            out[p] = x[i];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn residual(a: &DenseMatrix<f64>, x: &[f64], b: &[f64]) -> f64 {
        a.matvec(x)
            .iter()
            .zip(b)
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn ldl_solves_spd() {
        let a = DenseMatrix::from_rows(&[
            vec![4.0, 1.0, 0.5],
            vec![1.0, 3.0, 0.2],
            vec![0.5, 0.2, 2.0],
        ]);
        let f = DenseLdl::factor(&a, "test").unwrap();
        let b = [1.0, 2.0, 3.0];
        let x = f.solve(&b);
        assert!(residual(&a, &x, &b) < 1e-14);
    }

    #[test]
    fn ldl_rejects_indefinite() {
        let a = DenseMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 0.0]]);
        let err = DenseLdl::factor(&a, "saddle").unwrap_err();
        assert!(matches!(err, Error::Factorization { index: 1, .. }));
    }

    #[test]
    fn bunch_kaufman_solves_small_saddle() {
        let a = DenseMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 0.0]]);
        let f = BunchKaufman::factor(&a, "saddle").unwrap();
        let x = f.solve(&[3.0, 1.0]);
        // closed form: x1 = 1, x0 = 1
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
        assert_eq!(f.inertia(), (1, 1));
    }

    #[test]
    fn bunch_kaufman_needs_two_by_two_pivot() {
        let a = DenseMatrix::from_rows(&[
            vec![0.0, 1.0, 2.0],
            vec![1.0, 0.0, 3.0],
            vec![2.0, 3.0, 0.0],
        ]);
        let f = BunchKaufman::factor(&a, "zero diagonal").unwrap();
        let b = [1.0, -1.0, 0.5];
        let x = f.solve(&b);
        assert!(residual(&a, &x, &b) < 1e-14);
    }
}
