use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::dense::DenseMatrix;

/// Symmetric sparse matrix storing the lower triangle in CSR layout.
///
/// Column indices within a row are sorted ascending, so the diagonal (when
/// present) is the last entry of its row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymmetric<T> {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

fn compress<T: Real>(
    nrows: usize,
    mut entries: Vec<(usize, usize, T)>,
) -> (Vec<usize>, Vec<usize>, Vec<T>) {
    entries.sort_unstable_by_key(|&(i, j, _)| (i, j));
    let mut row_ptr = vec![0usize; nrows + 1];
    let mut col_idx = Vec::with_capacity(entries.len());
    let mut values: Vec<T> = Vec::with_capacity(entries.len());
    let mut last: Option<(usize, usize)> = None;
    for (i, j, v) in entries {
        if last == Some((i, j)) {
            *values.last_mut().unwrap() += v;
        } else {
            col_idx.push(j);
            values.push(v);
            row_ptr[i + 1] += 1;
            last = Some((i, j));
        }
    }
    for i in 0..nrows {
        row_ptr[i + 1] += row_ptr[i];
    }
    (row_ptr, col_idx, values)
}

impl<T: Real> SparseSymmetric<T> {
    /// Builds from `(row, col, value)` triplets; entries may come from either
    /// triangle and duplicates are summed.
    pub fn from_triplets(n: usize, triplets: impl IntoIterator<Item = (usize, usize, T)>) -> Self {
        let entries: Vec<_> = triplets
            .into_iter()
            .map(|(i, j, v)| {
                assert!(i < n && j < n, "triplet ({i}, {j}) out of bounds for dim {n}");
                if j > i {
                    (j, i, v)
                } else {
                    (i, j, v)
                }
            })
            .collect();
        let (row_ptr, col_idx, values) = compress(n, entries);
        let mut m = Self {
            n,
            row_ptr,
            col_idx,
            values,
        };
        m.prune_zeros();
        m
    }

    /// Builds from the lower triangle of a dense matrix, dropping zeros.
    pub fn from_dense(d: &DenseMatrix<T>) -> Self {
        assert_eq!(d.rows(), d.cols());
        let n = d.rows();
        let mut trip = Vec::new();
        for i in 0..n {
            for j in 0..=i {
                let v = d[(i, j)];
                if v != T::zero() {
                    trip.push((i, j, v));
                }
            }
        }
        Self::from_triplets(n, trip)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, (0..n).map(|i| (i, i, T::one())))
    }

    pub fn diagonal_matrix(d: &[T]) -> Self {
        Self::from_triplets(d.len(), d.iter().enumerate().map(|(i, &v)| (i, i, v)))
    }

    fn prune_zeros(&mut self) {
        if self.values.iter().all(|v| *v != T::zero()) {
            return;
        }
        let mut row_ptr = vec![0usize; self.n + 1];
        let mut col_idx = Vec::with_capacity(self.col_idx.len());
        let mut values = Vec::with_capacity(self.values.len());
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.values[k] != T::zero() {
                    col_idx.push(self.col_idx[k]);
                    values.push(self.values[k]);
                }
            }
            row_ptr[i + 1] = col_idx.len();
        }
        self.row_ptr = row_ptr;
        self.col_idx = col_idx;
        self.values = values;
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Stored (lower-triangle) entry count.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Lower-triangle entries of row `i` as `(col, value)` with `col <= i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    /// All stored entries `(i, j, v)` with `j <= i`.
    pub fn iter_lower(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.n).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => T::zero(),
        }
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.n)
            .map(|i| {
                let end = self.row_ptr[i + 1];
                if end > self.row_ptr[i] && self.col_idx[end - 1] == i {
                    self.values[end - 1]
                } else {
                    T::zero()
                }
            })
            .collect()
    }

    pub fn matvec_into(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        y.iter_mut().for_each(|v| *v = T::zero());
        for i in 0..self.n {
            let xi = x[i];
            let mut acc = T::zero();
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                let v = self.values[k];
                acc += v * x[j];
                if j != i {
                    y[j] += v * xi;
                }
            }
            y[i] += acc;
        }
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.n];
        self.matvec_into(x, &mut y);
        y
    }

    /// `xᵀ M x`.
    pub fn quadratic_form(&self, x: &[T]) -> T {
        let mut acc = T::zero();
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                let v = self.values[k] * x[i] * x[j];
                acc += if j == i { v } else { v + v };
            }
        }
        acc
    }

    /// `a * self + b * other` on the union pattern.
    pub fn linear_combination(&self, a: T, other: &Self, b: T) -> Self {
        assert_eq!(self.n, other.n);
        let trip = self
            .iter_lower()
            .map(|(i, j, v)| (i, j, a * v))
            .chain(other.iter_lower().map(|(i, j, v)| (i, j, b * v)));
        Self::from_triplets(self.n, trip.collect::<Vec<_>>())
    }

    /// Principal submatrix on `indices` (in the given order).
    pub fn submatrix(&self, indices: &[usize]) -> Self {
        let mut local = vec![usize::MAX; self.n];
        for (l, &g) in indices.iter().enumerate() {
            local[g] = l;
        }
        // Every pair {gi, gj} is stored once, in the row of max(gi, gj).
        let mut trip = Vec::new();
        for (li, &gi) in indices.iter().enumerate() {
            for (gj, v) in self.row(gi) {
                let lj = local[gj];
                if lj != usize::MAX {
                    trip.push((li, lj, v));
                }
            }
        }
        Self::from_triplets(indices.len(), trip)
    }

    /// Both triangles in general sparse storage.
    pub fn to_csr(&self) -> CsrMatrix<T> {
        let n = self.dim();
        CsrMatrix::from_triplets(
            n,
            n,
            self.iter_lower()
                .flat_map(|(i, j, v)| {
                    let mirror = (i != j).then_some((j, i, v));
                    std::iter::once((i, j, v)).chain(mirror)
                })
                .collect::<Vec<_>>(),
        )
    }

    pub fn to_dense(&self) -> DenseMatrix<T> {
        let mut d = DenseMatrix::zeros(self.n, self.n);
        for (i, j, v) in self.iter_lower() {
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
        d
    }

    /// Stored pattern is lower-triangular with sorted columns.
    pub fn is_well_formed(&self) -> bool {
        (0..self.n).all(|i| {
            let cols = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
            cols.windows(2).all(|w| w[0] < w[1]) && cols.iter().all(|&j| j <= i)
        })
    }

    /// Column lists of the full (both-triangle) adjacency graph, diagonal excluded.
    pub(crate) fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for (i, j, _) in self.iter_lower() {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        adj
    }

    /// Writes the matrix in Matrix Market `coordinate real symmetric` format.
    pub fn write_matrix_market(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        writeln!(f, "%%MatrixMarket matrix coordinate real symmetric").map_err(io)?;
        writeln!(f, "{} {} {}", self.n, self.n, self.nnz()).map_err(io)?;
        for (i, j, v) in self.iter_lower() {
            writeln!(f, "{} {} {:e}", i + 1, j + 1, v.to_f64()).map_err(io)?;
        }
        f.flush().map_err(io)
    }
}

/// General sparse matrix in CSR layout.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> CsrMatrix<T> {
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, T)>,
    ) -> Self {
        let entries: Vec<_> = triplets
            .into_iter()
            .inspect(|&(i, j, _)| {
                assert!(i < rows && j < cols, "triplet ({i}, {j}) out of bounds");
            })
            .collect();
        let (row_ptr, col_idx, values) = compress(rows, entries);
        Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_triplets(rows, cols, Vec::new())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.rows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => T::zero(),
        }
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    /// `selfᵀ x`.
    pub fn transpose_matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.rows);
        let mut y = vec![T::zero(); self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            for (j, v) in self.row(i) {
                y[j] += v * xi;
            }
        }
        y
    }

    pub fn transpose(&self) -> Self {
        Self::from_triplets(self.cols, self.rows, self.iter().map(|(i, j, v)| (j, i, v)).collect::<Vec<_>>())
    }

    /// Sparse product `self * other`.
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut trip = Vec::new();
        let mut acc = vec![T::zero(); other.cols];
        let mut touched: Vec<usize> = Vec::new();
        let mut mark = vec![false; other.cols];
        for i in 0..self.rows {
            for (k, a) in self.row(i) {
                for (j, b) in other.row(k) {
                    if !mark[j] {
                        mark[j] = true;
                        touched.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            for &j in &touched {
                if acc[j] != T::zero() {
                    trip.push((i, j, acc[j]));
                }
                acc[j] = T::zero();
                mark[j] = false;
            }
            touched.clear();
        }
        Self::from_triplets(self.rows, other.cols, trip)
    }

    /// Rows `rows` (in order) and the columns listed in `cols` (in order).
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Self {
        let mut local = vec![usize::MAX; self.cols];
        for (l, &g) in cols.iter().enumerate() {
            local[g] = l;
        }
        let mut trip = Vec::new();
        for (li, &gi) in rows.iter().enumerate() {
            for (gj, v) in self.row(gi) {
                if local[gj] != usize::MAX {
                    trip.push((li, local[gj], v));
                }
            }
        }
        Self::from_triplets(rows.len(), cols.len(), trip)
    }

    pub fn to_dense(&self) -> DenseMatrix<T> {
        let mut d = DenseMatrix::zeros(self.rows, self.cols);
        for (i, j, v) in self.iter() {
            d[(i, j)] = v;
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian(n: usize) -> SparseSymmetric<f64> {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i + 1 < n {
                t.push((i + 1, i, -1.0));
            }
        }
        SparseSymmetric::from_triplets(n, t)
    }

    #[test]
    fn duplicates_sum_and_upper_entries_fold_down() {
        let m = SparseSymmetric::from_triplets(2, vec![(0, 1, 1.0), (1, 0, 2.0), (0, 0, 1.0)]);
        assert_eq!(m.get(1, 0), 3.0);
        assert_eq!(m.get(0, 1), 3.0);
        assert_eq!(m.nnz(), 2);
        assert!(m.is_well_formed());
    }

    #[test]
    fn symmetric_matvec_matches_dense() {
        let m = laplacian(5);
        let x = [1.0, -2.0, 0.5, 3.0, 1.5];
        let y = m.matvec(&x);
        let d = m.to_dense();
        let yd = d.matvec(&x);
        for (a, b) in y.iter().zip(&yd) {
            assert!((a - b).abs() < 1e-15);
        }
        let q: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        assert!((q - m.quadratic_form(&x)).abs() < 1e-12);
    }

    #[test]
    fn submatrix_keeps_couplings_from_both_triangles() {
        let m = laplacian(5);
        let s = m.submatrix(&[3, 1, 2]);
        assert_eq!(s.get(0, 2), -1.0); // (3,2)
        assert_eq!(s.get(1, 2), -1.0); // (1,2)
        assert_eq!(s.get(0, 1), 0.0); // (3,1)
        assert_eq!(s.diagonal(), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn csr_product_and_transpose() {
        let a = CsrMatrix::from_triplets(2, 3, vec![(0, 0, 1.0), (0, 2, 2.0), (1, 1, 3.0)]);
        let b = a.transpose();
        let c = a.matmul(&b);
        assert_eq!(c.get(0, 0), 5.0);
        assert_eq!(c.get(1, 1), 9.0);
        assert_eq!(c.get(0, 1), 0.0);
        assert_eq!(a.transpose_matvec(&[1.0, 1.0]), vec![1.0, 3.0, 2.0]);
    }
}
