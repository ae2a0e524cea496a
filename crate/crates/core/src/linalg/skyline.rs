//! Profile (skyline) LDLᵀ factorization with reverse Cuthill–McKee ordering.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::sparse::SparseSymmetric;

/// Reverse Cuthill–McKee permutation; `perm[new] = old`.
pub fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);

    let bfs_levels = |start: usize, visited: &[bool]| -> (usize, usize) {
        // Returns (last node of the final level with minimum degree, depth).
        let mut seen = visited.to_vec();
        let mut level = vec![start];
        seen[start] = true;
        let mut depth = 0;
        loop {
            let mut next = Vec::new();
            for &u in &level {
                for &v in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        next.push(v);
                    }
                }
            }
            if next.is_empty() {
                let far = *level.iter().min_by_key(|&&u| (degree[u], u)).unwrap();
                return (far, depth);
            }
            level = next;
            depth += 1;
        }
    };

    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        // Pseudo-peripheral start node.
        let mut start = seed;
        let (mut far, mut depth) = bfs_levels(start, &visited);
        for _ in 0..4 {
            let (f2, d2) = bfs_levels(far, &visited);
            if d2 <= depth {
                break;
            }
            start = far;
            far = f2;
            depth = d2;
        }
        let _ = far;
        let mut queue = VecDeque::new();
        visited[start] = true;
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut nbrs: Vec<usize> = adj[u].iter().copied().filter(|&v| !visited[v]).collect();
            nbrs.sort_by_key(|&v| (degree[v], v));
            nbrs.dedup();
            for v in nbrs {
                if !visited[v] {
                    visited[v] = true;
                    queue.push_back(v);
                }
            }
        }
    }
    order.reverse();
    order
}

/// `P A Pᵀ = L D Lᵀ` stored by rows over each row's profile.
#[derive(Debug, Clone)]
pub struct SkylineLdl<T> {
    n: usize,
    perm: Vec<usize>,
    /// First column of the profile of (permuted) row `i`.
    first: Vec<usize>,
    /// Offset of row `i`'s strictly-lower entries in `lower`.
    start: Vec<usize>,
    lower: Vec<T>,
    diag: Vec<T>,
}

impl<T: Real> SkylineLdl<T> {
    /// Factors a symmetric positive definite matrix. A non-positive pivot is
    /// reported as [`Error::Factorization`] naming `system`.
    pub fn factor(a: &SparseSymmetric<T>, system: &str) -> Result<Self> {
        let perm = reverse_cuthill_mckee(&a.adjacency());
        Self::factor_with_ordering(a, perm, system)
    }

    pub fn factor_with_ordering(a: &SparseSymmetric<T>, perm: Vec<usize>, system: &str) -> Result<Self> {
        let n = a.dim();
        assert_eq!(perm.len(), n);
        let mut iperm = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }
        // Permuted lower-triangle entries, grouped by row.
        let mut rows: Vec<Vec<(usize, T)>> = vec![Vec::new(); n];
        for (i, j, v) in a.iter_lower() {
            let (pi, pj) = (iperm[i], iperm[j]);
            let (r, c) = if pj > pi { (pj, pi) } else { (pi, pj) };
            rows[r].push((c, v));
        }
        let mut first = vec![0usize; n];
        let mut start = vec![0usize; n + 1];
        for i in 0..n {
            first[i] = rows[i].iter().map(|&(c, _)| c).min().unwrap_or(i).min(i);
            start[i + 1] = start[i] + (i - first[i]);
        }
        let mut lower = vec![T::zero(); start[n]];
        let mut diag = vec![T::zero(); n];
        for i in 0..n {
            for &(c, v) in &rows[i] {
                if c == i {
                    diag[i] += v;
                } else {
                    lower[start[i] + c - first[i]] += v;
                }
            }
        }
        drop(rows);

        // Pivots are judged against their own diagonal entry, so rows with a
        // small scale (deep enrichment levels) are not mistaken for singular ones.
        let original = diag.clone();
        for i in 0..n {
            let fi = first[i];
            let si = start[i];
            // g_j = A_ij - sum_k g_k L_jk, with g_k = L_ik D_k.
            for j in fi..i {
                let fj = first[j];
                let sj = start[j];
                let k0 = fi.max(fj);
                let mut s = lower[si + j - fi];
                for k in k0..j {
                    s -= lower[si + k - fi] * lower[sj + k - fj];
                }
                lower[si + j - fi] = s;
            }
            let mut di = diag[i];
            for j in fi..i {
                let g = lower[si + j - fi];
                let l = g / diag[j];
                di -= g * l;
                lower[si + j - fi] = l;
            }
            if !(di > original[i].abs() * T::epsilon()) || !di.is_finite() {
                return Err(Error::Factorization {
                    system: system.to_string(),
                    index: perm[i],
                    value: di.to_f64(),
                });
            }
            diag[i] = di;
        }
        Ok(Self {
            n,
            perm,
            first,
            start,
            lower,
            diag,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Stored profile size (strictly lower part).
    pub fn profile_len(&self) -> usize {
        self.lower.len()
    }

    pub fn solve_in_place(&self, b: &mut [T]) {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let si = self.start[i];
            let mut s = x[i];
            for k in fi..i {
                s -= self.lower[si + k - fi] * x[k];
            }
            x[i] = s;
        }
        for i in 0..n {
            x[i] /= self.diag[i];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let si = self.start[i];
            let xi = x[i];
            for k in fi..i {
                x[k] -= self.lower[si + k - fi] * xi;
            }
        }
        for (i, &p) in self.perm.iter().enumerate() {
            b[p] = x[i];
        }
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn min_pivot(&self) -> T {
        self.diag.iter().copied().fold(T::zero(), |m, d| if m == T::zero() { d } else { m.min(d) })
    }
}
