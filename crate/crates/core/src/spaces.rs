//! Coarse operator algebra on top of the fine space: the Legendre space
//! `V_H`, the L² projection `Π_H`, elementwise means `π_H`, the averaging
//! `E`, the quasi-interpolation `I_H = E ∘ π_H`, bubbles `B_H` and the
//! stabilized interpolation `Π^x = I_H + B_H (1 − I_H)`.
//!
//! Fine functions are full nodal vectors of the fine mesh (boundary nodes
//! included, and zero for functions in `H¹₀`).

use crate::error::{Error, Result};
use crate::finescale::{assemble_stiffness_with, FineSpace};
use crate::linalg::{CsrMatrix, SaddlePointSolver};
use crate::mesh::{CartesianMesh, NestedRefinement, Patch, PatchDofs};
use crate::quadrature::{gauss_legendre, shifted_legendre};
use crate::scalar::Real;

/// Tensor shifted Legendre polynomials of partial degree `≤ p`, normalized in
/// `L²(K)` on every coarse element.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LegendreBasis {
    p: usize,
    dim: usize,
}

impl LegendreBasis {
    pub fn new(p: usize, dim: usize) -> Self {
        Self { p, dim }
    }

    pub fn degree(&self) -> usize {
        self.p
    }

    /// `(p+1)^d`.
    pub fn local_count(&self) -> usize {
        (self.p + 1).pow(self.dim as u32)
    }

    /// Per-axis degrees of local function `i` (first axis fastest).
    pub fn degrees(&self, i: usize) -> [usize; 2] {
        [i % (self.p + 1), i / (self.p + 1)]
    }

    pub fn global_index(&self, k: usize, i: usize) -> usize {
        k * self.local_count() + i
    }

    /// `Λ_{K,i}(x)`; zero outside `K`.
    pub fn value(&self, mesh: &CartesianMesh, k: usize, i: usize, x: &[f64]) -> f64 {
        let (lo, hi) = mesh.element_bounds(k);
        let deg = self.degrees(i);
        let mut v = 1.0;
        for a in 0..self.dim {
            if x[a] < lo[a] || x[a] > hi[a] {
                return 0.0;
            }
            let h = hi[a] - lo[a];
            v *= shifted_legendre::<f64>(deg[a], (x[a] - lo[a]) / h)[deg[a]] / h.sqrt();
        }
        v
    }
}

/// Role of a materialized coarse operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorRole {
    /// Fine vector → Legendre coefficients.
    Projection,
    /// Fine vector → elementwise means.
    Means,
    /// Elementwise values → coarse Q1 function with zero trace, on fine nodes.
    Averaging,
    /// Fine vector → fine vector.
    QuasiInterpolation,
    /// Legendre coefficients → fine vector.
    Bubble,
    /// Fine vector → fine vector.
    Stabilized,
    /// Patch-interior fine vector → Legendre moments on the patch elements.
    Constraint,
}

#[derive(Debug, Clone)]
pub struct CoarseOperator<T> {
    pub role: OperatorRole,
    pub matrix: CsrMatrix<T>,
}

/// Number of fine nodes per axis inside one coarse element's closure.
fn nodes_per_element_axis(r: usize) -> usize {
    r + 1
}

/// The coarse operators of one discretization.
#[derive(Debug, Clone)]
pub struct CoarseSpaces<T> {
    refinement: NestedRefinement,
    basis: LegendreBasis,
    /// `P[(K,i), n] = (φ_n, Λ_{K,i})`.
    moments: CsrMatrix<T>,
    /// `(φ_n, 1)_K / |K|`.
    means: CsrMatrix<T>,
    /// Coarse Q1 averaging evaluated at the fine nodes.
    averaging: CsrMatrix<T>,
    /// Column `(K,i)` holds `b_{K,i}`.
    bubbles: CsrMatrix<T>,
}

impl<T: Real> CoarseSpaces<T> {
    pub fn new(refinement: &NestedRefinement, p: usize) -> Result<Self> {
        let dim = refinement.dim();
        let r = refinement.ratio();
        if r < p + 2 {
            return Err(Error::Config(format!(
                "H/h = {r} is too small for p = {p}: bubbles need at least p + 2 fine elements per coarse axis"
            )));
        }
        let basis = LegendreBasis::new(p, dim);
        let moments = moment_matrix(refinement, &basis);
        let means = means_matrix(refinement);
        let averaging = averaging_matrix(refinement);
        let bubbles = bubble_matrix(refinement, &basis)?;
        Ok(Self {
            refinement: refinement.clone(),
            basis,
            moments,
            means,
            averaging,
            bubbles,
        })
    }

    pub fn refinement(&self) -> &NestedRefinement {
        &self.refinement
    }

    pub fn basis(&self) -> &LegendreBasis {
        &self.basis
    }

    pub fn coarse_dim(&self) -> usize {
        self.refinement.coarse().element_count() * self.basis.local_count()
    }

    pub fn moments(&self) -> &CsrMatrix<T> {
        &self.moments
    }

    /// `Π_H v` as Legendre coefficients.
    pub fn project_vh(&self, v: &[T]) -> Vec<T> {
        self.moments.matvec(v)
    }

    /// `Π_H g` for a function given pointwise, by Gauss quadrature with
    /// `points` nodes per axis on every coarse element.
    pub fn project_function(&self, g: impl Fn(&[f64]) -> f64, points: usize) -> Vec<T> {
        let coarse = self.refinement.coarse();
        let dim = coarse.dim();
        let (s, w) = gauss_legendre::<f64>(points);
        let nl = self.basis.local_count();
        let mut out = vec![T::zero(); self.coarse_dim()];
        let ny = if dim == 2 { points } else { 1 };
        for k in 0..coarse.element_count() {
            let (lo, hi) = coarse.element_bounds(k);
            for qy in 0..ny {
                for qx in 0..points {
                    let q = [qx, qy];
                    let mut x = [0.0; 2];
                    let mut wt = 1.0;
                    for a in 0..dim {
                        x[a] = lo[a] + s[q[a]] * (hi[a] - lo[a]);
                        wt *= w[q[a]] * (hi[a] - lo[a]);
                    }
                    let gx = g(&x[..dim]);
                    for i in 0..nl {
                        out[k * nl + i] += T::from_f64(wt * gx * self.basis.value(coarse, k, i, &x[..dim]));
                    }
                }
            }
        }
        out
    }

    /// Value at `x` of the `V_H` function with the given coefficients.
    pub fn eval_vh(&self, coeffs: &[T], x: &[f64]) -> f64 {
        let coarse = self.refinement.coarse();
        let k = coarse.locate(x);
        let nl = self.basis.local_count();
        (0..nl)
            .map(|i| coeffs[k * nl + i].to_f64() * self.basis.value(coarse, k, i, x))
            .sum()
    }

    /// `π_H v`: elementwise means.
    pub fn element_means(&self, v: &[T]) -> Vec<T> {
        self.means.matvec(v)
    }

    /// `E`: elementwise values → continuous coarse Q1 function (as fine nodal
    /// vector) whose interior coarse-node values are the means of the
    /// adjacent elements and whose boundary values vanish.
    pub fn average(&self, elementwise: &[T]) -> Vec<T> {
        self.averaging.matvec(elementwise)
    }

    /// `I_H v = E π_H v`.
    pub fn quasi_interpolate(&self, v: &[T]) -> Vec<T> {
        self.average(&self.element_means(v))
    }

    /// `B_H c = Σ c_{K,i} b_{K,i}`.
    pub fn bubble_combination(&self, coeffs: &[T]) -> Vec<T> {
        self.bubbles.matvec(coeffs)
    }

    /// `b_{K,i}` as a fine nodal vector.
    pub fn bubble(&self, k: usize, i: usize) -> Vec<T> {
        let mut c = vec![T::zero(); self.coarse_dim()];
        c[self.basis.global_index(k, i)] = T::one();
        self.bubble_combination(&c)
    }

    /// `Π^x v = I_H v + B_H Π_H (v − I_H v)`.
    pub fn stabilized_interpolate(&self, v: &[T]) -> Vec<T> {
        let iv = self.quasi_interpolate(v);
        let diff: Vec<T> = v.iter().zip(&iv).map(|(&a, &b)| a - b).collect();
        let mut out = self.bubble_combination(&self.project_vh(&diff));
        for (o, b) in out.iter_mut().zip(iv) {
            *o += b;
        }
        out
    }

    /// `Π^x` applied to the `V_H` function with Legendre coefficients `c`.
    pub fn stabilized_from_coefficients(&self, c: &[T]) -> Vec<T> {
        let coarse = self.refinement.coarse();
        let nl = self.basis.local_count();
        // Only the constant mode has a nonzero mean: Λ_{K,0} = |K|^{-1/2}.
        let inv_sqrt_vol = T::one() / T::from_f64(coarse.element_volume()).sqrt();
        let means: Vec<T> = (0..coarse.element_count()).map(|k| c[k * nl] * inv_sqrt_vol).collect();
        let iv = self.average(&means);
        let piv = self.project_vh(&iv);
        let diff: Vec<T> = c.iter().zip(piv).map(|(&a, b)| a - b).collect();
        let mut out = self.bubble_combination(&diff);
        for (o, b) in out.iter_mut().zip(iv) {
            *o += b;
        }
        out
    }

    /// `Π^x Λ_{K,i}`.
    pub fn stabilized_basis_function(&self, k: usize, i: usize) -> Vec<T> {
        let mut c = vec![T::zero(); self.coarse_dim()];
        c[self.basis.global_index(k, i)] = T::one();
        self.stabilized_from_coefficients(&c)
    }

    /// Moment constraints of `W(patch)`: rows are the Legendre moments on the
    /// patch elements, columns the interior fine nodes of the patch.
    pub fn constraint_matrix(&self, patch: &Patch, dofs: &PatchDofs) -> CoarseOperator<T> {
        let nl = self.basis.local_count();
        let rows: Vec<usize> = patch
            .elements
            .iter()
            .flat_map(|&k| (0..nl).map(move |i| k * nl + i))
            .collect();
        CoarseOperator {
            role: OperatorRole::Constraint,
            matrix: self.moments.select(&rows, &dofs.interior),
        }
    }

    /// Materializes an operator as a sparse matrix. `Constraint` needs a
    /// patch and is built by [`Self::constraint_matrix`] instead.
    pub fn operator(&self, role: OperatorRole) -> Result<CoarseOperator<T>> {
        let matrix = match role {
            OperatorRole::Projection => self.moments.clone(),
            OperatorRole::Means => self.means.clone(),
            OperatorRole::Averaging => self.averaging.clone(),
            OperatorRole::Bubble => self.bubbles.clone(),
            OperatorRole::QuasiInterpolation => self.averaging.matmul(&self.means),
            OperatorRole::Stabilized => {
                let ih = self.averaging.matmul(&self.means);
                let n = ih.rows();
                let id = CsrMatrix::from_triplets(n, n, (0..n).map(|i| (i, i, T::one())));
                let one_minus_ih = CsrMatrix::from_triplets(
                    n,
                    n,
                    id.iter().chain(ih.iter().map(|(i, j, v)| (i, j, -v))).collect::<Vec<_>>(),
                );
                let b = self.bubbles.matmul(&self.moments.matmul(&one_minus_ih));
                CsrMatrix::from_triplets(n, n, ih.iter().chain(b.iter()).collect::<Vec<_>>())
            }
            OperatorRole::Constraint => {
                return Err(Error::InvalidInput(
                    "the constraint operator depends on a patch; use constraint_matrix".into(),
                ))
            }
        };
        Ok(CoarseOperator { role, matrix })
    }
}

/// 1D table `t[j][a][deg] = ∫ φ_a L_deg` over the `j`-th fine interval of the
/// reference coarse interval `[0, 1]` (split into `r` pieces), where `φ_0`,
/// `φ_1` are the interval's left and right hats and `L_deg` the unit-interval
/// normalized Legendre polynomials.
fn moment_table_1d<T: Real>(r: usize, p: usize) -> Vec<[Vec<T>; 2]> {
    let (s, w) = gauss_legendre::<T>(p + 2);
    let rt = T::from_usize(r);
    (0..r)
        .map(|j| {
            let mut left = vec![T::zero(); p + 1];
            let mut right = vec![T::zero(); p + 1];
            for (&sq, &wq) in s.iter().zip(&w) {
                let y = (T::from_usize(j) + sq) / rt;
                let vals = shifted_legendre(p, y);
                let wt = wq / rt;
                for d in 0..=p {
                    left[d] += wt * (T::one() - sq) * vals[d];
                    right[d] += wt * sq * vals[d];
                }
            }
            [left, right]
        })
        .collect()
}

fn moment_matrix<T: Real>(refinement: &NestedRefinement, basis: &LegendreBasis) -> CsrMatrix<T> {
    let coarse = refinement.coarse();
    let fine = refinement.fine();
    let dim = refinement.dim();
    let r = refinement.ratio();
    let p = basis.degree();
    let table = moment_table_1d::<T>(r, p);
    // Element axis length enters as |K_a|^{1/2} per axis: ∫ φ Λ over an
    // interval of length H is H · H^{-1/2} times the reference value.
    let scale: T = (0..dim)
        .map(|a| T::from_f64(coarse.element_size(a)).sqrt())
        .fold(T::one(), |acc, s| acc * s);
    let nl = basis.local_count();
    let mut trip = Vec::new();
    let npa = nodes_per_element_axis(r);
    for k in 0..coarse.element_count() {
        let c = coarse.element_index(k);
        for i in 0..nl {
            let deg = basis.degrees(i);
            if dim == 1 {
                let mut acc = vec![T::zero(); npa];
                for (j, t) in table.iter().enumerate() {
                    acc[j] += t[0][deg[0]];
                    acc[j + 1] += t[1][deg[0]];
                }
                for (m, v) in acc.into_iter().enumerate() {
                    trip.push((k * nl + i, fine.node_id([c[0] * r + m, 0]), v * scale));
                }
            } else {
                let mut ax = [vec![T::zero(); npa], vec![T::zero(); npa]];
                for a in 0..2 {
                    for (j, t) in table.iter().enumerate() {
                        ax[a][j] += t[0][deg[a]];
                        ax[a][j + 1] += t[1][deg[a]];
                    }
                }
                for my in 0..npa {
                    for mx in 0..npa {
                        let v = ax[0][mx] * ax[1][my] * scale;
                        trip.push((k * nl + i, fine.node_id([c[0] * r + mx, c[1] * r + my]), v));
                    }
                }
            }
        }
    }
    CsrMatrix::from_triplets(coarse.element_count() * nl, fine.node_count(), trip)
}

fn means_matrix<T: Real>(refinement: &NestedRefinement) -> CsrMatrix<T> {
    // (φ_n, 1)_K / |K|: per axis, 1/(2r) at the two ends and 1/r inside.
    let coarse = refinement.coarse();
    let fine = refinement.fine();
    let dim = refinement.dim();
    let r = refinement.ratio();
    let npa = nodes_per_element_axis(r);
    let rt = T::from_usize(r);
    let w1: Vec<T> = (0..npa)
        .map(|m| {
            if m == 0 || m == r {
                T::one() / (T::from_f64(2.0) * rt)
            } else {
                T::one() / rt
            }
        })
        .collect();
    let mut trip = Vec::new();
    for k in 0..coarse.element_count() {
        let c = coarse.element_index(k);
        let ny = if dim == 2 { npa } else { 1 };
        for my in 0..ny {
            for mx in 0..npa {
                let wy = if dim == 2 { w1[my] } else { T::one() };
                trip.push((k, fine.node_id([c[0] * r + mx, c[1] * r + my]), w1[mx] * wy));
            }
        }
    }
    CsrMatrix::from_triplets(coarse.element_count(), fine.node_count(), trip)
}

fn averaging_matrix<T: Real>(refinement: &NestedRefinement) -> CsrMatrix<T> {
    let coarse = refinement.coarse();
    let fine = refinement.fine();
    let dim = refinement.dim();
    let r = refinement.ratio();
    // Coarse node → adjacent elements (uniform weights), zero on ∂Ω.
    let mut node_avg: Vec<Vec<(usize, T)>> = vec![Vec::new(); coarse.node_count()];
    for (z, avg) in node_avg.iter_mut().enumerate() {
        if coarse.is_boundary_node(z) {
            continue;
        }
        let zi = coarse.node_index(z);
        let mut adj = Vec::new();
        let ys: Vec<usize> = if dim == 2 { vec![zi[1] - 1, zi[1]] } else { vec![0] };
        for &ey in &ys {
            for ex in [zi[0] - 1, zi[0]] {
                adj.push(coarse.element_id([ex, ey]));
            }
        }
        let w = T::one() / T::from_usize(adj.len());
        *avg = adj.into_iter().map(|e| (e, w)).collect();
    }
    // Fine node → coarse Q1 interpolation weights.
    let mut trip = Vec::new();
    let rt = T::from_usize(r);
    for n in 0..fine.node_count() {
        let mi = fine.node_index(n);
        let mut axis_weights: [Vec<(usize, T)>; 2] = [vec![(0, T::one())], vec![(0, T::one())]];
        for a in 0..dim {
            let q = mi[a] / r;
            let rem = mi[a] % r;
            axis_weights[a] = if rem == 0 {
                vec![(q, T::one())]
            } else {
                let t = T::from_usize(rem) / rt;
                vec![(q, T::one() - t), (q + 1, t)]
            };
        }
        for &(zy, wy) in &axis_weights[1] {
            for &(zx, wx) in &axis_weights[0] {
                let z = coarse.node_id([zx, zy]);
                for &(e, we) in &node_avg[z] {
                    trip.push((n, e, wx * wy * we));
                }
            }
        }
    }
    CsrMatrix::from_triplets(fine.node_count(), coarse.element_count(), trip)
}

/// Bubbles on one reference element, as values on the element's fine nodes
/// (lexicographic over the `(r+1)^d` closure nodes), then translated.
fn bubble_matrix<T: Real>(refinement: &NestedRefinement, basis: &LegendreBasis) -> Result<CsrMatrix<T>> {
    let coarse = refinement.coarse();
    let fine = refinement.fine();
    let dim = refinement.dim();
    let r = refinement.ratio();
    let sizes: Vec<f64> = (0..dim).map(|a| coarse.element_size(a)).collect();
    let single = CartesianMesh::new(dim, &vec![0.0; dim], &sizes, &vec![1; dim])?;
    let local = NestedRefinement::new(single, r)?;
    let local_space = FineSpace::new(local.clone(), 1);
    let interior = local_space.free_nodes().to_vec();
    let stiffness = assemble_stiffness_with::<T>(local.fine(), &vec![1.0; local.fine().element_count()]).submatrix(&interior);
    let p_local = moment_matrix::<T>(&local, basis);
    let nl = basis.local_count();
    let c = p_local.select(&(0..nl).collect::<Vec<_>>(), &interior);
    let solver = SaddlePointSolver::new(stiffness, c, "bubble system")?;
    let f = vec![T::zero(); interior.len()];
    let npa = nodes_per_element_axis(r);
    let mut trip = Vec::new();
    for i in 0..nl {
        let mut g = vec![T::zero(); nl];
        g[i] = T::one();
        let (b, _) = solver.solve_full(&f, &g);
        for k in 0..coarse.element_count() {
            let ck = coarse.element_index(k);
            for (&ln, &v) in interior.iter().zip(&b) {
                let lm = [ln % npa, ln / npa];
                let node = fine.node_id([ck[0] * r + lm[0], ck[1] * r + lm[1]]);
                trip.push((node, k * nl + i, v));
            }
        }
    }
    Ok(CsrMatrix::from_triplets(fine.node_count(), coarse.element_count() * nl, trip))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finescale::assemble_mass;
    use crate::linalg::{dot, norm2};
    use crate::mesh::build_patch;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spaces(dim: usize, nh: usize, r: usize, p: usize) -> (FineSpace, CoarseSpaces<f64>) {
        let refinement = NestedRefinement::new(CartesianMesh::unit(dim, nh).unwrap(), r).unwrap();
        let cs = CoarseSpaces::new(&refinement, p).unwrap();
        (FineSpace::new(refinement, 4), cs)
    }

    fn random_h10(space: &FineSpace, rng: &mut ChaCha8Rng) -> Vec<f64> {
        space.extend(&(0..space.dof_count()).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>())
    }

    #[test]
    fn legendre_basis_is_orthonormal_per_element() {
        for dim in 1..=2 {
            let (_, cs) = spaces(dim, 3, 5, 3);
            let coarse = cs.refinement().coarse().clone();
            let b = *cs.basis();
            for i in 0..b.local_count() {
                let proj = cs.project_function(|x| b.value(&coarse, 4 % coarse.element_count(), i, x), 6);
                for (idx, v) in proj.iter().enumerate() {
                    let expected = if idx == b.global_index(4 % coarse.element_count(), i) { 1.0 } else { 0.0 };
                    assert!((v - expected).abs() < 1e-12, "dim {dim} i {i} idx {idx}: {v}");
                }
            }
        }
    }

    #[test]
    fn projection_of_linear_function_has_mean_half_h() {
        let (space, cs) = spaces(1, 4, 4, 0);
        let v = space.interpolate::<f64>(|x| x[0]);
        let c = cs.project_vh(&v);
        // Λ_{K,0} = H^{-1/2} on [0, H]: coefficient = H^{1/2} · mean.
        let h = 0.25;
        assert!((c[0] / h.sqrt() - h / 2.0).abs() < 1e-14);
        let means = cs.element_means(&v);
        assert!((means[0] - h / 2.0).abs() < 1e-14);
    }

    #[test]
    fn moment_matrix_matches_quadrature_route() {
        // P v for a fine function equals Π_H of the same function evaluated
        // pointwise with quadrature fine enough to be exact per fine element.
        let (space, cs) = spaces(2, 2, 4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = random_h10(&space, &mut rng);
        let fine = space.mesh().clone();
        let eval = |x: &[f64]| {
            let e = fine.locate(x);
            let (lo, hi) = fine.element_bounds(e);
            let nodes = fine.element_nodes(e);
            let s = [(x[0] - lo[0]) / (hi[0] - lo[0]), (x[1] - lo[1]) / (hi[1] - lo[1])];
            let w = [(1.0 - s[0]) * (1.0 - s[1]), s[0] * (1.0 - s[1]), (1.0 - s[0]) * s[1], s[0] * s[1]];
            nodes.iter().zip(w).map(|(&n, w)| v[n] * w).sum::<f64>()
        };
        let direct = cs.project_vh(&v);
        let mut via_quad = vec![0.0; direct.len()];
        let coarse = cs.refinement().coarse().clone();
        let (s, w) = gauss_legendre::<f64>(4);
        for e in 0..fine.element_count() {
            let (lo, hi) = fine.element_bounds(e);
            let k = cs.refinement().coarse_of_fine_element(e);
            for qy in 0..4 {
                for qx in 0..4 {
                    let x = [lo[0] + s[qx] * (hi[0] - lo[0]), lo[1] + s[qy] * (hi[1] - lo[1])];
                    let wt = w[qx] * w[qy] * fine.element_volume();
                    for i in 0..cs.basis().local_count() {
                        via_quad[k * 9 + i] += wt * eval(&x) * cs.basis().value(&coarse, k, i, &x);
                    }
                }
            }
        }
        for (a, b) in direct.iter().zip(&via_quad) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_error_converges_at_p_plus_one() {
        for p in 0..=2 {
            let errs: Vec<f64> = (2..=5)
                .map(|k| {
                    let nh = 1 << k;
                    let (_, cs) = spaces(1, nh, p + 2, p);
                    let g = |x: &[f64]| (3.0 * x[0]).sin();
                    let c = cs.project_function(g, p + 6);
                    // ‖g − Π_H g‖² = ‖g‖² − ‖c‖² by orthonormality.
                    let (s, w) = gauss_legendre::<f64>(12);
                    let norm_sq: f64 = (0..nh)
                        .map(|e| {
                            let h = 1.0 / nh as f64;
                            s.iter().zip(&w).map(|(&q, &wq)| wq * h * g(&[(e as f64 + q) * h]).powi(2)).sum::<f64>()
                        })
                        .sum();
                    (norm_sq - dot(&c, &c)).max(0.0).sqrt()
                })
                .collect();
            let slope = (errs[2] / errs[3]).log2();
            assert!((slope - (p as f64 + 1.0)).abs() <= 0.3, "p={p}: {errs:?}");
        }
    }

    #[test]
    fn quasi_interpolation_of_constants_and_means() {
        let (space, cs) = spaces(1, 4, 4, 0);
        let ones = vec![1.0; space.node_count()];
        let iv = cs.quasi_interpolate(&ones);
        let coarse_nodes: Vec<usize> = (0..=4).map(|z| z * 4).collect();
        let vals: Vec<f64> = coarse_nodes.iter().map(|&n| iv[n]).collect();
        assert_eq!(vals, vec![0.0, 1.0, 1.0, 1.0, 0.0]);
        let e = cs.average(&[1.0, 2.0, 3.0, 4.0]);
        let vals: Vec<f64> = coarse_nodes.iter().map(|&n| e[n]).collect();
        assert_eq!(vals, vec![0.0, 1.5, 2.5, 3.5, 0.0]);
        // Between coarse nodes the result is linear.
        assert!((e[2] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn quasi_interpolation_is_h1_stable() {
        let (space, cs) = spaces(2, 4, 4, 1);
        let k = crate::finescale::assemble_stiffness_with::<f64>(space.mesh(), &vec![1.0; space.mesh().element_count()]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let v = random_h10(&space, &mut rng);
            let iv = cs.quasi_interpolate(&v);
            worst = worst.max((k.quadratic_form(&iv) / k.quadratic_form(&v)).sqrt());
        }
        assert!(worst <= 10.0, "{worst}");
    }

    #[test]
    fn bubble_in_one_dimension_is_parabola() {
        let refinement = NestedRefinement::new(CartesianMesh::unit(1, 1).unwrap(), 64).unwrap();
        let cs = CoarseSpaces::<f64>::new(&refinement, 0).unwrap();
        let b = cs.bubble(0, 0);
        assert!((b[32] - 1.5).abs() < 0.02, "{}", b[32]);
        for (n, &v) in b.iter().enumerate() {
            let x = n as f64 / 64.0;
            assert!((v - 6.0 * x * (1.0 - x)).abs() < 0.02);
        }
        assert_eq!((b[0], b[64]), (0.0, 0.0));
    }

    #[test]
    fn bubble_matches_dense_constrained_minimization() {
        // Dense oracle: minimize ½ bᵀKb subject to Cb = g through the null
        // space of C (nalgebra SVD).
        use nalgebra::{DMatrix, DVector};
        let (space, cs) = spaces(1, 2, 8, 1);
        let b = cs.bubble(1, 1);
        let nodes: Vec<usize> = (9..16).collect();
        let kfull = crate::finescale::assemble_stiffness_with::<f64>(space.mesh(), &vec![1.0; 16]);
        let k = kfull.submatrix(&nodes).to_dense();
        let c = cs.moments().select(&[2, 3], &nodes).to_dense();
        let km = DMatrix::from_fn(7, 7, |i, j| k[(i, j)]);
        let cm = DMatrix::from_fn(2, 7, |i, j| c[(i, j)]);
        let g = DVector::from_vec(vec![0.0, 1.0]);
        let x0 = cm.clone().svd(true, true).solve(&g, 1e-14).unwrap();
        // Null space of C: eigenvectors of CᵀC with zero eigenvalue.
        let eig = (cm.transpose() * &cm).symmetric_eigen();
        let null: Vec<usize> = (0..7).filter(|&j| eig.eigenvalues[j].abs() < 1e-12).collect();
        assert_eq!(null.len(), 5);
        let z = DMatrix::from_fn(7, 5, |i, j| eig.eigenvectors[(i, null[j])]);
        let y = (z.transpose() * &km * &z).lu().solve(&(-(z.transpose() * &km * &x0))).unwrap();
        let oracle = x0 + z * y;
        for (l, &n) in nodes.iter().enumerate() {
            assert!((b[n] - oracle[l]).abs() < 1e-10);
        }
    }

    #[test]
    fn bubble_moments_match_legendre_moments() {
        for (dim, p) in [(1, 3), (2, 2)] {
            let (_, cs) = spaces(dim, 2, p + 3, p);
            let nl = cs.basis().local_count();
            for k in 0..cs.refinement().coarse().element_count() {
                for i in 0..nl {
                    let m = cs.project_vh(&cs.bubble(k, i));
                    for (idx, v) in m.iter().enumerate() {
                        let expected = if idx == k * nl + i { 1.0 } else { 0.0 };
                        assert!((v - expected).abs() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn bubble_gradient_scales_like_inverse_h() {
        for p in 0..=3 {
            for nh in [2usize, 4, 8] {
                let (space, cs) = spaces(1, nh, p + 4, p);
                let k = crate::finescale::assemble_stiffness_with::<f64>(space.mesh(), &vec![1.0; space.mesh().element_count()]);
                let h = 1.0 / nh as f64;
                for i in 0..=p {
                    let b = cs.bubble(0, i);
                    // ‖Λ_{K,i}‖_{L²(K)} = 1.
                    let c = k.quadratic_form(&b).sqrt() * h;
                    assert!(c <= 50.0, "p={p} H={h}: {c}");
                }
            }
        }
    }

    #[test]
    fn stabilized_interpolation_is_a_projection_with_kernel_w() {
        for dim in 1..=2 {
            let (space, cs) = spaces(dim, 4, 4, 1);
            let mass = assemble_mass::<f64>(&space);
            let mut rng = ChaCha8Rng::seed_from_u64(3 + dim as u64);
            for _ in 0..20 {
                let v = random_h10(&space, &mut rng);
                let pv = cs.stabilized_interpolate(&v);
                let ppv = cs.stabilized_interpolate(&pv);
                let diff: Vec<f64> = pv.iter().zip(&ppv).map(|(a, b)| a - b).collect();
                assert!(norm2(&diff) <= 1e-10 * norm2(&pv));
                // Π_H Π^x v = Π_H v.
                let a = cs.project_vh(&pv);
                let b = cs.project_vh(&v);
                assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
                // Kernel: remove the V_H moments with bubbles, Π^x vanishes.
                let w: Vec<f64> = v.iter().zip(cs.bubble_combination(&b)).map(|(x, y)| x - y).collect();
                assert!(norm2(&cs.project_vh(&w)) <= 1e-12 * norm2(&v));
                assert!(norm2(&cs.stabilized_interpolate(&w)) <= 1e-10 * norm2(&w));
            }
            let _ = mass;
        }
    }

    #[test]
    fn stabilized_basis_function_matches_fine_route() {
        // Π^x on coefficients of a V_H function agrees with Π^x applied to a
        // fine function having the same moments and the same means.
        let (_, cs) = spaces(1, 4, 6, 2);
        let c: Vec<f64> = (0..cs.coarse_dim()).map(|i| ((i * 5 % 7) as f64) - 3.0).collect();
        let a = cs.stabilized_from_coefficients(&c);
        // A fine function with the same Π_H: the bubble combination B_H c.
        let b = cs.stabilized_interpolate(&cs.bubble_combination(&c));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn materialized_operators_agree_with_actions() {
        let (space, cs) = spaces(2, 2, 4, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v = random_h10(&space, &mut rng);
        let px = cs.operator(OperatorRole::Stabilized).unwrap();
        let a = px.matrix.matvec(&v);
        let b = cs.stabilized_interpolate(&v);
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
        assert!(cs.operator(OperatorRole::Constraint).is_err());
    }

    fn pointwise(mesh: &CartesianMesh, v: &[f64], x: &[f64]) -> f64 {
        let e = mesh.locate(x);
        let (lo, hi) = mesh.element_bounds(e);
        let nodes = mesh.element_nodes(e);
        let s = [(x[0] - lo[0]) / (hi[0] - lo[0]), (x[1] - lo[1]) / (hi[1] - lo[1])];
        let w = [(1.0 - s[0]) * (1.0 - s[1]), s[0] * (1.0 - s[1]), (1.0 - s[0]) * s[1], s[0] * s[1]];
        nodes.iter().zip(w).map(|(&n, w)| v[n] * w).sum()
    }

    /// `∫ f g` with Gauss points on every fine element.
    fn fine_integral(fine: &CartesianMesh, f: impl Fn(&[f64]) -> f64, g: impl Fn(&[f64]) -> f64) -> f64 {
        let (s, w) = gauss_legendre::<f64>(4);
        let mut total = 0.0;
        for e in 0..fine.element_count() {
            let (lo, hi) = fine.element_bounds(e);
            for qy in 0..4 {
                for qx in 0..4 {
                    let x = [lo[0] + s[qx] * (hi[0] - lo[0]), lo[1] + s[qy] * (hi[1] - lo[1])];
                    total += w[qx] * w[qy] * (hi[0] - lo[0]) * (hi[1] - lo[1]) * f(&x) * g(&x);
                }
            }
        }
        total
    }

    #[test]
    fn projection_is_self_adjoint() {
        let (space, cs) = spaces(2, 2, 4, 2);
        let fine = space.mesh().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let u = random_h10(&space, &mut rng);
            let v = random_h10(&space, &mut rng);
            let (cu, cv) = (cs.project_vh(&u), cs.project_vh(&v));
            let lhs = fine_integral(&fine, |x| cs.eval_vh(&cu, x), |x| pointwise(&fine, &v, x));
            let rhs = fine_integral(&fine, |x| pointwise(&fine, &u, x), |x| cs.eval_vh(&cv, x));
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0), "{lhs} {rhs}");
        }
    }

    #[test]
    fn constraint_matrix_shape_and_bubble_rows() {
        let (_, cs) = spaces(2, 4, 4, 1);
        let coarse = cs.refinement().coarse().clone();
        let patch = build_patch(&coarse, &[5], 1).unwrap();
        let dofs = cs.refinement().patch_dofs(&patch);
        let c = cs.constraint_matrix(&patch, &dofs);
        assert_eq!(c.role, OperatorRole::Constraint);
        assert_eq!(c.matrix.rows(), patch.elements.len() * 4);
        assert_eq!(c.matrix.cols(), dofs.interior.len());
        let b = cs.bubble(5, 2);
        let local: Vec<f64> = dofs.interior.iter().map(|&n| b[n]).collect();
        let m = c.matrix.matvec(&local);
        let row = patch.elements.iter().position(|&e| e == 5).unwrap() * 4 + 2;
        for (idx, v) in m.iter().enumerate() {
            let expected = if idx == row { 1.0 } else { 0.0 };
            assert!((v - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn too_coarse_refinement_is_rejected() {
        let refinement = NestedRefinement::new(CartesianMesh::unit(1, 4).unwrap(), 3).unwrap();
        assert!(CoarseSpaces::<f64>::new(&refinement, 2).unwrap_err().is_config());
    }
}
