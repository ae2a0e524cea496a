//! Fine-scale Q1 finite element space: coefficient fields, source terms,
//! stiffness/mass/load assembly and the fine reference solver.

mod coefficient;
mod source;

pub use coefficient::{CoefficientField, CoefficientKind};
pub use source::SourceTerm;

use crate::error::{Error, Result};
use crate::linalg::SparseSymmetric;
use crate::mesh::{CartesianMesh, NestedRefinement};
use crate::quadrature::gauss_legendre;
use crate::scalar::Real;
use crate::timestep::{march, MarchOptions, MarchResult, StateHistory, TimeGrid};

/// Continuous piecewise d-linear functions on the fine mesh. Degrees of
/// freedom are the fine nodes; the free ones are those off `∂Ω`.
#[derive(Debug, Clone)]
pub struct FineSpace {
    refinement: NestedRefinement,
    free: Vec<usize>,
    free_index: Vec<Option<usize>>,
    quad_points: usize,
}

impl FineSpace {
    pub fn new(refinement: NestedRefinement, quad_points: usize) -> Self {
        let fine = refinement.fine();
        let mut free = Vec::new();
        let mut free_index = vec![None; fine.node_count()];
        for n in 0..fine.node_count() {
            if !fine.is_boundary_node(n) {
                free_index[n] = Some(free.len());
                free.push(n);
            }
        }
        Self {
            refinement,
            free,
            free_index,
            quad_points: quad_points.max(1),
        }
    }

    pub fn refinement(&self) -> &NestedRefinement {
        &self.refinement
    }

    pub fn mesh(&self) -> &CartesianMesh {
        self.refinement.fine()
    }

    pub fn dim(&self) -> usize {
        self.refinement.dim()
    }

    pub fn node_count(&self) -> usize {
        self.mesh().node_count()
    }

    /// Number of free (interior) degrees of freedom.
    pub fn dof_count(&self) -> usize {
        self.free.len()
    }

    pub fn free_nodes(&self) -> &[usize] {
        &self.free
    }

    pub fn free_index(&self, node: usize) -> Option<usize> {
        self.free_index[node]
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.free_index[node].is_none()
    }

    pub fn quadrature_points(&self) -> usize {
        self.quad_points
    }

    /// Restriction of a full nodal vector to the free nodes.
    pub fn restrict<T: Real>(&self, full: &[T]) -> Vec<T> {
        self.free.iter().map(|&n| full[n]).collect()
    }

    /// Extension by zero of a free-node vector to all nodes.
    pub fn extend<T: Real>(&self, free: &[T]) -> Vec<T> {
        let mut full = vec![T::zero(); self.node_count()];
        for (&n, &v) in self.free.iter().zip(free) {
            full[n] = v;
        }
        full
    }

    /// Nodal interpolant of a function.
    pub fn interpolate<T: Real>(&self, g: impl Fn(&[f64]) -> f64) -> Vec<T> {
        let d = self.dim();
        (0..self.node_count())
            .map(|n| T::from_f64(g(&self.mesh().node_coords(n)[..d])))
            .collect()
    }
}

/// 1D reference element matrices on `[0, 1]`.
fn unit_stiffness<T: Real>() -> [[T; 2]; 2] {
    let one = T::one();
    [[one, -one], [-one, one]]
}

fn unit_mass<T: Real>() -> [[T; 2]; 2] {
    let third = T::one() / T::from_f64(3.0);
    let sixth = T::one() / T::from_f64(6.0);
    [[third, sixth], [sixth, third]]
}

/// Q1 element stiffness matrix for a unit coefficient on an element with side
/// lengths `h`, local nodes in lexicographic order.
pub fn element_stiffness<T: Real>(dim: usize, h: [f64; 2]) -> Vec<Vec<T>> {
    let k = unit_stiffness::<T>();
    let m = unit_mass::<T>();
    let hx = T::from_f64(h[0]);
    if dim == 1 {
        return (0..2).map(|i| (0..2).map(|j| k[i][j] / hx).collect()).collect();
    }
    let hy = T::from_f64(h[1]);
    let mut out = vec![vec![T::zero(); 4]; 4];
    for (a, row) in out.iter_mut().enumerate() {
        for (b, v) in row.iter_mut().enumerate() {
            let (ix, iy, jx, jy) = (a % 2, a / 2, b % 2, b / 2);
            *v = hy / hx * k[ix][jx] * m[iy][jy] + hx / hy * m[ix][jx] * k[iy][jy];
        }
    }
    out
}

pub fn element_mass<T: Real>(dim: usize, h: [f64; 2]) -> Vec<Vec<T>> {
    let m = unit_mass::<T>();
    let hx = T::from_f64(h[0]);
    if dim == 1 {
        return (0..2).map(|i| (0..2).map(|j| m[i][j] * hx).collect()).collect();
    }
    let hy = T::from_f64(h[1]);
    let mut out = vec![vec![T::zero(); 4]; 4];
    for (a, row) in out.iter_mut().enumerate() {
        for (b, v) in row.iter_mut().enumerate() {
            let (ix, iy, jx, jy) = (a % 2, a / 2, b % 2, b / 2);
            *v = hx * hy * m[ix][jx] * m[iy][jy];
        }
    }
    out
}

fn assemble<T: Real>(mesh: &CartesianMesh, local: &[Vec<T>], scale: impl Fn(usize) -> T) -> SparseSymmetric<T> {
    let nloc = local.len();
    let mut triplets = Vec::with_capacity(mesh.element_count() * nloc * (nloc + 1) / 2);
    for e in 0..mesh.element_count() {
        let nodes = mesh.element_nodes(e);
        let s = scale(e);
        for a in 0..nloc {
            for b in 0..=a {
                triplets.push((nodes[a], nodes[b], s * local[a][b]));
            }
        }
    }
    SparseSymmetric::from_triplets(mesh.node_count(), triplets)
}

/// Stiffness matrix `(A∇φ_j, ∇φ_i)` over all fine nodes (Dirichlet rows
/// included; restrict with [`SparseSymmetric::submatrix`] on the free nodes).
pub fn assemble_stiffness<T: Real>(space: &FineSpace, a: &CoefficientField) -> Result<SparseSymmetric<T>> {
    let values = a.sample(space.mesh())?;
    Ok(assemble_stiffness_with(space.mesh(), &values))
}

/// Stiffness matrix for explicit per-element coefficient values.
pub fn assemble_stiffness_with<T: Real>(mesh: &CartesianMesh, values: &[f64]) -> SparseSymmetric<T> {
    assert_eq!(values.len(), mesh.element_count());
    let local = element_stiffness::<T>(mesh.dim(), [mesh.element_size(0), mesh.element_size(1)]);
    assemble(mesh, &local, |e| T::from_f64(values[e]))
}

pub fn assemble_mass<T: Real>(space: &FineSpace) -> SparseSymmetric<T> {
    assemble_mass_on(space.mesh())
}

pub fn assemble_mass_on<T: Real>(mesh: &CartesianMesh) -> SparseSymmetric<T> {
    let local = element_mass::<T>(mesh.dim(), [mesh.element_size(0), mesh.element_size(1)]);
    assemble(mesh, &local, |_| T::one())
}

/// Precomputed quadrature for load vectors on a fine mesh.
#[derive(Debug, Clone)]
pub struct LoadQuadrature<T> {
    /// Offsets of the points within an element, in units of the element size.
    offsets: Vec<[f64; 2]>,
    /// Weight times element volume at each point.
    weights: Vec<T>,
    /// Shape function values `shape[q][a]`.
    shape: Vec<Vec<T>>,
}

impl<T: Real> LoadQuadrature<T> {
    pub fn new(mesh: &CartesianMesh, points: usize) -> Self {
        let (s, w) = gauss_legendre::<T>(points);
        let dim = mesh.dim();
        let vol = T::from_f64(mesh.element_volume());
        let mut offsets = Vec::new();
        let mut weights = Vec::new();
        let mut shape = Vec::new();
        let ny = if dim == 2 { points } else { 1 };
        for qy in 0..ny {
            for qx in 0..points {
                let (sx, wx) = (s[qx], w[qx]);
                let (sy, wy) = if dim == 2 { (s[qy], w[qy]) } else { (T::zero(), T::one()) };
                offsets.push([sx.to_f64(), sy.to_f64()]);
                weights.push(wx * wy * vol);
                let one = T::one();
                let phi_x = [one - sx, sx];
                if dim == 1 {
                    shape.push(phi_x.to_vec());
                } else {
                    let phi_y = [one - sy, sy];
                    shape.push(vec![phi_x[0] * phi_y[0], phi_x[1] * phi_y[0], phi_x[0] * phi_y[1], phi_x[1] * phi_y[1]]);
                }
            }
        }
        Self {
            offsets,
            weights,
            shape,
        }
    }

    /// `∫ g φ_i` for every node `i`.
    pub fn integrate(&self, mesh: &CartesianMesh, g: impl Fn(&[f64]) -> f64) -> Vec<T> {
        let dim = mesh.dim();
        let h = [mesh.element_size(0), mesh.element_size(1)];
        let mut out = vec![T::zero(); mesh.node_count()];
        let mut x = [0.0; 2];
        for e in 0..mesh.element_count() {
            let (lo, _) = mesh.element_bounds(e);
            let nodes = mesh.element_nodes(e);
            for (q, off) in self.offsets.iter().enumerate() {
                for a in 0..dim {
                    x[a] = lo[a] + off[a] * h[a];
                }
                let v = T::from_f64(g(&x[..dim])) * self.weights[q];
                if v == T::zero() {
                    continue;
                }
                for (b, &n) in nodes.iter().enumerate() {
                    out[n] += v * self.shape[q][b];
                }
            }
        }
        out
    }
}

/// Load vector `(f(·, t), φ_i)` over all fine nodes.
pub fn assemble_load<T: Real>(space: &FineSpace, f: &SourceTerm, t: f64) -> Vec<T> {
    let quad = LoadQuadrature::<T>::new(space.mesh(), space.quadrature_points());
    quad.integrate(space.mesh(), |x| f.eval(x, t))
}

/// Fine-scale reference solution with the BDF schedule of [`march`]. States
/// are free-node vectors.
pub fn fine_reference_solve<T: Real>(
    space: &FineSpace,
    a: &CoefficientField,
    f: &SourceTerm,
    u0: Option<&[T]>,
    grid: &TimeGrid,
    options: &MarchOptions,
) -> Result<MarchResult<T>> {
    if let Some(u0) = u0 {
        if u0.len() != space.dof_count() {
            return Err(Error::InvalidInput(format!(
                "initial state has {} entries, the fine space has {} free dofs",
                u0.len(),
                space.dof_count()
            )));
        }
    }
    let free = space.free_nodes();
    let k = assemble_stiffness::<T>(space, a)?.submatrix(free);
    let m = assemble_mass::<T>(space).submatrix(free);
    let quad = LoadQuadrature::<T>::new(space.mesh(), space.quadrature_points());
    let load = |t: f64| space.restrict(&quad.integrate(space.mesh(), |x| f.eval(x, t)));
    let start = u0.map(<[T]>::to_vec).unwrap_or_else(|| vec![T::zero(); space.dof_count()]);
    march(&k, &m, load, grid, StateHistory::starting_at(0.0, start), options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn space_1d(n: usize) -> FineSpace {
        FineSpace::new(NestedRefinement::unit(1, 1.0, 1.0 / n as f64).unwrap(), 4)
    }

    #[test]
    fn unit_coefficient_stiffness_row() {
        let s = space_1d(4);
        let a = CoefficientField::constant(1, 1.0).unwrap();
        let k = assemble_stiffness::<f64>(&s, &a).unwrap();
        assert_eq!((k.get(2, 1), k.get(2, 2), k.get(2, 3)), (-4.0, 8.0, -4.0));
    }

    #[test]
    fn piecewise_coefficient_stiffness() {
        let s = space_1d(4);
        let a = CoefficientField::from_values(1, 0.5, vec![1.0, 2.0], 1.0, 2.0).unwrap();
        let k = assemble_stiffness::<f64>(&s, &a).unwrap();
        assert_eq!(k.get(1, 2), -4.0);
        assert_eq!(k.get(2, 3), -8.0);
        assert_eq!(k.get(2, 2), 12.0);
    }

    #[test]
    fn constants_lie_in_the_stiffness_kernel() {
        for dim in 1..=2 {
            let r = NestedRefinement::unit(dim, 0.5, 0.125).unwrap();
            let s = FineSpace::new(r, 4);
            let a = CoefficientField::generate(CoefficientKind::Random, dim, 0.125, (0.1, 1.0), 5, 1.0).unwrap();
            let k = assemble_stiffness::<f64>(&s, &a).unwrap();
            let r = k.matvec(&vec![1.0; s.node_count()]);
            assert!(r.iter().all(|v| v.abs() < 1e-12));
            assert!(k.is_well_formed());
        }
    }

    #[test]
    fn mass_diagonal_and_total() {
        let s = space_1d(4);
        let m = assemble_mass::<f64>(&s);
        assert!((m.get(2, 2) - 1.0 / 6.0).abs() < 1e-15);
        let ones = vec![1.0; s.node_count()];
        assert!((m.quadratic_form(&ones) - 1.0).abs() < 1e-14);
        let s2 = FineSpace::new(NestedRefinement::unit(2, 0.5, 0.125).unwrap(), 4);
        let m2 = assemble_mass::<f64>(&s2);
        assert!((m2.quadratic_form(&vec![1.0; s2.node_count()]) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn load_of_one_equals_mass_row_sums() {
        let s = FineSpace::new(NestedRefinement::unit(2, 0.5, 0.125).unwrap(), 3);
        let m = assemble_mass::<f64>(&s);
        let row_sums = m.matvec(&vec![1.0; s.node_count()]);
        let load = assemble_load::<f64>(&s, &SourceTerm::constant(1.0), 0.0);
        for (a, b) in load.iter().zip(&row_sums) {
            assert!((a - b).abs() < 1e-15);
        }
        let zero = assemble_load::<f64>(&s, &SourceTerm::zero(), 0.3);
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn example_one_load_matches_dense_quadrature() {
        let s = FineSpace::new(NestedRefinement::unit(2, 0.25, 1.0 / 16.0).unwrap(), 6);
        let f = SourceTerm::example1();
        let t = PI / 2.0;
        let load = assemble_load::<f64>(&s, &f, t);
        let node = s.mesh().node_id([5, 9]);
        let [xc, yc] = s.mesh().node_coords(node);
        let h = 1.0 / 16.0;
        // Independent oracle: 12-point Gauss on a 4 × 4 subdivision of each
        // quadrant of the hat support, where the integrand is smooth.
        let (gx, gw) = gauss_legendre::<f64>(12);
        let sub = 4;
        let w = h / sub as f64;
        let mut oracle = 0.0;
        for cj in 0..2 * sub {
            for ci in 0..2 * sub {
                let (x0, y0) = (xc - h + ci as f64 * w, yc - h + cj as f64 * w);
                for (a, &sa) in gx.iter().enumerate() {
                    for (b, &sb) in gx.iter().enumerate() {
                        let (x, y) = (x0 + sa * w, y0 + sb * w);
                        let hat = (1.0 - (x - xc).abs() / h) * (1.0 - (y - yc).abs() / h);
                        oracle += gw[a] * gw[b] * w * w * f.eval(&[x, y], t) * hat;
                    }
                }
            }
        }
        assert!(((load[node] - oracle) / oracle).abs() < 1e-12, "{} vs {oracle}", load[node]);
    }

    #[test]
    fn sine_load_matches_closed_form_hat_integral() {
        // 1D: ∫ sin(πx) φ_i against the closed form for a hat at x_i.
        let s = FineSpace::new(NestedRefinement::unit(1, 1.0, 0.125).unwrap(), 8);
        let f = SourceTerm::new("sinpi", |x, _| (PI * x[0]).sin());
        let load = assemble_load::<f64>(&s, &f, 0.0);
        let h = 1.0 / 8.0;
        let xi = 3.0 * h;
        let exact = (PI * xi).sin() * 2.0 * (1.0 - (PI * h).cos()) / (PI * PI * h);
        assert!(((load[3] - exact) / exact).abs() < 1e-12);
    }
}
