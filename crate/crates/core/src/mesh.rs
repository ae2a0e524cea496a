//! Uniform Cartesian meshes of d-rectangles (d = 1, 2), nested refinement,
//! element patches and element distance.
//!
//! Elements and nodes are numbered lexicographically with the first axis
//! running fastest. One-dimensional meshes use a single cell along the
//! (unused) second axis so that all index arithmetic is shared.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

pub type MultiIndex = [usize; 2];

#[derive(Debug, Clone, PartialEq)]
pub struct CartesianMesh {
    dim: usize,
    lower: [f64; 2],
    upper: [f64; 2],
    cells: [usize; 2],
}

impl CartesianMesh {
    /// Mesh of `cells[a]` elements along each axis of the box `[lower, upper]`.
    pub fn new(dim: usize, lower: &[f64], upper: &[f64], cells: &[usize]) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::Config(format!("dimension must be 1 or 2, got {dim}")));
        }
        if lower.len() != dim || upper.len() != dim || cells.len() != dim {
            return Err(Error::InvalidInput(format!(
                "mesh bounds and cell counts must have {dim} entries"
            )));
        }
        let mut mesh = Self {
            dim,
            lower: [0.0; 2],
            upper: [1.0; 2],
            cells: [1; 2],
        };
        for a in 0..dim {
            if cells[a] == 0 {
                return Err(Error::InvalidInput(format!("axis {a} has zero elements")));
            }
            if !(upper[a] > lower[a]) {
                return Err(Error::InvalidInput(format!("axis {a} has an empty extent")));
            }
            mesh.lower[a] = lower[a];
            mesh.upper[a] = upper[a];
            mesh.cells[a] = cells[a];
        }
        Ok(mesh)
    }

    /// Unit box `(0,1)^d` with `n` elements per axis.
    pub fn unit(dim: usize, n: usize) -> Result<Self> {
        Self::new(dim, &vec![0.0; dim], &vec![1.0; dim], &vec![n; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells[..self.dim]
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower[..self.dim]
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper[..self.dim]
    }

    pub fn element_count(&self) -> usize {
        self.cells[0] * self.cells[1]
    }

    pub fn node_count(&self) -> usize {
        (0..self.dim).map(|a| self.cells[a] + 1).product()
    }

    /// Nodes per axis (1 along the unused axis of a 1D mesh).
    pub fn nodes_per_axis(&self) -> MultiIndex {
        let mut n = [1, 1];
        for a in 0..self.dim {
            n[a] = self.cells[a] + 1;
        }
        n
    }

    pub fn element_size(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / self.cells[axis] as f64
    }

    /// Largest element side length.
    pub fn mesh_size(&self) -> f64 {
        (0..self.dim).map(|a| self.element_size(a)).fold(0.0, f64::max)
    }

    pub fn element_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.element_size(a)).product()
    }

    pub fn check_element(&self, id: usize) -> Result<()> {
        if id < self.element_count() {
            Ok(())
        } else {
            Err(Error::UnknownElement {
                id,
                count: self.element_count(),
            })
        }
    }

    pub fn element_index(&self, id: usize) -> MultiIndex {
        [id % self.cells[0], id / self.cells[0]]
    }

    pub fn element_id(&self, mi: MultiIndex) -> usize {
        mi[0] + self.cells[0] * mi[1]
    }

    pub fn node_index(&self, id: usize) -> MultiIndex {
        let n = self.nodes_per_axis();
        [id % n[0], id / n[0]]
    }

    pub fn node_id(&self, mi: MultiIndex) -> usize {
        mi[0] + self.nodes_per_axis()[0] * mi[1]
    }

    pub fn node_coords(&self, id: usize) -> [f64; 2] {
        let mi = self.node_index(id);
        let mut x = [0.0; 2];
        for a in 0..self.dim {
            x[a] = self.lower[a] + mi[a] as f64 * self.element_size(a);
        }
        x
    }

    pub fn is_boundary_node(&self, id: usize) -> bool {
        let mi = self.node_index(id);
        (0..self.dim).any(|a| mi[a] == 0 || mi[a] == self.cells[a])
    }

    /// Lower-left corner and upper-right corner of an element.
    pub fn element_bounds(&self, id: usize) -> ([f64; 2], [f64; 2]) {
        let mi = self.element_index(id);
        let mut lo = [0.0; 2];
        let mut hi = [0.0; 2];
        for a in 0..self.dim {
            let h = self.element_size(a);
            lo[a] = self.lower[a] + mi[a] as f64 * h;
            hi[a] = lo[a] + h;
        }
        (lo, hi)
    }

    /// The `2^d` vertex node ids of an element, in lexicographic order.
    pub fn element_nodes(&self, id: usize) -> Vec<usize> {
        let mi = self.element_index(id);
        if self.dim == 1 {
            vec![mi[0], mi[0] + 1]
        } else {
            let n0 = self.cells[0] + 1;
            let base = mi[0] + n0 * mi[1];
            vec![base, base + 1, base + n0, base + n0 + 1]
        }
    }

    /// Element containing the point (ties go to the higher-index element,
    /// clamped at the upper boundary).
    pub fn locate(&self, x: &[f64]) -> usize {
        let mut mi = [0, 0];
        for a in 0..self.dim {
            let s = ((x[a] - self.lower[a]) / self.element_size(a)).floor();
            mi[a] = (s.max(0.0) as usize).min(self.cells[a] - 1);
        }
        self.element_id(mi)
    }

    /// Elements sharing at least one point with the closure of `id`
    /// (including `id` itself).
    pub fn neighbors(&self, id: usize) -> Vec<usize> {
        self.chebyshev_ball(id, 1)
    }

    fn chebyshev_ball(&self, id: usize, radius: usize) -> Vec<usize> {
        let c = self.element_index(id);
        let mut lo = [0, 0];
        let mut hi = [0, 0];
        for a in 0..2 {
            lo[a] = c[a].saturating_sub(radius);
            hi[a] = c[a].saturating_add(radius).min(self.cells[a] - 1);
        }
        let mut out = Vec::with_capacity((hi[0] - lo[0] + 1) * (hi[1] - lo[1] + 1));
        for j in lo[1]..=hi[1] {
            for i in lo[0]..=hi[0] {
                out.push(self.element_id([i, j]));
            }
        }
        out
    }

    /// All element faces as `(axis, adjacent elements)`; interior faces list
    /// two elements, boundary faces one.
    pub fn faces(&self) -> Vec<(usize, Vec<usize>)> {
        let mut faces = Vec::new();
        for axis in 0..self.dim {
            let other = 1 - axis;
            let other_count = if other < self.dim { self.cells[other] } else { 1 };
            for k in 0..other_count {
                for s in 0..=self.cells[axis] {
                    let mut adj = Vec::with_capacity(2);
                    for e in [s.wrapping_sub(1), s] {
                        if e < self.cells[axis] {
                            let mut mi = [0, 0];
                            mi[axis] = e;
                            mi[other] = k;
                            adj.push(self.element_id(mi));
                        }
                    }
                    faces.push((axis, adj));
                }
            }
        }
        faces
    }
}

/// A coarse mesh together with a fine mesh obtained by splitting every coarse
/// element into `ratio[a]` pieces along each axis.
#[derive(Debug, Clone, PartialEq)]
pub struct NestedRefinement {
    coarse: CartesianMesh,
    fine: CartesianMesh,
    ratio: [usize; 2],
}

impl NestedRefinement {
    pub fn new(coarse: CartesianMesh, ratio: usize) -> Result<Self> {
        if ratio == 0 {
            return Err(Error::Config("refinement ratio H/h must be at least 1".into()));
        }
        let dim = coarse.dim();
        let cells: Vec<usize> = coarse.cells().iter().map(|&c| c * ratio).collect();
        let fine = CartesianMesh::new(dim, coarse.lower(), coarse.upper(), &cells)?;
        let mut r = [1, 1];
        for a in r.iter_mut().take(dim) {
            *a = ratio;
        }
        Ok(Self { coarse, fine, ratio: r })
    }

    /// Unit box with coarse size `h_coarse` and fine size `h_fine`; both must
    /// be reciprocals of integers and `h_fine` must divide `h_coarse`.
    pub fn unit(dim: usize, h_coarse: f64, h_fine: f64) -> Result<Self> {
        let nc = reciprocal_count(h_coarse, "H")?;
        let nf = reciprocal_count(h_fine, "h")?;
        if nf % nc != 0 {
            return Err(Error::Config(format!("h = {h_fine} does not divide H = {h_coarse}")));
        }
        Self::new(CartesianMesh::unit(dim, nc)?, nf / nc)
    }

    pub fn coarse(&self) -> &CartesianMesh {
        &self.coarse
    }

    pub fn fine(&self) -> &CartesianMesh {
        &self.fine
    }

    pub fn dim(&self) -> usize {
        self.coarse.dim()
    }

    pub fn ratio(&self) -> usize {
        self.ratio[0]
    }

    /// Fine elements tiling coarse element `k`.
    pub fn fine_elements(&self, k: usize) -> Vec<usize> {
        let c = self.coarse.element_index(k);
        let mut out = Vec::with_capacity(self.ratio[0] * self.ratio[1]);
        for j in 0..self.ratio[1] {
            for i in 0..self.ratio[0] {
                out.push(self.fine.element_id([c[0] * self.ratio[0] + i, c[1] * self.ratio[1] + j]));
            }
        }
        out
    }

    pub fn coarse_of_fine_element(&self, e: usize) -> usize {
        let f = self.fine.element_index(e);
        self.coarse.element_id([f[0] / self.ratio[0], f[1] / self.ratio[1]])
    }

    /// Fine nodes in the closure of coarse element `k`.
    pub fn fine_nodes(&self, k: usize) -> Vec<usize> {
        let c = self.coarse.element_index(k);
        let dim = self.dim();
        let ny = if dim == 2 { self.ratio[1] + 1 } else { 1 };
        let mut out = Vec::new();
        for j in 0..ny {
            for i in 0..=self.ratio[0] {
                out.push(self.fine.node_id([c[0] * self.ratio[0] + i, c[1] * self.ratio[1] + j]));
            }
        }
        out
    }

    /// Coarse elements whose closure contains fine node `n`.
    pub fn coarse_elements_at_node(&self, n: usize) -> Vec<usize> {
        let mi = self.fine.node_index(n);
        let mut per_axis: [Vec<usize>; 2] = [vec![0], vec![0]];
        for a in 0..self.dim() {
            let r = self.ratio[a];
            let cells = self.coarse.cells()[a];
            let q = mi[a] / r;
            per_axis[a] = if mi[a] % r == 0 {
                [q.wrapping_sub(1), q].into_iter().filter(|&e| e < cells).collect()
            } else {
                vec![q]
            };
        }
        let mut out = Vec::new();
        for &j in &per_axis[1] {
            for &i in &per_axis[0] {
                out.push(self.coarse.element_id([i, j]));
            }
        }
        out
    }

    /// Coarse element owning fine node `n` (the lowest-index element whose
    /// closure contains it).
    pub fn owner(&self, n: usize) -> usize {
        self.coarse_elements_at_node(n).into_iter().min().unwrap()
    }

    /// Fills the fine-degree-of-freedom sets of a patch.
    ///
    /// Interior nodes lie in the open patch and off `∂Ω`; the remaining nodes
    /// of the patch closure are boundary nodes.
    pub fn patch_dofs(&self, patch: &Patch) -> PatchDofs {
        let members: BTreeSet<usize> = patch.elements.iter().copied().collect();
        let mut nodes = BTreeSet::new();
        for &k in &patch.elements {
            nodes.extend(self.fine_nodes(k));
        }
        let mut interior = Vec::new();
        let mut boundary = Vec::new();
        for n in nodes {
            let inside = !self.fine.is_boundary_node(n)
                && self.coarse_elements_at_node(n).iter().all(|k| members.contains(k));
            if inside {
                interior.push(n);
            } else {
                boundary.push(n);
            }
        }
        PatchDofs { interior, boundary }
    }
}

fn reciprocal_count(h: f64, name: &str) -> Result<usize> {
    if !(h > 0.0 && h <= 1.0) {
        return Err(Error::Config(format!("{name} = {h} must lie in (0, 1]")));
    }
    let n = (1.0 / h).round();
    if ((1.0 / n) - h).abs() > 1e-12 * h {
        return Err(Error::Config(format!("{name} = {h} is not the reciprocal of an integer")));
    }
    Ok(n as usize)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    pub center: Vec<usize>,
    pub order: usize,
    /// Sorted coarse element ids.
    pub elements: Vec<usize>,
}

impl Patch {
    pub fn contains(&self, k: usize) -> bool {
        self.elements.binary_search(&k).is_ok()
    }

    pub fn is_global(&self, mesh: &CartesianMesh) -> bool {
        self.elements.len() == mesh.element_count()
    }
}

/// Fine nodes of a patch split by whether they carry a degree of freedom of
/// `H¹₀(patch)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchDofs {
    pub interior: Vec<usize>,
    pub boundary: Vec<usize>,
}

fn validate_set(mesh: &CartesianMesh, s: &[usize]) -> Result<()> {
    if s.is_empty() {
        return Err(Error::InvalidInput("element set must be nonempty".into()));
    }
    s.iter().try_for_each(|&k| mesh.check_element(k))
}

fn chebyshev(a: MultiIndex, b: MultiIndex) -> usize {
    a[0].abs_diff(b[0]).max(a[1].abs_diff(b[1]))
}

/// The order-`ell` patch `N^ℓ(S)`: `N⁰(S) = S` and each further layer adds
/// every element whose closure meets the closure of the current set.
pub fn build_patch(mesh: &CartesianMesh, s: &[usize], ell: usize) -> Result<Patch> {
    validate_set(mesh, s)?;
    let mut center: Vec<usize> = s.to_vec();
    center.sort_unstable();
    center.dedup();
    let elements = if center.len() == 1 {
        mesh.chebyshev_ball(center[0], ell)
    } else {
        let idx: Vec<MultiIndex> = center.iter().map(|&k| mesh.element_index(k)).collect();
        (0..mesh.element_count())
            .filter(|&e| {
                let m = mesh.element_index(e);
                idx.iter().any(|&c| chebyshev(c, m) <= ell)
            })
            .collect()
    };
    Ok(Patch {
        center,
        order: ell,
        elements,
    })
}

/// Smallest `μ` with `S ∩ N^μ(K) ≠ ∅`.
pub fn element_distance(mesh: &CartesianMesh, s: &[usize], k: usize) -> Result<usize> {
    validate_set(mesh, s)?;
    mesh.check_element(k)?;
    let c = mesh.element_index(k);
    Ok(s.iter().map(|&g| chebyshev(mesh.element_index(g), c)).min().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// One application of `N¹` by explicit closure intersection.
    fn grow_once(mesh: &CartesianMesh, set: &BTreeSet<usize>) -> BTreeSet<usize> {
        let mut out = set.clone();
        for e in 0..mesh.element_count() {
            let (elo, ehi) = mesh.element_bounds(e);
            let touches = set.iter().any(|&s| {
                let (slo, shi) = mesh.element_bounds(s);
                (0..mesh.dim()).all(|a| elo[a] <= shi[a] + 1e-12 && slo[a] <= ehi[a] + 1e-12)
            });
            if touches {
                out.insert(e);
            }
        }
        out
    }

    fn brute_patch(mesh: &CartesianMesh, s: &[usize], ell: usize) -> Vec<usize> {
        let mut set: BTreeSet<usize> = s.iter().copied().collect();
        for _ in 0..ell {
            set = grow_once(mesh, &set);
        }
        set.into_iter().collect()
    }

    #[test]
    fn one_dimensional_patch() {
        let m = CartesianMesh::unit(1, 8).unwrap();
        assert_eq!(build_patch(&m, &[3], 1).unwrap().elements, vec![2, 3, 4]);
    }

    #[test]
    fn figure_one_patch_and_distance() {
        let m = CartesianMesh::new(2, &[0.0, 0.0], &[11.0, 9.0], &[11, 9]).unwrap();
        let k = m.element_id([5, 4]);
        let p = build_patch(&m, &[k], 3).unwrap();
        let mut expected = Vec::new();
        for j in 1..=7 {
            for i in 2..=8 {
                expected.push(m.element_id([i, j]));
            }
        }
        assert_eq!(p.elements, expected);
        let g1 = m.element_id([3, 6]);
        assert_eq!(element_distance(&m, &[g1], k).unwrap(), 2);
    }

    #[test]
    fn clipping_and_global_patch() {
        let m = CartesianMesh::unit(2, 5).unwrap();
        let corner = build_patch(&m, &[0], 2).unwrap();
        assert_eq!(corner.elements.len(), 9);
        assert!(build_patch(&m, &[12], 5).unwrap().is_global(&m));
    }

    #[test]
    fn distances() {
        let m = CartesianMesh::unit(1, 8).unwrap();
        assert_eq!(element_distance(&m, &[4], 4).unwrap(), 0);
        assert_eq!(element_distance(&m, &[0], 5).unwrap(), 5);
        let brute = (0..).find(|&mu| brute_patch(&m, &[5], mu).contains(&0)).unwrap();
        assert_eq!(brute, 5);
    }

    #[test]
    fn unknown_element_is_an_input_error() {
        let m = CartesianMesh::unit(1, 4).unwrap();
        assert!(matches!(build_patch(&m, &[4], 1), Err(Error::UnknownElement { id: 4, count: 4 })));
        assert!(build_patch(&m, &[], 1).is_err());
    }

    #[test]
    fn faces_are_shared_by_one_or_two_elements() {
        for dim in 1..=2 {
            let m = CartesianMesh::new(dim, &vec![0.0; dim], &vec![1.0; dim], &[3, 4][..dim]).unwrap();
            let faces = m.faces();
            let boundary = faces.iter().filter(|f| f.1.len() == 1).count();
            assert!(faces.iter().all(|f| (1..=2).contains(&f.1.len())));
            let expected_boundary = if dim == 1 { 2 } else { 2 * 3 + 2 * 4 };
            assert_eq!(boundary, expected_boundary);
        }
    }

    #[test]
    fn refinement_tiles_coarse_elements() {
        let r = NestedRefinement::unit(2, 0.25, 1.0 / 16.0).unwrap();
        let mut seen = vec![0usize; r.fine().element_count()];
        for k in 0..r.coarse().element_count() {
            let (clo, chi) = r.coarse().element_bounds(k);
            for e in r.fine_elements(k) {
                seen[e] += 1;
                assert_eq!(r.coarse_of_fine_element(e), k);
                let (lo, hi) = r.fine().element_bounds(e);
                assert!((0..2).all(|a| lo[a] >= clo[a] - 1e-14 && hi[a] <= chi[a] + 1e-14));
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
        assert!(NestedRefinement::unit(1, 0.25, 0.1).is_err());
        assert!(NestedRefinement::unit(1, 0.25, 1.0 / 6.0).is_err());
    }

    #[test]
    fn patch_dofs_in_one_dimension() {
        let r = NestedRefinement::unit(1, 0.25, 1.0 / 16.0).unwrap();
        let p = build_patch(r.coarse(), &[0], 1).unwrap();
        let d = r.patch_dofs(&p);
        // Patch [0, 1/2]: node 0 on ∂Ω, node 8 on the patch boundary.
        assert_eq!(d.interior, (1..8).collect::<Vec<_>>());
        assert_eq!(d.boundary, vec![0, 8]);
    }

    proptest! {
        #[test]
        fn patches_grow_monotonically_and_compose(
            dim in 1usize..=2, n in 1usize..=6, seed in 0usize..1000, ell in 0usize..5,
        ) {
            let m = CartesianMesh::unit(dim, n).unwrap();
            let count = m.element_count();
            let s = vec![seed % count, (seed / 7) % count];
            let p = build_patch(&m, &s, ell).unwrap();
            let q = build_patch(&m, &s, ell + 1).unwrap();
            prop_assert!(p.elements.iter().all(|e| q.contains(*e)));
            prop_assert_eq!(&p.elements, &brute_patch(&m, &s, ell));
            if ell >= n {
                prop_assert!(p.is_global(&m));
            }
        }

        #[test]
        fn distance_is_symmetric(n in 1usize..=8, a in 0usize..64, b in 0usize..64) {
            let m = CartesianMesh::unit(2, n).unwrap();
            let (g, k) = (a % m.element_count(), b % m.element_count());
            prop_assert_eq!(element_distance(&m, &[g], k).unwrap(), element_distance(&m, &[k], g).unwrap());
        }
    }
}
