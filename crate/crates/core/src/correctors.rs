//! Localized correctors, enriched corrections and the multiscale basis.
//!
//! Every patch problem is posed in `W(N^ℓ(K))`: fine functions vanishing on
//! the patch boundary whose Legendre moments on the patch elements are zero.
//! One factorization per patch serves the level-0 basis and every enrichment
//! level.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::finescale::{element_mass, element_stiffness, FineSpace};
use crate::linalg::{CsrMatrix, SaddlePointSolver, SparseSymmetric};
use crate::mesh::{build_patch, element_distance, Patch, PatchDofs};
use crate::scalar::Real;
use crate::spaces::CoarseSpaces;

/// Localization parameter meaning "the whole domain".
pub const GLOBAL_PATCH: usize = usize::MAX;

/// How enrichment levels are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EnrichmentMode {
    /// Same-patch solves with the mass right-hand side of the previous level.
    #[default]
    Practical,
    /// Level 1 as a sum of element-wise enriched correctors with the
    /// schedule `λ_G = ℓ − dist(G, K)`; deeper levels as in `Practical`.
    Elementwise,
}

impl EnrichmentMode {
    pub fn name(self) -> &'static str {
        match self {
            EnrichmentMode::Practical => "practical",
            EnrichmentMode::Elementwise => "elementwise",
        }
    }
}

impl FromStr for EnrichmentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "practical" => Ok(EnrichmentMode::Practical),
            "elementwise" => Ok(EnrichmentMode::Elementwise),
            other => Err(Error::Config(format!(
                "unknown enrichment mode `{other}` (expected practical|elementwise)"
            ))),
        }
    }
}

/// Sparse vector over full fine-node ids (sorted).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVector<T> {
    pub indices: Vec<usize>,
    pub values: Vec<T>,
}

impl<T: Real> SparseVector<T> {
    pub fn new(indices: Vec<usize>, values: Vec<T>) -> Self {
        assert_eq!(indices.len(), values.len());
        debug_assert!(indices.windows(2).all(|w| w[0] < w[1]));
        Self { indices, values }
    }

    pub fn gather(full: &[T], indices: &[usize]) -> Self {
        Self::new(indices.to_vec(), indices.iter().map(|&i| full[i]).collect())
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn to_dense(&self, n: usize) -> Vec<T> {
        let mut out = vec![T::zero(); n];
        self.add_to(&mut out, T::one());
        out
    }

    /// `out += s · self`.
    pub fn add_to(&self, out: &mut [T], s: T) {
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i] += s * v;
        }
    }

    /// Nodes carrying a nonzero value.
    pub fn support(&self) -> Vec<usize> {
        self.indices
            .iter()
            .zip(&self.values)
            .filter(|(_, v)| **v != T::zero())
            .map(|(&i, _)| i)
            .collect()
    }
}

/// Fine-scale operators shared by all patch problems of one discretization.
#[derive(Debug, Clone)]
pub struct LodContext<T> {
    fine: FineSpace,
    spaces: CoarseSpaces<T>,
    coefficient: Vec<f64>,
    stiffness: SparseSymmetric<T>,
    mass: SparseSymmetric<T>,
    local_stiffness: Vec<Vec<T>>,
    local_mass: Vec<Vec<T>>,
}

impl<T: Real> LodContext<T> {
    /// `coefficient` holds one value per fine element.
    pub fn new(fine: FineSpace, spaces: CoarseSpaces<T>, coefficient: Vec<f64>) -> Result<Self> {
        let mesh = fine.mesh();
        if coefficient.len() != mesh.element_count() {
            return Err(Error::InvalidInput(format!(
                "{} coefficient values for {} fine elements",
                coefficient.len(),
                mesh.element_count()
            )));
        }
        if spaces.refinement().fine() != mesh {
            return Err(Error::InvalidInput("coarse spaces and fine space use different meshes".into()));
        }
        let stiffness = crate::finescale::assemble_stiffness_with(mesh, &coefficient);
        let mass = crate::finescale::assemble_mass_on(mesh);
        let h = [mesh.element_size(0), mesh.element_size(1)];
        Ok(Self {
            local_stiffness: element_stiffness(mesh.dim(), h),
            local_mass: element_mass(mesh.dim(), h),
            fine,
            spaces,
            coefficient,
            stiffness,
            mass,
        })
    }

    pub fn fine(&self) -> &FineSpace {
        &self.fine
    }

    pub fn spaces(&self) -> &CoarseSpaces<T> {
        &self.spaces
    }

    pub fn coefficient(&self) -> &[f64] {
        &self.coefficient
    }

    /// Stiffness over all fine nodes.
    pub fn stiffness(&self) -> &SparseSymmetric<T> {
        &self.stiffness
    }

    /// Mass over all fine nodes.
    pub fn mass(&self) -> &SparseSymmetric<T> {
        &self.mass
    }

    pub fn patch(&self, k: usize, ell: usize) -> Result<Patch> {
        build_patch(self.spaces.refinement().coarse(), &[k], ell)
    }

    fn element_apply(&self, local: &[Vec<T>], weight: impl Fn(usize) -> T, k: usize, v: &[T]) -> Vec<T> {
        let fine = self.fine.mesh();
        let mut out = vec![T::zero(); fine.node_count()];
        for e in self.spaces.refinement().fine_elements(k) {
            let nodes = fine.element_nodes(e);
            let w = weight(e);
            for (a, &na) in nodes.iter().enumerate() {
                let s: T = nodes.iter().enumerate().map(|(b, &nb)| local[a][b] * v[nb]).sum();
                out[na] += w * s;
            }
        }
        out
    }

    /// `(A∇v, ∇φ_n)_K` for every node `n`.
    pub fn element_stiffness_apply(&self, k: usize, v: &[T]) -> Vec<T> {
        self.element_apply(&self.local_stiffness, |e| T::from_f64(self.coefficient[e]), k, v)
    }

    /// `(v, φ_n)_K` for every node `n`.
    pub fn element_mass_apply(&self, k: usize, v: &[T]) -> Vec<T> {
        self.element_apply(&self.local_mass, |_| T::one(), k, v)
    }

    /// `‖A^{1/2}∇v‖²` over the coarse elements selected by `keep`.
    pub fn energy_where(&self, v: &[T], keep: impl Fn(usize) -> bool) -> T {
        let fine = self.fine.mesh();
        let refinement = self.spaces.refinement();
        let mut total = T::zero();
        for e in 0..fine.element_count() {
            if !keep(refinement.coarse_of_fine_element(e)) {
                continue;
            }
            let nodes = fine.element_nodes(e);
            let mut q = T::zero();
            for (a, &na) in nodes.iter().enumerate() {
                for (b, &nb) in nodes.iter().enumerate() {
                    q += v[na] * self.local_stiffness[a][b] * v[nb];
                }
            }
            total += T::from_f64(self.coefficient[e]) * q;
        }
        total
    }

    pub fn energy(&self, v: &[T]) -> T {
        self.stiffness.quadratic_form(v)
    }

    /// Energy of `v` outside the patch.
    pub fn exterior_energy(&self, v: &[T], patch: &Patch) -> T {
        self.energy_where(v, |k| !patch.contains(k))
    }
}

/// `[[A, Cᵀ], [C, 0]]` on the interior fine nodes of one patch, factored.
#[derive(Debug, Clone)]
pub struct PatchSaddleSystem<T> {
    patch: Patch,
    dofs: PatchDofs,
    solver: SaddlePointSolver<T>,
    mass: SparseSymmetric<T>,
}

impl<T: Real> PatchSaddleSystem<T> {
    pub fn new(ctx: &LodContext<T>, patch: Patch) -> Result<Self> {
        let dofs = ctx.spaces.refinement().patch_dofs(&patch);
        let a = ctx.stiffness.submatrix(&dofs.interior);
        let c = ctx.spaces.constraint_matrix(&patch, &dofs).matrix;
        let name = format!("patch around element(s) {:?} of order {}", patch.center, patch.order);
        let solver = SaddlePointSolver::new(a, c, &name).map_err(|e| match e {
            Error::Factorization { .. } | Error::InvalidInput(_) => Error::Config(e.to_string()),
            other => other,
        })?;
        let mass = ctx.mass.submatrix(&dofs.interior);
        Ok(Self {
            patch,
            dofs,
            solver,
            mass,
        })
    }

    pub fn patch(&self) -> &Patch {
        &self.patch
    }

    pub fn dofs(&self) -> &PatchDofs {
        &self.dofs
    }

    pub fn dim(&self) -> usize {
        self.solver.dim()
    }

    pub fn constraint_count(&self) -> usize {
        self.solver.constraint_count()
    }

    pub fn solver(&self) -> &SaddlePointSolver<T> {
        &self.solver
    }

    /// Values of a full nodal vector at the patch interior nodes.
    pub fn restrict(&self, full: &[T]) -> Vec<T> {
        self.dofs.interior.iter().map(|&n| full[n]).collect()
    }

    pub fn to_sparse(&self, local: Vec<T>) -> SparseVector<T> {
        SparseVector::new(self.dofs.interior.clone(), local)
    }

    /// The `w ∈ W(patch)` with `a(w, z) = (rhs, z)` for all `z ∈ W(patch)`;
    /// `rhs` is given at the patch interior nodes.
    pub fn solve_local(&self, rhs: &[T]) -> Vec<T> {
        self.solver.solve(rhs)
    }

    /// As [`Self::solve_local`] with a full nodal right-hand side.
    pub fn solve(&self, rhs_full: &[T]) -> SparseVector<T> {
        self.to_sparse(self.solve_local(&self.restrict(rhs_full)))
    }

    /// Patch-interior mass applied to a patch-interior vector.
    pub fn mass_apply(&self, local: &[T]) -> Vec<T> {
        self.mass.matvec(local)
    }

    pub fn stiffness_apply(&self, local: &[T]) -> Vec<T> {
        self.solver.stiffness().matvec(local)
    }
}

/// `C_K^[ℓ] v`: `a(C v, w)_{N^ℓ(K)} = a(v, w)_K` for `w ∈ W(N^ℓ(K))`.
pub fn element_corrector<T: Real>(ctx: &LodContext<T>, k: usize, ell: usize, v: &[T]) -> Result<SparseVector<T>> {
    let sys = PatchSaddleSystem::new(ctx, ctx.patch(k, ell)?)?;
    Ok(element_corrector_with(ctx, &sys, k, v))
}

pub fn element_corrector_with<T: Real>(
    ctx: &LodContext<T>,
    sys: &PatchSaddleSystem<T>,
    k: usize,
    v: &[T],
) -> SparseVector<T> {
    sys.solve(&ctx.element_stiffness_apply(k, v))
}

/// `D_G^[λ] v`: `a(D v, w)_{N^λ(G)} = −(v, w)_G` for `w ∈ W(N^λ(G))`.
pub fn enriched_corrector_elementwise<T: Real>(
    ctx: &LodContext<T>,
    g: usize,
    lambda: usize,
    v: &[T],
) -> Result<SparseVector<T>> {
    let sys = PatchSaddleSystem::new(ctx, ctx.patch(g, lambda)?)?;
    Ok(enriched_corrector_with(ctx, &sys, g, v))
}

pub fn enriched_corrector_with<T: Real>(
    ctx: &LodContext<T>,
    sys: &PatchSaddleSystem<T>,
    g: usize,
    v: &[T],
) -> SparseVector<T> {
    let mut rhs = ctx.element_mass_apply(g, v);
    rhs.iter_mut().for_each(|x| *x = -*x);
    sys.solve(&rhs)
}

/// Patch systems keyed by their element set.
#[derive(Debug, Default)]
pub struct PatchCache<T> {
    systems: HashMap<Vec<usize>, Arc<PatchSaddleSystem<T>>>,
}

impl<T: Real> PatchCache<T> {
    pub fn new() -> Self {
        Self { systems: HashMap::new() }
    }

    pub fn get(&mut self, ctx: &LodContext<T>, patch: Patch) -> Result<Arc<PatchSaddleSystem<T>>> {
        if let Some(sys) = self.systems.get(&patch.elements) {
            return Ok(Arc::clone(sys));
        }
        let key = patch.elements.clone();
        let sys = Arc::new(PatchSaddleSystem::new(ctx, patch)?);
        self.systems.insert(key, Arc::clone(&sys));
        Ok(sys)
    }

    pub fn len(&self) -> usize {
        self.systems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.systems.is_empty()
    }
}

/// `Λ̃_{K,i} = Π^xΛ_{K,i} − w` with `w ∈ W(N^ℓ(K))` the energy projection of
/// `Π^xΛ_{K,i}`, at the patch interior nodes.
pub fn lod_basis_function<T: Real>(ctx: &LodContext<T>, sys: &PatchSaddleSystem<T>, k: usize, i: usize) -> Result<Vec<T>> {
    let px = ctx.spaces.stabilized_basis_function(k, i);
    let local = sys.restrict(&px);
    let captured: T = local.iter().map(|v| v.abs()).sum();
    let total: T = px.iter().map(|v| v.abs()).sum();
    if (total - captured).abs() > T::from_f64(1e-12) * total {
        return Err(Error::Config(format!(
            "patch of order {} around element {k} does not contain the support of Π^xΛ; use ℓ ≥ 1",
            sys.patch.order
        )));
    }
    let w = sys.solve_local(&sys.stiffness_apply(&local));
    Ok(local.into_iter().zip(w).map(|(a, b)| a - b).collect())
}

/// The practical enrichment `a(Λ̌^ν, w) = −(Λ̌^{ν−1}, w)` on the same patch.
pub fn enrich_level<T: Real>(sys: &PatchSaddleSystem<T>, previous: &[T]) -> Vec<T> {
    let mut rhs = sys.mass_apply(previous);
    rhs.iter_mut().for_each(|x| *x = -*x);
    sys.solve_local(&rhs)
}

/// One basis column.
#[derive(Debug, Clone)]
pub struct BasisColumn<T> {
    pub element: usize,
    pub local: usize,
    /// 0 for `Λ̃`, `ν ≥ 1` for `Λ̌^ν`.
    pub level: usize,
    pub patch: Patch,
    pub values: SparseVector<T>,
}

/// `Ṽ_H^[ℓ] + Ŵ^{j,loc}` with columns ordered by `(ν, K, i)`.
#[derive(Debug, Clone)]
pub struct MultiscaleSpace<T> {
    columns: Vec<BasisColumn<T>>,
    levels: usize,
    /// Free fine dofs × columns.
    basis: CsrMatrix<T>,
}

impl<T: Real> MultiscaleSpace<T> {
    pub fn from_columns(fine: &FineSpace, columns: Vec<BasisColumn<T>>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for c in &columns {
            if !seen.insert((c.level, c.element, c.local)) {
                return Err(Error::InvalidInput(format!(
                    "duplicate basis column (K={}, i={}, ν={})",
                    c.element, c.local, c.level
                )));
            }
        }
        let levels = columns.iter().map(|c| c.level + 1).max().unwrap_or(0);
        let mut trip = Vec::new();
        for (col, c) in columns.iter().enumerate() {
            for (&n, &v) in c.values.indices.iter().zip(&c.values.values) {
                match fine.free_index(n) {
                    Some(d) => trip.push((d, col, v)),
                    None if v == T::zero() => {}
                    None => {
                        return Err(Error::InvalidInput(format!(
                            "basis column (K={}, i={}, ν={}) is nonzero on boundary node {n}",
                            c.element, c.local, c.level
                        )))
                    }
                }
            }
        }
        let basis = CsrMatrix::from_triplets(fine.dof_count(), columns.len(), trip);
        Ok(Self { columns, levels, basis })
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    /// `j + 1`.
    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Columns per level.
    pub fn block_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.levels];
        for c in &self.columns {
            sizes[c.level] += 1;
        }
        sizes
    }

    pub fn columns(&self) -> &[BasisColumn<T>] {
        &self.columns
    }

    pub fn column(&self, level: usize, element: usize, local: usize) -> Option<&BasisColumn<T>> {
        self.columns
            .iter()
            .find(|c| (c.level, c.element, c.local) == (level, element, local))
    }

    /// Free fine dofs × columns.
    pub fn basis_matrix(&self) -> &CsrMatrix<T> {
        &self.basis
    }

    /// Fine free-dof vector of a coefficient vector.
    pub fn lift(&self, coeffs: &[T]) -> Vec<T> {
        self.basis.matvec(coeffs)
    }

    /// `Bᵀ f` for a free-dof load vector.
    pub fn project_load(&self, f: &[T]) -> Vec<T> {
        self.basis.transpose_matvec(f)
    }

    /// `Bᵀ M B` for a free-dof operator `M`.
    pub fn galerkin(&self, m: &SparseSymmetric<T>) -> SparseSymmetric<T> {
        let mb = m.to_csr().matmul(&self.basis);
        let g = self.basis.transpose().matmul(&mb);
        let half = T::from_f64(0.5);
        SparseSymmetric::from_triplets(
            g.rows(),
            g.iter()
                .filter(|&(i, j, _)| i >= j)
                .map(|(i, j, v)| (i, j, if i == j { v } else { half * (v + g.get(j, i)) }))
                .collect::<Vec<_>>(),
        )
    }

    /// Writes `basis.bin` (per column: `u64` count, then `u64` node id and
    /// `f64` value pairs, little endian) and `basis_manifest.csv`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let bin_path = dir.join("basis.bin");
        let man_path = dir.join("basis_manifest.csv");
        let mut bin = BufWriter::new(File::create(&bin_path).map_err(|e| Error::io(&bin_path, e))?);
        let mut man = BufWriter::new(File::create(&man_path).map_err(|e| Error::io(&man_path, e))?);
        let io_bin = |e| Error::io(&bin_path, e);
        let io_man = |e| Error::io(&man_path, e);
        writeln!(man, "column,element,local,level,patch_order,patch_elements,nnz,offset").map_err(io_man)?;
        let mut offset = 0u64;
        for (col, c) in self.columns.iter().enumerate() {
            let order = if c.patch.order == GLOBAL_PATCH { "inf".to_string() } else { c.patch.order.to_string() };
            let elements: Vec<String> = c.patch.elements.iter().map(usize::to_string).collect();
            writeln!(
                man,
                "{col},{},{},{},{order},{},{},{offset}",
                c.element,
                c.local,
                c.level,
                elements.join(";"),
                c.values.nnz()
            )
            .map_err(io_man)?;
            bin.write_all(&(c.values.nnz() as u64).to_le_bytes()).map_err(io_bin)?;
            for (&n, &v) in c.values.indices.iter().zip(&c.values.values) {
                bin.write_all(&(n as u64).to_le_bytes()).map_err(io_bin)?;
                bin.write_all(&v.to_f64().to_le_bytes()).map_err(io_bin)?;
            }
            offset += 8 + 16 * c.values.nnz() as u64;
        }
        bin.flush().map_err(io_bin)?;
        man.flush().map_err(io_man)?;
        Ok(())
    }
}

fn map_collect<I: Send + Sync, R: Send>(items: &[I], f: impl Fn(&I) -> R + Send + Sync) -> Vec<R> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Level-0 columns only (the classical higher-order LOD space).
pub fn assemble_lod_basis<T: Real>(ctx: &LodContext<T>, ell: usize) -> Result<MultiscaleSpace<T>> {
    build_multiscale_space(ctx, 0, ell, EnrichmentMode::Practical)
}

/// Builds `j + 1` levels on patches of order `ell` (use [`GLOBAL_PATCH`] for
/// the whole domain).
pub fn build_multiscale_space<T: Real>(
    ctx: &LodContext<T>,
    j: usize,
    ell: usize,
    mode: EnrichmentMode,
) -> Result<MultiscaleSpace<T>> {
    if ell == 0 {
        return Err(Error::Config("the multiscale basis needs ℓ ≥ 1".into()));
    }
    let coarse = ctx.spaces.refinement().coarse();
    let nl = ctx.spaces.basis().local_count();
    // Elements sharing a patch share its factorization.
    let mut groups: BTreeMap<Vec<usize>, (Patch, Vec<usize>)> = BTreeMap::new();
    for k in 0..coarse.element_count() {
        let patch = ctx.patch(k, ell)?;
        groups.entry(patch.elements.clone()).or_insert_with(|| (patch, Vec::new())).1.push(k);
    }
    let groups: Vec<(Patch, Vec<usize>)> = groups.into_values().collect();
    type Block<T> = (usize, Vec<Vec<Vec<T>>>, Patch, Vec<usize>);
    let computed: Vec<Result<Vec<Block<T>>>> = map_collect(&groups, |(patch, members)| {
        let sys = PatchSaddleSystem::new(ctx, patch.clone())?;
        let mut out = Vec::with_capacity(members.len());
        for &k in members {
            let own_patch = ctx.patch(k, ell)?;
            // levels[ν][i]
            let mut levels: Vec<Vec<Vec<T>>> = vec![Vec::with_capacity(nl); j + 1];
            for i in 0..nl {
                levels[0].push(lod_basis_function(ctx, &sys, k, i)?);
            }
            for nu in 1..=j {
                for i in 0..nl {
                    let next = if nu == 1 && mode == EnrichmentMode::Elementwise {
                        elementwise_first_level(ctx, &sys, k, ell, &levels[0][i])?
                    } else {
                        enrich_level(&sys, &levels[nu - 1][i])
                    };
                    levels[nu].push(next);
                }
            }
            out.push((k, levels, own_patch, sys.dofs().interior.clone()));
        }
        Ok(out)
    });
    let mut per_element: Vec<Option<(Vec<Vec<Vec<T>>>, Patch, Vec<usize>)>> = vec![None; coarse.element_count()];
    for block in computed {
        for (k, levels, patch, interior) in block? {
            per_element[k] = Some((levels, patch, interior));
        }
    }
    let mut columns = Vec::with_capacity(coarse.element_count() * nl * (j + 1));
    for nu in 0..=j {
        for (k, entry) in per_element.iter().enumerate() {
            let (levels, patch, interior) = entry.as_ref().expect("every element belongs to a patch group");
            for (i, values) in levels[nu].iter().enumerate() {
                columns.push(BasisColumn {
                    element: k,
                    local: i,
                    level: nu,
                    patch: patch.clone(),
                    values: SparseVector::new(interior.clone(), values.clone()),
                });
            }
        }
    }
    MultiscaleSpace::from_columns(ctx.fine(), columns)
}

/// `Σ_{G ∈ N^ℓ(K)} D_G^[ℓ − dist(G,K)](v|_G)` at the interior nodes of `N^ℓ(K)`.
fn elementwise_first_level<T: Real>(
    ctx: &LodContext<T>,
    sys: &PatchSaddleSystem<T>,
    k: usize,
    ell: usize,
    v_local: &[T],
) -> Result<Vec<T>> {
    let n = ctx.fine.node_count();
    let v = sys.to_sparse(v_local.to_vec()).to_dense(n);
    let coarse = ctx.spaces.refinement().coarse();
    let mut cache = PatchCache::new();
    let mut acc = vec![T::zero(); n];
    for &g in &sys.patch.elements {
        let dist = element_distance(coarse, &[k], g)?;
        let lambda = if ell == GLOBAL_PATCH { GLOBAL_PATCH } else { ell - dist };
        let gsys = cache.get(ctx, ctx.patch(g, lambda)?)?;
        enriched_corrector_with(ctx, &gsys, g, &v).add_to(&mut acc, T::one());
    }
    Ok(sys.restrict(&acc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finescale::CoefficientField;
    use crate::finescale::CoefficientKind;
    use crate::linalg::norm2;
    use crate::mesh::{CartesianMesh, NestedRefinement};

    fn context(dim: usize, nh: usize, r: usize, p: usize, random: bool) -> LodContext<f64> {
        let refinement = NestedRefinement::new(CartesianMesh::unit(dim, nh).unwrap(), r).unwrap();
        let fine = FineSpace::new(refinement.clone(), 4);
        let spaces = CoarseSpaces::new(&refinement, p).unwrap();
        let values = if random {
            let h = refinement.fine().mesh_size();
            CoefficientField::generate(CoefficientKind::Random, dim, h, (0.1, 1.0), 7, 1.0)
                .unwrap()
                .sample(refinement.fine())
                .unwrap()
        } else {
            vec![1.0; refinement.fine().element_count()]
        };
        LodContext::new(fine, spaces, values).unwrap()
    }

    fn moments_of(ctx: &LodContext<f64>, v: &SparseVector<f64>) -> f64 {
        let full = v.to_dense(ctx.fine().node_count());
        norm2(&ctx.spaces().project_vh(&full))
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let ctx = context(1, 4, 4, 0, false);
        let sys = PatchSaddleSystem::new(&ctx, ctx.patch(1, 1).unwrap()).unwrap();
        let w = sys.solve(&vec![0.0; ctx.fine().node_count()]);
        assert!(w.values.iter().all(|&v| v == 0.0));
        assert!(enrich_level(&sys, &vec![0.0; sys.dim()]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn corrector_of_constant_vanishes() {
        let ctx = context(2, 4, 4, 1, true);
        let v = vec![3.0; ctx.fine().node_count()];
        let c = element_corrector(&ctx, 5, 2, &v).unwrap();
        assert!(norm2(&c.values) < 1e-14);
    }

    #[test]
    fn patch_solutions_lie_in_w() {
        let ctx = context(2, 4, 4, 1, true);
        let n = ctx.fine().node_count();
        let v: Vec<f64> = (0..n).map(|i| ((i * 37 % 11) as f64).sin()).collect();
        for (k, ell) in [(0, 1), (5, 2), (10, GLOBAL_PATCH)] {
            let c = element_corrector(&ctx, k, ell, &v).unwrap();
            assert!(moments_of(&ctx, &c) <= 1e-10 * norm2(&c.values));
            let d = enriched_corrector_elementwise(&ctx, k, ell.min(1), &v).unwrap();
            assert!(moments_of(&ctx, &d) <= 1e-10 * norm2(&d.values));
        }
    }

    #[test]
    fn localized_corrector_approaches_global() {
        let ctx = context(1, 8, 8, 0, false);
        let v = ctx.fine().interpolate::<f64>(|x| (x[0] * 7.0).sin() + x[0] * x[0]);
        let n = ctx.fine().node_count();
        let global = element_corrector(&ctx, 3, GLOBAL_PATCH, &v).unwrap().to_dense(n);
        let err = |ell| {
            let loc = element_corrector(&ctx, 3, ell, &v).unwrap().to_dense(n);
            let d: Vec<f64> = loc.iter().zip(&global).map(|(a, b)| a - b).collect();
            ctx.energy(&d).sqrt()
        };
        let (e1, e4) = (err(1), err(4));
        assert!(e4 <= 0.1 * e1, "{e1} {e4}");
    }

    #[test]
    fn level_zero_matches_constrained_energy_minimizer() {
        // Second route: minimize the energy subject to the moments of Λ_{K,i}
        // on the patch elements.
        let ctx = context(1, 8, 6, 1, true);
        let nl = 2;
        for (k, ell) in [(0, 1), (4, 2), (7, GLOBAL_PATCH)] {
            let sys = PatchSaddleSystem::new(&ctx, ctx.patch(k, ell).unwrap()).unwrap();
            for i in 0..nl {
                let a = lod_basis_function(&ctx, &sys, k, i).unwrap();
                let pos = sys.patch().elements.iter().position(|&e| e == k).unwrap();
                let mut g = vec![0.0; sys.constraint_count()];
                g[pos * nl + i] = 1.0;
                let (b, _) = sys.solver().solve_full(&vec![0.0; sys.dim()], &g);
                for (x, y) in a.iter().zip(&b) {
                    assert!((x - y).abs() < 1e-10 * norm2(&b), "{x} {y}");
                }
            }
        }
    }

    #[test]
    fn level_zero_needs_one_layer() {
        let ctx = context(1, 4, 4, 0, false);
        let sys = PatchSaddleSystem::new(&ctx, ctx.patch(1, 0).unwrap()).unwrap();
        assert!(lod_basis_function(&ctx, &sys, 1, 0).unwrap_err().is_config());
        assert!(build_multiscale_space(&ctx, 0, 0, EnrichmentMode::Practical).is_err());
    }

    #[test]
    fn basis_counts_and_block_order() {
        let ctx = context(1, 16, 4, 2, true);
        let ms = build_multiscale_space(&ctx, 1, 2, EnrichmentMode::Practical).unwrap();
        assert_eq!(ms.dim(), 96);
        assert_eq!(ms.block_sizes(), vec![48, 48]);
        let order: Vec<(usize, usize, usize)> = ms.columns().iter().map(|c| (c.level, c.element, c.local)).collect();
        let mut sorted = order.clone();
        sorted.sort();
        assert_eq!(order, sorted);
        let lod = assemble_lod_basis(&ctx, 2).unwrap();
        assert_eq!(lod.levels(), 1);
        assert_eq!(lod.dim(), 48);
    }

    #[test]
    fn enriched_columns_share_support_and_lie_in_w() {
        for dim in 1..=2 {
            let ctx = context(dim, 4, 4, 1, true);
            let ms = build_multiscale_space(&ctx, 2, 1, EnrichmentMode::Practical).unwrap();
            for c in ms.columns() {
                let base = ms.column(0, c.element, c.local).unwrap();
                assert_eq!(c.values.indices, base.values.indices);
                let support_nodes: Vec<usize> = ctx.refinement_nodes(&c.patch);
                assert!(c.values.support().iter().all(|n| support_nodes.binary_search(n).is_ok()));
                if c.level >= 1 {
                    assert!(moments_of(&ctx, &c.values) <= 1e-10 * norm2(&c.values.values));
                }
            }
        }
    }

    #[test]
    fn level_zero_moments_match_stabilized_interpolant() {
        let ctx = context(1, 8, 6, 1, true);
        let ms = assemble_lod_basis(&ctx, 2).unwrap();
        for c in ms.columns() {
            let full = c.values.to_dense(ctx.fine().node_count());
            let a = ctx.spaces().project_vh(&full);
            let b = ctx.spaces().project_vh(&ctx.spaces().stabilized_basis_function(c.element, c.local));
            assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-10));
        }
    }

    #[test]
    fn enrichment_gains_h_squared() {
        let mut worst: f64 = 0.0;
        for nh in [4, 8, 16] {
            let ctx = context(1, nh, 64 / nh, 1, true);
            let ms = build_multiscale_space(&ctx, 1, GLOBAL_PATCH, EnrichmentMode::Practical).unwrap();
            let h = 1.0 / nh as f64;
            let n = ctx.fine().node_count();
            for c in ms.columns().iter().filter(|c| c.level == 1) {
                let base = ms.column(0, c.element, c.local).unwrap();
                let e1 = ctx.energy(&c.values.to_dense(n)).sqrt();
                let e0 = ctx.energy(&base.values.to_dense(n)).sqrt();
                worst = worst.max(e1 / (h * h * e0));
            }
        }
        assert!(worst <= 10.0, "{worst}");
    }

    #[test]
    fn elementwise_and_practical_agree_globally() {
        // With global patches every D_G solves on Ω, so the sum over G of
        // D_G(v|_G) equals the practical D(v).
        let ctx = context(1, 4, 6, 1, true);
        let a = build_multiscale_space(&ctx, 1, GLOBAL_PATCH, EnrichmentMode::Practical).unwrap();
        let b = build_multiscale_space(&ctx, 1, GLOBAL_PATCH, EnrichmentMode::Elementwise).unwrap();
        for (x, y) in a.columns().iter().zip(b.columns()) {
            let d: f64 = x.values.values.iter().zip(&y.values.values).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            assert!(d < 1e-10, "{d}");
        }
    }

    #[test]
    fn galerkin_matches_dense_product() {
        let ctx = context(1, 4, 6, 1, true);
        let ms = build_multiscale_space(&ctx, 1, 2, EnrichmentMode::Practical).unwrap();
        let free = ctx.fine().free_nodes().to_vec();
        let k = ctx.stiffness().submatrix(&free);
        let g = ms.galerkin(&k);
        let bd = ms.basis_matrix().to_dense();
        let kd = k.to_dense();
        let n = ms.dim();
        for a in 0..n {
            for b in 0..n {
                let mut s = 0.0;
                for r in 0..free.len() {
                    for q in 0..free.len() {
                        s += bd[(r, a)] * kd[(r, q)] * bd[(q, b)];
                    }
                }
                assert!((g.get(a, b) - s).abs() < 1e-10 * s.abs().max(1.0));
            }
        }
    }

    #[test]
    fn export_writes_manifest_and_binary() {
        let ctx = context(1, 4, 4, 0, false);
        let ms = build_multiscale_space(&ctx, 1, 1, EnrichmentMode::Practical).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ms.export(dir.path()).unwrap();
        let manifest = std::fs::read_to_string(dir.path().join("basis_manifest.csv")).unwrap();
        assert_eq!(manifest.lines().count(), 1 + ms.dim());
        let bin = std::fs::read(dir.path().join("basis.bin")).unwrap();
        let expected: usize = ms.columns().iter().map(|c| 8 + 16 * c.values.nnz()).sum();
        assert_eq!(bin.len(), expected);
    }

    impl<T: Real> LodContext<T> {
        fn refinement_nodes(&self, patch: &Patch) -> Vec<usize> {
            let mut nodes: Vec<usize> = patch
                .elements
                .iter()
                .flat_map(|&k| self.spaces.refinement().fine_nodes(k))
                .collect();
            nodes.sort_unstable();
            nodes.dedup();
            nodes
        }
    }
}
