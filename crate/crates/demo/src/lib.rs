//! Browser demo: a 1D rough-coefficient heat problem small enough to solve
//! interactively.

use wasm_bindgen::prelude::*;

use eholod::correctors::{
    build_multiscale_space, enrich_level, lod_basis_function, EnrichmentMode, LodContext, PatchSaddleSystem,
};
use eholod::finescale::{
    assemble_load, assemble_mass, assemble_stiffness, CoefficientField, CoefficientKind, FineSpace, SourceTerm,
};
use eholod::harness::energy_error;
use eholod::mesh::{build_patch, NestedRefinement};
use eholod::spaces::CoarseSpaces;
use eholod::timestep::{march, MarchOptions, StateHistory, TimeGrid};
use eholod::{Error, Result};

const FINE_ELEMENTS: usize = 256;
const EPS: f64 = 1.0 / 32.0;
const TAU: f64 = 1.0 / 64.0;
const T_FINAL: f64 = 1.0;

struct Setup {
    fine: FineSpace,
    field: CoefficientField,
    ctx: LodContext<f64>,
}

fn setup(coarse_elements: usize, p: usize, seed: u64) -> Result<Setup> {
    if coarse_elements == 0 || FINE_ELEMENTS % coarse_elements != 0 {
        return Err(Error::Config(format!("{coarse_elements} coarse elements do not divide {FINE_ELEMENTS}")));
    }
    let refinement = NestedRefinement::unit(1, 1.0 / coarse_elements as f64, 1.0 / FINE_ELEMENTS as f64)?;
    let fine = FineSpace::new(refinement.clone(), (p + 2).max(4));
    let field = CoefficientField::generate(CoefficientKind::Random, 1, EPS, (0.1, 1.0), seed, 1.0)?;
    let values = field.sample(refinement.fine())?;
    let spaces = CoarseSpaces::new(&refinement, p)?;
    let ctx = LodContext::new(fine.clone(), spaces, values)?;
    Ok(Setup { fine, field, ctx })
}

fn node_x(fine: &FineSpace) -> Vec<f64> {
    (0..fine.node_count()).map(|n| fine.mesh().node_coords(n)[0]).collect()
}

/// Values of `Λ̃_{K,i}` and its enrichments `Λ̌^ν`, `ν = 1..=j`, on all fine
/// nodes, level after level.
pub fn basis_levels(
    coarse_elements: usize,
    p: usize,
    j: usize,
    ell: usize,
    seed: u64,
    element: usize,
    local: usize,
) -> Result<(Vec<f64>, Vec<f64>, Vec<Vec<f64>>)> {
    let s = setup(coarse_elements, p, seed)?;
    let coarse = s.ctx.spaces().refinement().coarse().clone();
    coarse.check_element(element)?;
    if local > p {
        return Err(Error::Config(format!("local index {local} exceeds degree {p}")));
    }
    let sys = PatchSaddleSystem::new(&s.ctx, build_patch(&coarse, &[element], ell)?)?;
    let n = s.fine.node_count();
    let mut level = lod_basis_function(&s.ctx, &sys, element, local)?;
    let mut levels = vec![sys.to_sparse(level.clone()).to_dense(n)];
    for _ in 0..j {
        level = enrich_level(&sys, &level);
        levels.push(sys.to_sparse(level.clone()).to_dense(n));
    }
    let coefficient = node_x(&s.fine).iter().map(|&x| s.field.value_at(&[x.min(1.0 - 1e-12)])).collect();
    Ok((node_x(&s.fine), coefficient, levels))
}

/// Exterior-energy fractions of the global `Λ̃` (first) and `Λ̌¹` (second) of
/// the middle element for `ℓ = 0, 1, …` until the patch covers the domain.
pub fn decay_fractions(coarse_elements: usize, p: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let s = setup(coarse_elements, p, seed)?;
    let coarse = s.ctx.spaces().refinement().coarse().clone();
    let k = coarse_elements / 2;
    let sys = PatchSaddleSystem::new(&s.ctx, build_patch(&coarse, &[0], usize::MAX)?)?;
    let n = s.fine.node_count();
    let level0 = lod_basis_function(&s.ctx, &sys, k, 0)?;
    let level1 = enrich_level(&sys, &level0);
    let fractions = |local: Vec<f64>| -> Result<Vec<f64>> {
        let v = sys.to_sparse(local).to_dense(n);
        let total = s.ctx.energy(&v);
        let mut out = Vec::new();
        for ell in 0.. {
            let patch = build_patch(&coarse, &[k], ell)?;
            out.push(s.ctx.exterior_energy(&v, &patch) / total);
            if patch.is_global(&coarse) {
                break;
            }
        }
        Ok(out)
    };
    Ok((fractions(level0)?, fractions(level1)?))
}

/// Final states at `T = 1` of the fine reference and the multiscale solution.
pub struct Comparison {
    pub x: Vec<f64>,
    pub reference: Vec<f64>,
    pub multiscale: Vec<f64>,
    pub relative_error: f64,
    pub dof_ms: usize,
}

pub fn compare(coarse_elements: usize, p: usize, j: usize, ell: usize, seed: u64) -> Result<Comparison> {
    let s = setup(coarse_elements, p, seed)?;
    let free = s.fine.free_nodes().to_vec();
    let a = assemble_stiffness::<f64>(&s.fine, &s.field)?.submatrix(&free);
    let m = assemble_mass::<f64>(&s.fine).submatrix(&free);
    let f = SourceTerm::example1();
    let grid = TimeGrid::new(TAU, T_FINAL)?;
    let opts = MarchOptions::default();
    let fine_load = |t: f64| s.fine.restrict(&assemble_load::<f64>(&s.fine, &f, t));
    let reference = march(&a, &m, fine_load, &grid, StateHistory::starting_at(0.0, vec![0.0; free.len()]), &opts)?;

    let space = build_multiscale_space(&s.ctx, j, ell, EnrichmentMode::Practical)?;
    let (ka, ma) = (space.galerkin(&a), space.galerkin(&m));
    let ms_load = |t: f64| space.project_load(&fine_load(t));
    let ms = march(&ka, &ma, ms_load, &grid, StateHistory::starting_at(0.0, vec![0.0; space.dim()]), &opts)?;

    let err = energy_error(reference.final_state(), ms.final_state(), &space, &a);
    Ok(Comparison {
        x: node_x(&s.fine),
        reference: s.fine.extend(reference.final_state()),
        multiscale: s.fine.extend(&space.lift(ms.final_state())),
        relative_error: err.rel.unwrap_or(f64::NAN),
        dof_ms: space.dim(),
    })
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct BasisProfile {
    x: Vec<f64>,
    coefficient: Vec<f64>,
    levels: Vec<Vec<f64>>,
}

#[wasm_bindgen]
impl BasisProfile {
    #[wasm_bindgen(getter)]
    pub fn x(&self) -> Vec<f64> {
        self.x.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn coefficient(&self) -> Vec<f64> {
        self.coefficient.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, nu: usize) -> Vec<f64> {
        self.levels.get(nu).cloned().unwrap_or_default()
    }
}

#[wasm_bindgen]
pub fn basis_profile(
    coarse_elements: usize,
    p: usize,
    j: usize,
    ell: usize,
    seed: u32,
    element: usize,
    local: usize,
) -> std::result::Result<BasisProfile, JsError> {
    let (x, coefficient, levels) = basis_levels(coarse_elements, p, j, ell, seed as u64, element, local).map_err(js)?;
    Ok(BasisProfile { x, coefficient, levels })
}

#[wasm_bindgen]
pub struct DecayCurve {
    corrected: Vec<f64>,
    enriched: Vec<f64>,
}

#[wasm_bindgen]
impl DecayCurve {
    #[wasm_bindgen(getter)]
    pub fn corrected(&self) -> Vec<f64> {
        self.corrected.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn enriched(&self) -> Vec<f64> {
        self.enriched.clone()
    }
}

#[wasm_bindgen]
pub fn decay_curve(coarse_elements: usize, p: usize, seed: u32) -> std::result::Result<DecayCurve, JsError> {
    let (corrected, enriched) = decay_fractions(coarse_elements, p, seed as u64).map_err(js)?;
    Ok(DecayCurve { corrected, enriched })
}

#[wasm_bindgen]
pub struct SolveComparison(Comparison);

#[wasm_bindgen]
impl SolveComparison {
    #[wasm_bindgen(getter)]
    pub fn x(&self) -> Vec<f64> {
        self.0.x.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn reference(&self) -> Vec<f64> {
        self.0.reference.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn multiscale(&self) -> Vec<f64> {
        self.0.multiscale.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn relative_error(&self) -> f64 {
        self.0.relative_error
    }

    #[wasm_bindgen(getter)]
    pub fn dof_ms(&self) -> usize {
        self.0.dof_ms
    }
}

#[wasm_bindgen]
pub fn compare_solve(
    coarse_elements: usize,
    p: usize,
    j: usize,
    ell: usize,
    seed: u32,
) -> std::result::Result<SolveComparison, JsError> {
    compare(coarse_elements, p, j, ell, seed as u64).map(SolveComparison).map_err(js)
}
