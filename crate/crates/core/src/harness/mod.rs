//! Experiment engine: fine references, multiscale runs, error norms, rate
//! tables and CSV output.

mod config;
mod report;

pub use config::{default_ell, parse_number, CoefficientSpec, ExperimentConfig, SolverChoice};
pub use report::{
    read_vectors, write_csv, write_decay_csv, write_state_dump, DecayFit, DecayReport, DecayRow, RunRecord,
    SweepReport, CSV_HEADER,
};

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::correctors::{
    build_multiscale_space, enrich_level, lod_basis_function, LodContext, MultiscaleSpace, PatchSaddleSystem,
    GLOBAL_PATCH,
};
use crate::error::{Error, Result};
use crate::finescale::{
    assemble_mass_on, assemble_stiffness_with, fine_reference_solve, FineSpace, LoadQuadrature, SourceTerm,
};
use crate::linalg::SparseSymmetric;
use crate::mesh::{build_patch, NestedRefinement};
use crate::scalar::{DoubleDouble, Precision, Real};
use crate::spaces::CoarseSpaces;
use crate::timestep::{initial_state, march, Keep, MarchOptions, StateHistory, StepSolver, TimeGrid};

/// Condition estimate above which a run is flagged.
pub const CONDITION_FLAG: f64 = 1e12;
/// Largest admissible relative step residual.
pub const RESIDUAL_BOUND: f64 = 1e-8;
/// Lanczos steps for the condition estimate.
const LANCZOS_STEPS: usize = 80;

/// Absolute and relative energy-norm error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorPair {
    pub abs: f64,
    /// `None` when the reference has zero energy.
    pub rel: Option<f64>,
}

/// `|u_ref − B ǔ|` in the energy norm of `a` (free dofs).
pub fn energy_error<T: Real>(
    u_ref: &[T],
    coeffs: &[T],
    space: &MultiscaleSpace<T>,
    a: &SparseSymmetric<T>,
) -> ErrorPair {
    energy_error_fine(u_ref, &space.lift(coeffs), a)
}

/// Energy-norm error between two fine free-dof vectors.
pub fn energy_error_fine<T: Real>(u_ref: &[T], u: &[T], a: &SparseSymmetric<T>) -> ErrorPair {
    let e: Vec<T> = u_ref.iter().zip(u).map(|(&x, &y)| x - y).collect();
    let abs = a.quadratic_form(&e).to_f64().max(0.0).sqrt();
    let norm = a.quadratic_form(u_ref).to_f64().max(0.0).sqrt();
    ErrorPair {
        abs,
        rel: (norm > 0.0).then(|| abs / norm),
    }
}

/// Fine reference solutions stored on disk, keyed by a hash of everything
/// they depend on.
#[derive(Debug, Clone)]
pub struct ReferenceCache {
    dir: Option<PathBuf>,
}

impl ReferenceCache {
    pub const ENV: &'static str = "EHOLOD_CACHE_DIR";

    pub fn disabled() -> Self {
        Self { dir: None }
    }

    pub fn at(dir: impl Into<PathBuf>) -> Self {
        Self { dir: Some(dir.into()) }
    }

    /// `EHOLOD_CACHE_DIR` if set, otherwise `default`.
    pub fn from_env_or(default: impl Into<PathBuf>) -> Self {
        match std::env::var_os(Self::ENV) {
            Some(dir) if !dir.is_empty() => Self::at(PathBuf::from(dir)),
            _ => Self::at(default),
        }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn key(coefficient_hash: &str, source: &str, d: usize, h: f64, tau: f64, t_final: f64, quad: usize, precision: Precision) -> String {
        let mut hasher = Sha256::new();
        hasher.update(format!(
            "{coefficient_hash}|{source}|d={d}|h={h:e}|tau={tau:e}|T={t_final:e}|q={quad}|{}",
            precision.name()
        ));
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("ref-{key}.bin")))
    }

    /// Stored vector, as `(hi, lo)` pairs of doubles.
    pub fn load<T: Real>(&self, key: &str) -> Option<Vec<T>> {
        let path = self.path(key)?;
        let bytes = std::fs::read(&path).ok()?;
        if bytes.len() % 16 != 0 {
            log::warn!("ignoring malformed reference cache entry {}", path.display());
            return None;
        }
        Some(
            bytes
                .chunks_exact(16)
                .map(|c| {
                    let hi = f64::from_le_bytes(c[..8].try_into().unwrap());
                    let lo = f64::from_le_bytes(c[8..].try_into().unwrap());
                    T::from_f64(hi) + T::from_f64(lo)
                })
                .collect(),
        )
    }

    pub fn store<T: Real>(&self, key: &str, v: &[T]) -> Result<()> {
        let Some(path) = self.path(key) else {
            return Ok(());
        };
        let dir = path.parent().unwrap();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut bytes = Vec::with_capacity(16 * v.len());
        for &x in v {
            let hi = x.to_f64();
            let lo = (x - T::from_f64(hi)).to_f64();
            bytes.extend_from_slice(&hi.to_le_bytes());
            bytes.extend_from_slice(&lo.to_le_bytes());
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }
}

/// Everything of an experiment that does not depend on `H`, `p`, `j`, `ℓ`:
/// the fine operators and the fine reference at the final time.
pub struct FineProblem<T> {
    cfg: ExperimentConfig,
    source: SourceTerm,
    grid: TimeGrid,
    coefficient: Vec<f64>,
    stiffness: SparseSymmetric<T>,
    mass: SparseSymmetric<T>,
    reference: Vec<T>,
    reference_space: FineSpace,
    quad: LoadQuadrature<T>,
}

impl<T: Real> FineProblem<T> {
    pub fn new(cfg: &ExperimentConfig, cache: &ReferenceCache) -> Result<Self> {
        cfg.validate()?;
        let field = cfg.coefficient_field()?;
        let source = cfg.source_term()?;
        let grid = TimeGrid::new(cfg.tau, cfg.t_final)?;
        let q = cfg.quadrature_points();
        let reference_space = FineSpace::new(NestedRefinement::unit(cfg.d, cfg.h, cfg.h)?, q);
        let mesh = reference_space.mesh();
        let coefficient = field.sample(mesh)?;
        let free = reference_space.free_nodes().to_vec();
        let stiffness = assemble_stiffness_with::<T>(mesh, &coefficient).submatrix(&free);
        let mass = assemble_mass_on::<T>(mesh).submatrix(&free);
        let key = ReferenceCache::key(
            &field.content_hash(),
            source.id(),
            cfg.d,
            cfg.h,
            cfg.tau,
            cfg.t_final,
            q,
            cfg.precision,
        );
        let reference = match cache.load::<T>(&key).filter(|v| v.len() == free.len()) {
            Some(v) => {
                log::info!("fine reference loaded from cache ({key})");
                v
            }
            None => {
                let start = Instant::now();
                let run = fine_reference_solve::<T>(&reference_space, &field, &source, None, &grid, &MarchOptions::default())?;
                log::info!("fine reference: {} dofs in {:.2}s", free.len(), start.elapsed().as_secs_f64());
                let v = run.final_state().to_vec();
                if let Err(e) = cache.store(&key, &v) {
                    log::warn!("could not cache the fine reference: {e}");
                }
                v
            }
        };
        let quad = LoadQuadrature::new(mesh, q);
        Ok(Self {
            cfg: cfg.clone(),
            source,
            grid,
            coefficient,
            stiffness,
            mass,
            reference,
            reference_space,
            quad,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    /// Fine reference at the final time (free dofs).
    pub fn reference(&self) -> &[T] {
        &self.reference
    }

    /// Fine stiffness on the free dofs.
    pub fn stiffness(&self) -> &SparseSymmetric<T> {
        &self.stiffness
    }

    pub fn mass(&self) -> &SparseSymmetric<T> {
        &self.mass
    }

    pub fn dof_fine(&self) -> usize {
        self.reference.len()
    }

    /// Patch-problem context for coarse size `h_coarse` and degree `p`.
    pub fn context(&self, h_coarse: f64, p: usize) -> Result<LodContext<T>> {
        let refinement = NestedRefinement::unit(self.cfg.d, h_coarse, self.cfg.h)?;
        let fine = FineSpace::new(refinement.clone(), self.cfg.quadrature_points());
        let spaces = CoarseSpaces::new(&refinement, p)?;
        LodContext::new(fine, spaces, self.coefficient.clone())
    }

    /// Builds the multiscale space, marches it and compares with the
    /// reference.
    pub fn run(&self, params: RunParams) -> Result<RunOutcome<T>> {
        let start = Instant::now();
        let ctx = self.context(params.h_coarse, params.p)?;
        let space = build_multiscale_space(&ctx, params.j, params.ell, self.cfg.lambda_mode)?;
        let k = space.galerkin(&self.stiffness);
        let m = space.galerkin(&self.mass);
        let t_offline = start.elapsed().as_secs_f64();

        let start = Instant::now();
        let mesh = self.reference_space.mesh();
        let u0 = initial_state::<T>(space.dim(), None, &self.source, mesh)?;
        let solver = match self.cfg.solver {
            SolverChoice::Direct => StepSolver::Direct,
            SolverChoice::Schur => StepSolver::Schur {
                split: space.block_sizes()[0],
                tol: 1e-12,
                maxit: 10 * space.dim(),
            },
        };
        let options = MarchOptions {
            solver,
            keep: if params.keep_all { Keep::All } else { Keep::Final },
            condition_steps: Some(LANCZOS_STEPS),
        };
        let load = |t: f64| {
            let full = self.quad.integrate(mesh, |x| self.source.eval(x, t));
            space.project_load(&self.reference_space.restrict(&full))
        };
        let result = march(&k, &m, load, &self.grid, StateHistory::starting_at(0.0, u0), &options)?;
        let t_online = start.elapsed().as_secs_f64();

        let err = energy_error(&self.reference, result.final_state(), &space, &self.stiffness);
        let lifted = space.lift(result.final_state());
        let diff: Vec<T> = self.reference.iter().zip(&lifted).map(|(&a, &b)| a - b).collect();
        let err_l2 = self.mass.quadratic_form(&diff).to_f64().max(0.0).sqrt();
        let cond = result.cond_est;
        let mut status = Vec::new();
        if cond.is_some_and(|c| c > CONDITION_FLAG) {
            status.push("ill_conditioned");
        }
        if result.max_residual > RESIDUAL_BOUND {
            status.push("residual");
        }
        if result.fell_back {
            status.push("schur_fallback");
        }
        let record = RunRecord {
            d: self.cfg.d,
            h_coarse: params.h_coarse,
            h: self.cfg.h,
            eps: self.cfg.eps,
            p: params.p,
            j: params.j,
            ell: params.ell,
            tau: self.cfg.tau,
            t_final: self.cfg.t_final,
            seed: self.cfg.seed,
            dof_ms: space.dim(),
            dof_fine: self.dof_fine(),
            err_energy_abs: Some(err.abs),
            err_energy_rel: err.rel,
            err_l2: Some(err_l2),
            rate: None,
            cond_est: cond,
            t_offline_s: t_offline,
            t_online_s: t_online,
            status: if status.is_empty() { "ok".into() } else { status.join(";") },
        };
        Ok(RunOutcome {
            record,
            space,
            stiffness: k,
            mass: m,
            times: result.times,
            states: result.states,
            max_residual: result.max_residual,
        })
    }

    /// Runs and converts failures into a record with a `failed:` status.
    pub fn run_record(&self, params: RunParams) -> RunRecord {
        match self.run(params) {
            Ok(out) => out.record,
            Err(e) => {
                log::error!("run H = {}, p = {}, j = {}, ℓ = {} failed: {e}", params.h_coarse, params.p, params.j, params.ell);
                RunRecord::failed(&self.cfg, params, self.dof_fine(), &e)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunParams {
    pub h_coarse: f64,
    pub p: usize,
    pub j: usize,
    pub ell: usize,
    pub keep_all: bool,
}

pub struct RunOutcome<T> {
    pub record: RunRecord,
    pub space: MultiscaleSpace<T>,
    pub stiffness: SparseSymmetric<T>,
    pub mass: SparseSymmetric<T>,
    pub times: Vec<f64>,
    pub states: Vec<Vec<T>>,
    pub max_residual: f64,
}

/// `log₂(e_prev / e)` for consecutive rows whose `H` halves and whose other
/// parameters agree (`ℓ` may follow its `H`-dependent default).
pub fn fill_rates(records: &mut [RunRecord]) {
    for i in 1..records.len() {
        let (prev, cur) = (&records[i - 1], &records[i]);
        let halving = (prev.h_coarse / cur.h_coarse - 2.0).abs() < 1e-9;
        let same = (prev.d, prev.p, prev.j, prev.seed) == (cur.d, cur.p, cur.j, cur.seed)
            && prev.h == cur.h
            && prev.tau == cur.tau;
        let rate = match (prev.err_energy_abs, cur.err_energy_abs) {
            (Some(a), Some(b)) if halving && same && a > 0.0 && b > 0.0 => Some((a / b).log2()),
            _ => None,
        };
        records[i].rate = rate;
    }
}

fn with_precision<R>(
    precision: Precision,
    double: impl FnOnce() -> Result<R>,
    extended: impl FnOnce() -> Result<R>,
) -> Result<R> {
    match precision {
        Precision::Double => double(),
        Precision::Extended => extended(),
    }
}

fn default_cache(cfg: &ExperimentConfig) -> ReferenceCache {
    ReferenceCache::from_env_or(cfg.out.join("cache"))
}

/// One row per `H` (with the first `ℓ` of the config, or its default).
pub fn run_convergence(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    run_convergence_with_cache(cfg, &default_cache(cfg))
}

pub fn run_convergence_with_cache(cfg: &ExperimentConfig, cache: &ReferenceCache) -> Result<Vec<RunRecord>> {
    fn go<T: Real>(cfg: &ExperimentConfig, cache: &ReferenceCache) -> Result<Vec<RunRecord>> {
        let problem = FineProblem::<T>::new(cfg, cache)?;
        let mut records: Vec<RunRecord> = cfg
            .h_coarse
            .iter()
            .map(|&hc| {
                problem.run_record(RunParams {
                    h_coarse: hc,
                    p: cfg.p,
                    j: cfg.j_value(),
                    ell: cfg.ell_values(hc)[0],
                    keep_all: false,
                })
            })
            .collect();
        fill_rates(&mut records);
        Ok(records)
    }
    with_precision(cfg.precision, || go::<f64>(cfg, cache), || go::<DoubleDouble>(cfg, cache))
}

/// One row per `ℓ` at the first `H`.
pub fn run_localization_sweep(cfg: &ExperimentConfig) -> Result<SweepReport> {
    run_localization_sweep_with_cache(cfg, &default_cache(cfg))
}

pub fn run_localization_sweep_with_cache(cfg: &ExperimentConfig, cache: &ReferenceCache) -> Result<SweepReport> {
    fn go<T: Real>(cfg: &ExperimentConfig, cache: &ReferenceCache) -> Result<SweepReport> {
        let problem = FineProblem::<T>::new(cfg, cache)?;
        let hc = cfg.h_coarse[0];
        let records: Vec<RunRecord> = cfg
            .ell_values(hc)
            .into_iter()
            .map(|ell| {
                problem.run_record(RunParams {
                    h_coarse: hc,
                    p: cfg.p,
                    j: cfg.j_value(),
                    ell,
                    keep_all: false,
                })
            })
            .collect();
        Ok(SweepReport::new(records))
    }
    with_precision(cfg.precision, || go::<f64>(cfg, cache), || go::<DoubleDouble>(cfg, cache))
}

/// Exterior-energy fractions `‖∇v‖²_{Ω∖N^ℓ(K)} / ‖∇v‖²` of the global basis
/// functions `Λ̃` and `Λ̌^ν` of the sampled elements, at the first `H`.
pub fn run_decay_study(cfg: &ExperimentConfig) -> Result<DecayReport> {
    fn go<T: Real>(cfg: &ExperimentConfig) -> Result<DecayReport> {
        cfg.validate()?;
        let field = cfg.coefficient_field()?;
        let hc = cfg.h_coarse[0];
        let refinement = NestedRefinement::unit(cfg.d, hc, cfg.h)?;
        let fine = FineSpace::new(refinement.clone(), cfg.quadrature_points());
        let coefficient = field.sample(refinement.fine())?;
        let spaces = CoarseSpaces::<T>::new(&refinement, cfg.p)?;
        let ctx = LodContext::new(fine, spaces, coefficient)?;
        let coarse = refinement.coarse();
        let elements = cfg.decay_elements.clone().unwrap_or_else(|| {
            let c = coarse.cells();
            let mid = [c[0] / 2, if cfg.d == 2 { c[1] / 2 } else { 0 }];
            vec![coarse.element_id(mid)]
        });
        for &k in &elements {
            coarse.check_element(k)?;
        }
        let global = build_patch(coarse, &[0], GLOBAL_PATCH)?;
        let sys = PatchSaddleSystem::new(&ctx, global)?;
        let n = ctx.fine().node_count();
        let j = cfg.j_value();
        let nl = ctx.spaces().basis().local_count();
        let mut rows = Vec::new();
        for &k in &elements {
            for i in 0..nl {
                let mut level = lod_basis_function(&ctx, &sys, k, i)?;
                for nu in 0..=j {
                    if nu > 0 {
                        level = enrich_level(&sys, &level);
                    }
                    let v = sys.to_sparse(level.clone()).to_dense(n);
                    let total = ctx.energy(&v).to_f64();
                    let mut ell = 0;
                    loop {
                        let patch = build_patch(coarse, &[k], ell)?;
                        let ext = ctx.exterior_energy(&v, &patch).to_f64();
                        rows.push(DecayRow {
                            element: k,
                            local: i,
                            level: nu,
                            ell,
                            fraction: if total > 0.0 { ext / total } else { 0.0 },
                        });
                        if patch.is_global(coarse) {
                            break;
                        }
                        ell += 1;
                    }
                }
            }
        }
        Ok(DecayReport::new(rows, T::epsilon().to_f64()))
    }
    with_precision(cfg.precision, || go::<f64>(cfg), || go::<DoubleDouble>(cfg))
}

/// Single run at the first `H` and `ℓ`, with the optional exports of the
/// config written to `cfg.out`.
pub fn run_solve(cfg: &ExperimentConfig) -> Result<RunRecord> {
    run_solve_with_cache(cfg, &default_cache(cfg))
}

pub fn run_solve_with_cache(cfg: &ExperimentConfig, cache: &ReferenceCache) -> Result<RunRecord> {
    fn go<T: Real>(cfg: &ExperimentConfig, cache: &ReferenceCache) -> Result<RunRecord> {
        let problem = FineProblem::<T>::new(cfg, cache)?;
        let hc = cfg.h_coarse[0];
        let out = problem.run(RunParams {
            h_coarse: hc,
            p: cfg.p,
            j: cfg.j_value(),
            ell: cfg.ell_values(hc)[0],
            keep_all: !cfg.dump_steps.is_empty(),
        })?;
        std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
        if cfg.matrix_market {
            out.stiffness.write_matrix_market(&cfg.out.join("stiffness_ms.mtx"))?;
            out.mass.write_matrix_market(&cfg.out.join("mass_ms.mtx"))?;
        }
        if cfg.export_basis {
            out.space.export(&cfg.out.join("basis"))?;
        }
        if !cfg.dump_steps.is_empty() {
            let mut selected = Vec::new();
            for &s in &cfg.dump_steps {
                if s == 0 || s > out.states.len() {
                    return Err(Error::Config(format!("dump step {s} outside 1..={}", out.states.len())));
                }
                let lifted: Vec<f64> = out.space.lift(&out.states[s - 1]).iter().map(|v| v.to_f64()).collect();
                selected.push((s, out.times[s - 1], lifted));
            }
            write_state_dump(&cfg.out, &selected)?;
        }
        Ok(out.record)
    }
    with_precision(cfg.precision, || go::<f64>(cfg, cache), || go::<DoubleDouble>(cfg, cache))
}

/// Human-readable table of a record series.
pub fn summary_table(records: &[RunRecord]) -> String {
    let mut s = Vec::new();
    writeln!(s, "{:>9} {:>2} {:>2} {:>4} {:>7} {:>12} {:>12} {:>7} {:>10}  status", "H", "p", "j", "ell", "dof_ms", "err_abs", "err_rel", "rate", "cond").unwrap();
    for r in records {
        let opt = |v: Option<f64>, prec: usize| v.map_or("-".to_string(), |x| format!("{x:.prec$e}"));
        writeln!(
            s,
            "{:>9} {:>2} {:>2} {:>4} {:>7} {:>12} {:>12} {:>7} {:>10}  {}",
            r.h_coarse,
            r.p,
            r.j,
            report::ell_text(r.ell),
            r.dof_ms,
            opt(r.err_energy_abs, 3),
            opt(r.err_energy_rel, 3),
            r.rate.map_or("-".to_string(), |x| format!("{x:.2}")),
            opt(r.cond_est, 1),
            r.status
        )
        .unwrap();
    }
    String::from_utf8(s).unwrap()
}
