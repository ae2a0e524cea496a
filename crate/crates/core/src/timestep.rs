//! Variable-order BDF time stepping (orders 1, 2, 3 during startup, then 4)
//! shared by the fine reference and the multiscale systems.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::finescale::SourceTerm;
use crate::linalg::{
    condition_estimate, factorize, schur_solve, BlockSystem, FactorKind, Factorization, SparseSymmetric,
};
use crate::mesh::CartesianMesh;
use crate::scalar::Real;

/// Backward difference `∂ⁿu(t_k) ≈ τ⁻¹ Σ_i c_i u^{k−i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct BdfScheme {
    order: usize,
    coefficients: Vec<f64>,
}

pub fn bdf_coefficients(order: usize) -> Result<Vec<f64>> {
    Ok(match order {
        1 => vec![1.0, -1.0],
        2 => vec![1.5, -2.0, 0.5],
        3 => vec![11.0 / 6.0, -3.0, 1.5, -1.0 / 3.0],
        4 => vec![25.0 / 12.0, -4.0, 3.0, -4.0 / 3.0, 0.25],
        n => return Err(Error::InvalidInput(format!("BDF order must be between 1 and 4, got {n}"))),
    })
}

impl BdfScheme {
    pub fn new(order: usize) -> Result<Self> {
        Ok(Self {
            order,
            coefficients: bdf_coefficients(order)?,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// Coefficients converted to the working scalar. Fractions are formed in
    /// `T` so extended precision keeps them exact to its own roundoff.
    pub fn coefficients_as<T: Real>(&self) -> Vec<T> {
        let r = |p: f64, q: f64| T::from_f64(p) / T::from_f64(q);
        match self.order {
            1 => vec![T::one(), -T::one()],
            2 => vec![r(3.0, 2.0), r(-2.0, 1.0), r(1.0, 2.0)],
            3 => vec![r(11.0, 6.0), r(-3.0, 1.0), r(3.0, 2.0), r(-1.0, 3.0)],
            _ => vec![r(25.0, 12.0), r(-4.0, 1.0), r(3.0, 1.0), r(-4.0, 3.0), r(1.0, 4.0)],
        }
    }
}

/// Uniform time grid `t_n = n τ`, `n = 0..=N`, with `N τ = T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    tau: f64,
    t_final: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(tau: f64, t_final: f64) -> Result<Self> {
        if !(tau > 0.0 && t_final > 0.0) {
            return Err(Error::Config(format!("tau = {tau} and T = {t_final} must be positive")));
        }
        let n = (t_final / tau).round();
        if n < 1.0 || (n * tau - t_final).abs() > 1e-12 * t_final {
            return Err(Error::Config(format!("tau = {tau} does not divide T = {t_final}")));
        }
        Ok(Self {
            tau,
            t_final,
            steps: n as usize,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.tau
    }
}

/// The most recent (up to four) states, newest first.
#[derive(Debug, Clone)]
pub struct StateHistory<T> {
    states: VecDeque<(f64, Vec<T>)>,
}

impl<T: Real> StateHistory<T> {
    pub const DEPTH: usize = 4;

    pub fn starting_at(t: f64, u: Vec<T>) -> Self {
        let mut states = VecDeque::with_capacity(Self::DEPTH);
        states.push_front((t, u));
        Self { states }
    }

    /// History from states listed oldest first. Useful to start directly with
    /// a high-order scheme from exact past values.
    pub fn from_states(states: Vec<(f64, Vec<T>)>) -> Result<Self> {
        if states.is_empty() || states.len() > Self::DEPTH {
            return Err(Error::InvalidInput(format!(
                "a state history holds 1 to {} states, got {}",
                Self::DEPTH,
                states.len()
            )));
        }
        Ok(Self {
            states: states.into_iter().rev().collect(),
        })
    }

    pub fn push(&mut self, t: f64, u: Vec<T>) {
        if self.states.len() == Self::DEPTH {
            self.states.pop_back();
        }
        self.states.push_front((t, u));
    }

    pub fn depth(&self) -> usize {
        self.states.len()
    }

    /// `k = 0` is the newest state.
    pub fn get(&self, k: usize) -> &[T] {
        &self.states[k].1
    }

    pub fn latest_time(&self) -> f64 {
        self.states[0].0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepSolver {
    /// Sparse LDLᵀ of the step matrix with one refinement step.
    Direct,
    /// Block elimination of the unknowns from index `split` on, then CG on
    /// the Schur complement of the leading block.
    Schur { split: usize, tol: f64, maxit: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Keep {
    Final,
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarchOptions {
    pub solver: StepSolver,
    pub keep: Keep,
    /// Lanczos steps for a condition estimate of the Jacobi-scaled BDF4 step
    /// matrix; `None` skips it.
    pub condition_steps: Option<usize>,
}

impl Default for MarchOptions {
    fn default() -> Self {
        Self {
            solver: StepSolver::Direct,
            keep: Keep::Final,
            condition_steps: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MarchResult<T> {
    /// Times of the kept states (all steps, or only the last).
    pub times: Vec<f64>,
    pub states: Vec<Vec<T>>,
    /// Largest relative residual `‖b − S u‖ / ‖b‖` over all steps.
    pub max_residual: f64,
    pub cond_est: Option<f64>,
    pub cg_iterations: usize,
    /// A Schur solve fell back to the direct whole-system solve.
    pub fell_back: bool,
}

impl<T> MarchResult<T> {
    pub fn final_state(&self) -> &[T] {
        self.states.last().expect("march keeps at least the final state")
    }
}

enum StepFactor<T> {
    Direct(Factorization<T>),
    Schur(BlockSystem<T>),
}

fn step_matrix<T: Real>(a: &SparseSymmetric<T>, m: &SparseSymmetric<T>, c0: T, tau: T) -> SparseSymmetric<T> {
    m.linear_combination(c0 / tau, a, T::one())
}

/// Condition estimate of `D^{-1/2} S D^{-1/2}` with `D = diag(S)`.
fn scaled_condition<T: Real>(s: &SparseSymmetric<T>, steps: usize) -> f64 {
    let d: Vec<T> = s.diagonal().into_iter().map(|v| T::one() / v.sqrt()).collect();
    let scaled = SparseSymmetric::from_triplets(s.dim(), s.iter_lower().map(|(i, j, v)| (i, j, d[i] * v * d[j])));
    condition_estimate(&scaled, steps)
}

/// Advances `M u' + A u = F(t)` over `grid` from the given history.
///
/// Step `n` uses BDF of order `min(depth, 4)` where `depth` is the number of
/// stored states, so a single initial state gives BDF1, BDF2, BDF3 and then
/// BDF4. Each step solves `((c₀/τ) M + A) uⁿ = F(tₙ) − τ⁻¹ Σ_{k≥1} c_k M u^{n−k}`;
/// the step matrix of every order is factored once.
pub fn march<T: Real>(
    a: &SparseSymmetric<T>,
    m: &SparseSymmetric<T>,
    mut load: impl FnMut(f64) -> Vec<T>,
    grid: &TimeGrid,
    mut history: StateHistory<T>,
    options: &MarchOptions,
) -> Result<MarchResult<T>> {
    let n = a.dim();
    if m.dim() != n || history.get(0).len() != n {
        return Err(Error::InvalidInput(format!(
            "march: stiffness has dimension {n}, mass {}, initial state {}",
            m.dim(),
            history.get(0).len()
        )));
    }
    let tau = T::from_f64(grid.tau());
    let t0 = history.latest_time();
    let mut factors: Vec<Option<(Vec<T>, SparseSymmetric<T>, StepFactor<T>)>> = (0..=4).map(|_| None).collect();
    let mut result = MarchResult {
        times: Vec::new(),
        states: Vec::new(),
        max_residual: 0.0,
        cond_est: None,
        cg_iterations: 0,
        fell_back: false,
    };
    if let Some(steps) = options.condition_steps {
        let c0 = BdfScheme::new(4)?.coefficients_as::<T>()[0];
        result.cond_est = Some(scaled_condition(&step_matrix(a, m, c0, tau), steps));
    }

    let mut mu = vec![T::zero(); n];
    for step in 1..=grid.steps() {
        let t = t0 + grid.time(step);
        let order = history.depth().min(4);
        if factors[order].is_none() {
            let c = BdfScheme::new(order)?.coefficients_as::<T>();
            let s = step_matrix(a, m, c[0], tau);
            let f = match &options.solver {
                StepSolver::Direct => StepFactor::Direct(
                    factorize(&s, FactorKind::Spd, &format!("BDF{order} step matrix"))
                        .map_err(|e| Error::TimeStep { step, source: Box::new(e) })?,
                ),
                StepSolver::Schur { split, .. } => StepFactor::Schur(BlockSystem::split(s.clone(), *split)),
            };
            factors[order] = Some((c, s, f));
        }
        let (c, s, f) = factors[order].as_ref().unwrap();

        let mut combo = vec![T::zero(); n];
        for k in 1..=order {
            for (x, &u) in combo.iter_mut().zip(history.get(k - 1)) {
                *x += c[k] * u;
            }
        }
        m.matvec_into(&combo, &mut mu);
        let mut rhs = load(t);
        if rhs.len() != n {
            return Err(Error::InvalidInput(format!(
                "load at t = {t} has {} entries, expected {n}",
                rhs.len()
            )));
        }
        for (r, &v) in rhs.iter_mut().zip(&mu) {
            *r -= v / tau;
        }

        let u = match f {
            StepFactor::Direct(fac) => fac.solve_refined(s, &rhs),
            StepFactor::Schur(sys) => {
                let StepSolver::Schur { tol, maxit, .. } = options.solver else {
                    unreachable!()
                };
                let out = schur_solve(sys, &rhs, tol, maxit).map_err(|e| Error::TimeStep {
                    step,
                    source: Box::new(e),
                })?;
                result.cg_iterations += out.cg_iterations;
                result.fell_back |= out.fell_back;
                out.x
            }
        };
        let res: Vec<T> = rhs.iter().zip(s.matvec(&u)).map(|(&b, su)| b - su).collect();
        let bn = crate::linalg::norm2(&rhs).to_f64();
        if bn > 0.0 {
            let rel = crate::linalg::norm2(&res).to_f64() / bn;
            if !rel.is_finite() {
                return Err(Error::TimeStep {
                    step,
                    source: Box::new(Error::Unsupported("step solve produced non-finite values".into())),
                });
            }
            result.max_residual = result.max_residual.max(rel);
        }
        if options.keep == Keep::All || step == grid.steps() {
            result.times.push(t);
            result.states.push(u.clone());
        }
        history.push(t, u);
    }
    Ok(result)
}

/// Initial multiscale state for zero initial data.
///
/// Nonzero data would need the projection of the initial value together
/// with time derivatives of its corrector part at `t = 0`; that is not
/// provided, so any nonzero `u0` is rejected.
pub fn initial_state<T: Real>(
    dof_count: usize,
    u0: Option<&[f64]>,
    f: &SourceTerm,
    mesh: &CartesianMesh,
) -> Result<Vec<T>> {
    if u0.is_some_and(|u| u.iter().any(|&v| v != 0.0)) {
        return Err(Error::Unsupported(
            "nonzero initial data requires compatibility derivatives".into(),
        ));
    }
    let d = mesh.dim();
    let nonzero_start = (0..mesh.node_count()).any(|n| f.eval(&mesh.node_coords(n)[..d], 0.0) != 0.0);
    if nonzero_start {
        log::warn!(
            "source `{}` does not vanish at t = 0; the zero initial state is not well prepared",
            f.id()
        );
    }
    Ok(vec![T::zero(); dof_count])
}
