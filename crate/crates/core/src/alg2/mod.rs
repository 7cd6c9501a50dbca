//! The ALG2 augmented-Lagrangian iteration for OT, MFP and MFG.
//!
//! One iteration is
//! * Step A: solve the space-time elliptic problem for `φ`;
//! * Step B: pointwise prox for `α*` (and `ρ1*` for MFG);
//! * Step C: multiplier update of `α` (and `ρ1`), with the monitors
//!   `err^a = max |Δα|`, `err^r = max |Δρ1|` over all DOF entries.
//!
//! On exit `α0` is the density and `α1` the momentum.

pub mod metrics;
pub mod study;

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_step_a_rhs, build_discretization, step_a_operator, Discretization, StepAData};
use crate::costs::{prox_alpha_into, prox_rho1, CostCase, CostModel, Rho1Domain};
use crate::error::{ensure_arg, Error, ProxFailure, Result};
use crate::fespace::{CoefficientField, SpaceKind};
use crate::mesh::SpaceTimeMesh;
use crate::solver::{pcg, CgOptions, FastDiagonalization, Jacobi, KroneckerSum, Preconditioner};

pub use metrics::{compute_metrics, traveling_wave, ExactSolution, Metrics};
pub use study::{convergence_study, StudyConfig, StudyRow};

/// `f(x)` on the spatial domain.
pub type SpatialFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// `f(t, x)` on the space-time domain.
pub type SpaceTimeFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
/// `g(t, x, n)` on the lateral boundary, `n` the outward normal.
pub type BoundaryFn = Arc<dyn Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Ot,
    Mfp,
    Mfg,
}

/// A spatial density, either as a function or as values at the M points of the mesh
/// the problem is run on.
#[derive(Clone)]
pub enum DensityData {
    Sampler(SpatialFn),
    Values(Vec<f64>),
}

impl DensityData {
    pub fn sampler(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        DensityData::Sampler(Arc::new(f))
    }

    fn resolve(&self, disc: &Discretization, what: &str) -> Result<Vec<f64>> {
        let v = match self {
            DensityData::Sampler(f) => disc.m.sample(|x| f(x)),
            DensityData::Values(v) => {
                ensure_arg!(
                    v.len() == disc.m.n_dofs(),
                    "{what}: {} values given, mesh has {} spatial quadrature points",
                    v.len(),
                    disc.m.n_dofs()
                );
                v.clone()
            }
        };
        ensure_arg!(v.iter().all(|x| x.is_finite()), "{what} has non-finite values");
        Ok(v)
    }
}

impl std::fmt::Debug for DensityData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DensityData::Sampler(_) => f.write_str("Sampler(..)"),
            DensityData::Values(v) => write!(f, "Values({} points)", v.len()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreconditionerKind {
    /// Tensor inverse unless its factors would exceed [`TENSOR_MEMORY_LIMIT`].
    #[default]
    Auto,
    Tensor,
    Jacobi,
}

/// Bytes above which `Auto` falls back to Jacobi.
pub const TENSOR_MEMORY_LIMIT: usize = 1536 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    pub cg_tol: f64,
    pub cg_max_iter: Option<usize>,
    pub preconditioner: PreconditionerKind,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            cg_tol: 1e-10,
            cg_max_iter: None,
            preconditioner: PreconditionerKind::Auto,
        }
    }
}

/// Everything that defines a problem apart from the mesh and degree.
#[derive(Clone)]
pub struct ProblemSpec {
    pub mode: Mode,
    pub cost: CostModel,
    pub rho0: DensityData,
    /// Terminal density (OT, MFP).
    pub rho1: Option<DensityData>,
    /// Target density `ρ_T` of the terminal cost (MFG).
    pub terminal: Option<DensityData>,
    /// `m_ex · n` on the lateral boundary; zero flux when absent.
    pub boundary_flux: Option<BoundaryFn>,
    pub exact: Option<ExactSolution>,
    pub r1: f64,
    /// Terminal penalty (MFG); ignored otherwise.
    pub r2: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// MFG: also require `err^r < tol`.
    pub stop_on_err_r: bool,
    pub rho1_domain: Rho1Domain,
    pub solver: SolverOptions,
    /// Run on a single thread.
    pub deterministic: bool,
}

impl std::fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("mode", &self.mode)
            .field("cost", &self.cost)
            .field("rho0", &self.rho0)
            .field("rho1", &self.rho1)
            .field("terminal", &self.terminal)
            .field("boundary_flux", &self.boundary_flux.is_some())
            .field("exact", &self.exact.is_some())
            .field("r1", &self.r1)
            .field("r2", &self.r2)
            .field("tol", &self.tol)
            .field("max_iter", &self.max_iter)
            .finish_non_exhaustive()
    }
}

pub const DEFAULT_MAX_ITER: usize = 10_000;

impl ProblemSpec {
    fn base(mode: Mode, cost: CostModel, rho0: DensityData, r1: f64) -> Self {
        Self {
            mode,
            cost,
            rho0,
            rho1: None,
            terminal: None,
            boundary_flux: None,
            exact: None,
            r1,
            r2: 0.0,
            tol: 1e-2,
            max_iter: DEFAULT_MAX_ITER,
            stop_on_err_r: true,
            rho1_domain: Rho1Domain::Real,
            solver: SolverOptions::default(),
            deterministic: false,
        }
    }

    pub fn ot(rho0: DensityData, rho1: DensityData, r: f64) -> Self {
        Self {
            rho1: Some(rho1),
            ..Self::base(Mode::Ot, CostModel::zero(), rho0, r)
        }
    }

    pub fn mfp(cost: CostModel, rho0: DensityData, rho1: DensityData, r: f64) -> Self {
        Self {
            rho1: Some(rho1),
            ..Self::base(Mode::Mfp, cost, rho0, r)
        }
    }

    pub fn mfg(cost: CostModel, rho0: DensityData, rho_t: DensityData, r1: f64, r2: f64) -> Self {
        Self {
            terminal: Some(rho_t),
            r2,
            ..Self::base(Mode::Mfg, cost, rho0, r1)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.cost.validate()?;
        ensure_arg!(self.r1 > 0.0 && self.r1.is_finite(), "r1 must be positive, got {}", self.r1);
        ensure_arg!(self.tol > 0.0 && self.tol.is_finite(), "tolerance must be positive, got {}", self.tol);
        ensure_arg!(self.max_iter >= 1, "max_iter must be at least 1");
        ensure_arg!(
            self.solver.cg_tol > 0.0 && self.solver.cg_tol.is_finite(),
            "CG tolerance must be positive"
        );
        match self.mode {
            Mode::Ot => {
                ensure_arg!(self.cost.case == CostCase::Zero, "OT requires the zero interaction cost");
                ensure_arg!(self.rho1.is_some(), "OT requires a terminal density rho1");
            }
            Mode::Mfp => ensure_arg!(self.rho1.is_some(), "MFP requires a terminal density rho1"),
            Mode::Mfg => {
                ensure_arg!(self.terminal.is_some(), "terminal_cost required for MFG");
                ensure_arg!(self.r2 > 0.0 && self.r2.is_finite(), "r2 must be positive, got {}", self.r2);
            }
        }
        Ok(())
    }

    fn r2_effective(&self) -> f64 {
        if self.mode == Mode::Mfg {
            self.r2
        } else {
            0.0
        }
    }
}

/// Problem data sampled on a discretization.
#[derive(Debug, Clone)]
pub struct SampledData {
    pub rho0: Vec<f64>,
    /// Terminal density (OT/MFP) or empty.
    pub rho1: Vec<f64>,
    /// Terminal target (MFG) or empty.
    pub rho_t: Vec<f64>,
    /// `m_ex · n` at the boundary points, if given.
    pub boundary_flux: Option<Vec<f64>>,
}

impl SampledData {
    pub fn new(spec: &ProblemSpec, disc: &Discretization) -> Result<Self> {
        let rho0 = spec.rho0.resolve(disc, "rho0")?;
        let rho1 = match &spec.rho1 {
            Some(d) if spec.mode != Mode::Mfg => d.resolve(disc, "rho1")?,
            _ => Vec::new(),
        };
        let rho_t = match &spec.terminal {
            Some(d) if spec.mode == Mode::Mfg => {
                let v = d.resolve(disc, "terminal density")?;
                ensure_arg!(v.iter().all(|&x| x >= 0.0), "terminal density must be nonnegative");
                v
            }
            _ => Vec::new(),
        };
        let boundary_flux = spec
            .boundary_flux
            .as_ref()
            .map(|g| disc.sample_boundary(|t, x, n| g(t, x, n)));
        Ok(Self {
            rho0,
            rho1,
            rho_t,
            boundary_flux,
        })
    }
}

/// Iterates of ALG2.
#[derive(Debug, Clone, PartialEq)]
pub struct Alg2State {
    pub phi: Vec<f64>,
    pub alpha: CoefficientField,
    pub alpha_star: CoefficientField,
    /// Terminal density multiplier (MFG) or empty.
    pub rho1: Vec<f64>,
    pub rho1_star: Vec<f64>,
    pub iteration: usize,
    pub err_a: f64,
    pub err_r: f64,
}

impl Alg2State {
    /// `φ = 0`, `α* = 0`, `ρ1* = 0`; `α0 = (1−t)ρ0 + tρ1` (OT/MFP) or `ρ0` (MFG),
    /// `α1 = 0`, `ρ1 = ρ0`.
    pub fn initial(disc: &Discretization, mode: Mode, data: &SampledData) -> Self {
        let w = &disc.w;
        let nc = disc.dim() + 1;
        let mut alpha = CoefficientField::zeros(SpaceKind::W, w.n_dofs(), nc);
        for p in 0..w.n_dofs() {
            let (j, _, it, _) = w.split(p);
            let mi = w.m_index(p);
            alpha.values[p * nc] = if mode == Mode::Mfg {
                data.rho0[mi]
            } else {
                let t = w.time_of(j, it);
                (1.0 - t) * data.rho0[mi] + t * data.rho1[mi]
            };
        }
        let (rho1, rho1_star) = if mode == Mode::Mfg {
            (data.rho0.clone(), vec![0.0; disc.m.n_dofs()])
        } else {
            (Vec::new(), Vec::new())
        };
        Self {
            phi: vec![0.0; disc.v.n_dofs()],
            alpha,
            alpha_star: CoefficientField::zeros(SpaceKind::W, w.n_dofs(), nc),
            rho1,
            rho1_star,
            iteration: 0,
            err_a: f64::INFINITY,
            err_r: if mode == Mode::Mfg { f64::INFINITY } else { 0.0 },
        }
    }

    pub fn density(&self) -> Vec<f64> {
        self.alpha.component(0)
    }
}

enum Precond {
    Tensor(Box<FastDiagonalization>),
    Jacobi(Jacobi),
}

impl Precond {
    fn as_dyn(&self) -> &dyn Preconditioner {
        match self {
            Precond::Tensor(p) => p.as_ref(),
            Precond::Jacobi(p) => p,
        }
    }
}

/// The assembled Step-A system and sampled data for one mesh and degree.
pub struct System {
    pub disc: Discretization,
    pub op: KroneckerSum,
    precond: Precond,
    pub data: SampledData,
    /// Pure Neumann problem (OT/MFP): solve modulo constants.
    pub deflate: bool,
    pub r1: f64,
    pub r2: f64,
}

impl System {
    pub fn new(spec: &ProblemSpec, mesh: &SpaceTimeMesh, k: usize) -> Result<Self> {
        spec.validate()?;
        let disc = build_discretization(mesh, k)?;
        let r2 = spec.r2_effective();
        let op = step_a_operator(&disc.v, spec.r1, r2)?;
        let use_tensor = match spec.solver.preconditioner {
            PreconditionerKind::Tensor => true,
            PreconditionerKind::Jacobi => false,
            PreconditionerKind::Auto => FastDiagonalization::memory_estimate(&op) <= TENSOR_MEMORY_LIMIT,
        };
        let precond = if use_tensor {
            Precond::Tensor(Box::new(FastDiagonalization::new(&op)?))
        } else {
            Precond::Jacobi(Jacobi::new(&op))
        };
        let data = SampledData::new(spec, &disc)?;
        Ok(Self {
            disc,
            op,
            precond,
            data,
            deflate: r2 == 0.0,
            r1: spec.r1,
            r2,
        })
    }

    pub fn uses_tensor_preconditioner(&self) -> bool {
        matches!(self.precond, Precond::Tensor(_))
    }
}

/// Step A: re-solves for `φ`, warm-started from the current iterate. Returns CG iterations.
pub fn step_a(state: &mut Alg2State, sys: &System, opts: &SolverOptions) -> Result<usize> {
    let mfg = sys.r2 > 0.0;
    let rhs = assemble_step_a_rhs(
        &sys.disc,
        &StepAData {
            alpha: &state.alpha,
            alpha_star: &state.alpha_star,
            rho1: if mfg { &state.rho1 } else { &sys.data.rho1 },
            rho1_star: mfg.then_some(&state.rho1_star[..]),
            rho0: &sys.data.rho0,
            boundary_flux: sys.data.boundary_flux.as_deref(),
            r1: sys.r1,
            r2: sys.r2,
        },
    )?;
    let cg = CgOptions {
        tol: opts.cg_tol,
        max_iter: opts.cg_max_iter,
        deflate_constants: sys.deflate,
    };
    let stats = pcg(&sys.op, sys.precond.as_dyn(), &rhs, &mut state.phi, &cg)?;
    Ok(stats.iterations)
}

/// Step B: pointwise prox at every W point (and M point for MFG), given `∇φ` and
/// `φ(1)` at those points.
pub fn step_b(
    state: &mut Alg2State,
    sys: &System,
    spec: &ProblemSpec,
    grad: &[f64],
    phi_end: Option<&[f64]>,
) -> Result<()> {
    let nc = state.alpha.components;
    let r1 = sys.r1;
    let warm = state.iteration > 0;
    let alpha = &state.alpha.values;
    let w = &sys.disc.w;
    let failures: Vec<ProxFailure> = state
        .alpha_star
        .values
        .par_chunks_mut(nc)
        .enumerate()
        .filter_map(|(p, out)| {
            let mut b = [0.0; 3];
            let mut prev = [0.0; 3];
            for c in 0..nc {
                b[c] = alpha[p * nc + c] + r1 * grad[p * nc + c];
                prev[c] = out[c];
            }
            prox_alpha_into(&spec.cost, &b[..nc], r1, warm.then_some(&prev[..nc]), out)
                .err()
                .map(|reason| ProxFailure {
                    coords: w.coords(p),
                    reason,
                })
        })
        .collect();
    if !failures.is_empty() {
        return Err(Error::Prox { failures });
    }
    if let Some(phi1) = phi_end {
        let r2 = sys.r2;
        let domain = spec.rho1_domain;
        let rho1 = &state.rho1;
        let rho_t = &sys.data.rho_t;
        state.rho1_star.par_iter_mut().enumerate().for_each(|(i, out)| {
            *out = prox_rho1(rho_t[i], rho1[i] - r2 * phi1[i], r2, domain);
        });
    }
    Ok(())
}

/// Step C: multiplier update; sets and returns `(err^a, err^r)`.
pub fn step_c(state: &mut Alg2State, sys: &System, grad: &[f64], phi_end: Option<&[f64]>) -> (f64, f64) {
    let r1 = sys.r1;
    let star = &state.alpha_star.values;
    let err_a = state
        .alpha
        .values
        .par_iter_mut()
        .enumerate()
        .map(|(i, a)| {
            let delta = r1 * (grad[i] - star[i]);
            *a += delta;
            delta.abs()
        })
        .reduce(|| 0.0, f64::max);
    let err_r = match phi_end {
        Some(phi1) => {
            let r2 = sys.r2;
            let rs = &state.rho1_star;
            state
                .rho1
                .par_iter_mut()
                .enumerate()
                .map(|(i, r)| {
                    let delta = -r2 * (phi1[i] + rs[i]);
                    *r += delta;
                    delta.abs()
                })
                .reduce(|| 0.0, f64::max)
        }
        None => 0.0,
    };
    state.err_a = err_a;
    state.err_r = err_r;
    (err_a, err_r)
}

/// One line of the iteration log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub err_a: f64,
    pub err_r: f64,
    pub cg_iters: usize,
    pub seconds: f64,
}

pub struct RunResult {
    pub state: Alg2State,
    pub log: Vec<IterationRecord>,
    pub converged: bool,
    pub metrics: Metrics,
    pub disc: Discretization,
    pub data: SampledData,
}

impl RunResult {
    pub fn iterations(&self) -> usize {
        self.state.iteration
    }
}

/// Runs ALG2 to the stopping tolerance or the iteration cap.
pub fn run(spec: &ProblemSpec, mesh: &SpaceTimeMesh, k: usize) -> Result<RunResult> {
    run_with_observer(spec, mesh, k, &mut |_| {})
}

/// [`run`], calling `observer` after every iteration.
pub fn run_with_observer(
    spec: &ProblemSpec,
    mesh: &SpaceTimeMesh,
    k: usize,
    observer: &mut (dyn FnMut(&IterationRecord) + Send),
) -> Result<RunResult> {
    if spec.deterministic {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        pool.install(|| run_inner(spec, mesh, k, observer))
    } else {
        run_inner(spec, mesh, k, observer)
    }
}

fn run_inner(
    spec: &ProblemSpec,
    mesh: &SpaceTimeMesh,
    k: usize,
    observer: &mut (dyn FnMut(&IterationRecord) + Send),
) -> Result<RunResult> {
    let sys = System::new(spec, mesh, k)?;
    let mut state = Alg2State::initial(&sys.disc, spec.mode, &sys.data);
    let mfg = spec.mode == Mode::Mfg;
    let mut log = Vec::new();
    let mut converged = false;
    while state.iteration < spec.max_iter {
        let start = Instant::now();
        let cg_iters = step_a(&mut state, &sys, &spec.solver)?;
        let grad = sys.disc.gradv_at_points(&state.phi);
        let phi_end = mfg.then(|| sys.disc.end.eval_at_m_points(&sys.disc.v, &sys.disc.m, &state.phi));
        step_b(&mut state, &sys, spec, &grad, phi_end.as_deref())?;
        let (err_a, err_r) = step_c(&mut state, &sys, &grad, phi_end.as_deref());
        state.iteration += 1;
        let rec = IterationRecord {
            iter: state.iteration,
            err_a,
            err_r,
            cg_iters,
            seconds: start.elapsed().as_secs_f64(),
        };
        observer(&rec);
        log.push(rec);
        let monitor = if mfg && spec.stop_on_err_r {
            err_a.max(err_r)
        } else {
            err_a
        };
        if monitor < spec.tol {
            converged = true;
            break;
        }
    }
    let metrics = compute_metrics(&sys.disc, spec, &state, &sys.data)?;
    Ok(RunResult {
        state,
        log,
        converged,
        metrics,
        disc: sys.disc,
        data: sys.data,
    })
}

#[cfg(test)]
mod tests;
