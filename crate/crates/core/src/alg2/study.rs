//! Mesh-refinement studies on `[0, 1]^d` with matched DOF counts across degrees.

use serde::{Deserialize, Serialize};

use super::{metrics::traveling_wave, run, ProblemSpec, DEFAULT_MAX_ITER};
use crate::error::{ensure_arg, Result};
use crate::mesh::{build_spacetime_mesh, build_spatial_mesh, SpaceTimeMesh};

/// Traveling-wave OT study parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    pub dim: usize,
    pub degrees: Vec<usize>,
    pub levels: Vec<usize>,
    pub r: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub cg_tol: f64,
    pub deterministic: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            dim: 1,
            degrees: vec![0, 1, 3],
            levels: vec![0, 1, 2, 3],
            r: 1.0,
            tol: 1e-10,
            max_iter: DEFAULT_MAX_ITER,
            cg_tol: 1e-12,
            deterministic: false,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_arg!(self.dim == 1 || self.dim == 2, "dim must be 1 or 2");
        ensure_arg!(!self.degrees.is_empty() && !self.levels.is_empty(), "degrees and levels must be nonempty");
        ensure_arg!(self.r > 0.0 && self.tol > 0.0 && self.cg_tol > 0.0, "r, tol and cg_tol must be positive");
        ensure_arg!(self.max_iter >= 1, "max_iter must be at least 1");
        Ok(())
    }

    /// The traveling-wave problem with this study's solver settings.
    pub fn problem(&self) -> ProblemSpec {
        let mut spec = traveling_wave(self.dim);
        spec.r1 = self.r;
        spec.tol = self.tol;
        spec.max_iter = self.max_iter;
        spec.solver.cg_tol = self.cg_tol;
        spec.deterministic = self.deterministic;
        spec
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub k: usize,
    pub level: usize,
    /// Cells per space-time direction.
    pub cells: usize,
    pub iterations: usize,
    pub converged: bool,
    pub l2_rho: Option<f64>,
    pub l2_m: Option<f64>,
    pub w2_error: Option<f64>,
    pub order_rho: Option<f64>,
    pub order_m: Option<f64>,
    pub order_w2: Option<f64>,
    /// Failure message when the run did not produce a result.
    pub error: Option<String>,
}

/// Cells per direction at level `s` for degree `k`: `2^(s+2) / (k+1)`.
pub fn study_cells(k: usize, level: usize) -> Result<usize> {
    let n = 1usize << (level + 2);
    ensure_arg!(
        n.is_multiple_of(k + 1),
        "2^{} is not divisible by k+1 = {}; no matched-DOF mesh",
        level + 2,
        k + 1
    );
    Ok(n / (k + 1))
}

pub fn study_mesh(dim: usize, cells: usize) -> Result<SpaceTimeMesh> {
    let sp = build_spatial_mesh(&vec![0.0; dim], &vec![1.0; dim], &vec![cells; dim], &[])?;
    build_spacetime_mesh(sp, cells)
}

fn order(prev: Option<f64>, cur: Option<f64>, ratio: f64) -> Option<f64> {
    match (prev, cur) {
        (Some(a), Some(b)) if a > 0.0 && b > 0.0 => Some((a / b).ln() / ratio.ln()),
        _ => None,
    }
}

/// Runs `base` on the matched-DOF family for every `(k, level)`. Observed orders compare
/// each row with the previous successful row of the same degree. Failures are recorded
/// in their row.
pub fn convergence_study(base: &ProblemSpec, dim: usize, degrees: &[usize], levels: &[usize]) -> Vec<StudyRow> {
    let mut rows = Vec::new();
    for &k in degrees {
        let mut prev: Option<StudyRow> = None;
        for &level in levels {
            let mut row = StudyRow {
                k,
                level,
                cells: 0,
                iterations: 0,
                converged: false,
                l2_rho: None,
                l2_m: None,
                w2_error: None,
                order_rho: None,
                order_m: None,
                order_w2: None,
                error: None,
            };
            let outcome = study_cells(k, level).and_then(|cells| {
                row.cells = cells;
                run(base, &study_mesh(dim, cells)?, k)
            });
            match outcome {
                Ok(res) => {
                    row.iterations = res.iterations();
                    row.converged = res.converged;
                    row.l2_rho = res.metrics.l2_rho;
                    row.l2_m = res.metrics.l2_m;
                    row.w2_error = res.metrics.w2_error;
                    if let Some(p) = &prev {
                        let ratio = row.cells as f64 / p.cells as f64;
                        row.order_rho = order(p.l2_rho, row.l2_rho, ratio);
                        row.order_m = order(p.l2_m, row.l2_m, ratio);
                        row.order_w2 = order(p.w2_error, row.w2_error, ratio);
                    }
                    prev = Some(row.clone());
                }
                Err(e) => row.error = Some(e.to_string()),
            }
            rows.push(row);
        }
    }
    rows
}

/// [`convergence_study`] of the traveling-wave problem described by `cfg`.
pub fn run_study(cfg: &StudyConfig) -> Result<Vec<StudyRow>> {
    cfg.validate()?;
    Ok(convergence_study(&cfg.problem(), cfg.dim, &cfg.degrees, &cfg.levels))
}
