//! JSON run and study configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::density::{load_density, DensitySpec};
use crate::alg2::{DensityData, Mode, ProblemSpec, SolverOptions, StudyConfig, DEFAULT_MAX_ITER};
use crate::costs::{CostCase, CostModel, Rho1Domain};
use crate::error::{Error, Result};
use crate::fespace::build_m_space;
use crate::mesh::{build_spacetime_mesh, build_spatial_mesh, SpaceTimeMesh};
use crate::quad::AxisBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub origin: Vec<f64>,
    pub extent: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub case: CostCase,
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default = "default_rho_max")]
    pub rho_max: f64,
}

fn default_c() -> f64 {
    0.1
}

fn default_rho_max() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalCostConfig {
    /// Target density `ρ_T` of `Γ(ρ) = ½(ρ − ρ_T)²`.
    pub target: DensitySpec,
    #[serde(default)]
    pub domain: Rho1Domain,
}

/// A `solve` configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub domain: DomainConfig,
    pub cells: Vec<usize>,
    pub n_time: usize,
    pub degree: usize,
    #[serde(default)]
    pub obstacles: Vec<ObstacleConfig>,
    /// Interaction cost; defaults to the zero cost.
    #[serde(default)]
    pub cost: Option<CostConfig>,
    pub rho0: DensitySpec,
    #[serde(default)]
    pub rho1: Option<DensitySpec>,
    #[serde(default)]
    pub terminal_cost: Option<TerminalCostConfig>,
    /// `r` for OT/MFP, the default for `r1` and `r2` otherwise.
    #[serde(default = "default_r")]
    pub r: f64,
    #[serde(default)]
    pub r1: Option<f64>,
    #[serde(default)]
    pub r2: Option<f64>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_true")]
    pub stop_on_err_r: bool,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    #[serde(default = "default_resolution")]
    pub snapshot_resolution: usize,
    /// Also write a P2 raster per snapshot.
    #[serde(default = "default_true")]
    pub raster: bool,
    #[serde(default)]
    pub deterministic: bool,
}

fn default_r() -> f64 {
    1.0
}

fn default_tol() -> f64 {
    1e-2
}

fn default_max_iter() -> usize {
    DEFAULT_MAX_ITER
}

fn default_true() -> bool {
    true
}

fn default_resolution() -> usize {
    64
}

fn finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be finite, got {v}")))
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    finite(name, v)?;
    if v > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}

impl RunConfig {
    pub fn dim(&self) -> usize {
        self.domain.origin.len()
    }

    /// Semantic checks beyond the schema.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d != 1 && d != 2 {
            return Err(Error::Config(format!("domain.origin must have 1 or 2 entries, got {d}")));
        }
        if self.domain.extent.len() != d || self.cells.len() != d {
            return Err(Error::Config("domain.extent and cells must match domain.origin in length".into()));
        }
        for (i, (&o, &e)) in self.domain.origin.iter().zip(&self.domain.extent).enumerate() {
            finite(&format!("domain.origin[{i}]"), o)?;
            positive(&format!("domain.extent[{i}]"), e)?;
        }
        if self.cells.contains(&0) || self.n_time == 0 {
            return Err(Error::Config("cells and n_time must be positive".into()));
        }
        for (i, ob) in self.obstacles.iter().enumerate() {
            if ob.lower.len() != d || ob.upper.len() != d {
                return Err(Error::Config(format!("obstacles[{i}] must have {d} coordinates per corner")));
            }
            for v in ob.lower.iter().chain(&ob.upper) {
                finite(&format!("obstacles[{i}]"), *v)?;
            }
        }
        positive("r", self.r)?;
        if let Some(r1) = self.r1 {
            positive("r1", r1)?;
        }
        if let Some(r2) = self.r2 {
            positive("r2", r2)?;
        }
        positive("tol", self.tol)?;
        positive("solver.cg_tol", self.solver.cg_tol)?;
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if self.snapshot_resolution == 0 {
            return Err(Error::Config("snapshot_resolution must be positive".into()));
        }
        for &t in &self.snapshot_times {
            finite("snapshot_times", t)?;
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("snapshot_times entries must lie in [0, 1], got {t}")));
            }
        }
        if let Some(c) = &self.cost {
            positive("cost.c", c.c)?;
            positive("cost.rho_max", c.rho_max)?;
        }
        let densities = [Some(&self.rho0), self.rho1.as_ref(), self.terminal_cost.as_ref().map(|t| &t.target)];
        for (name, ds) in ["rho0", "rho1", "terminal_cost.target"].iter().zip(densities) {
            if let Some(ds) = ds {
                ds.validate(d).map_err(|e| Error::Config(format!("{name}: {e}")))?;
            }
        }
        match self.mode {
            Mode::Ot => {
                if self.cost.as_ref().is_some_and(|c| c.case != CostCase::Zero) {
                    return Err(Error::Config("cost: OT requires the zero interaction cost".into()));
                }
                if self.rho1.is_none() {
                    return Err(Error::Config("rho1 required for OT".into()));
                }
            }
            Mode::Mfp => {
                if self.rho1.is_none() {
                    return Err(Error::Config("rho1 required for MFP".into()));
                }
            }
            Mode::Mfg => {
                if self.terminal_cost.is_none() {
                    return Err(Error::Config("terminal_cost required for MFG".into()));
                }
            }
        }
        Ok(())
    }

    /// Copy with image paths made absolute against `base_dir` and no output directory,
    /// so that it can be re-run from anywhere.
    pub fn resolved(&self, base_dir: &Path) -> RunConfig {
        let base_dir = std::path::absolute(base_dir).unwrap_or_else(|_| base_dir.to_path_buf());
        let mut c = self.clone();
        let fix = |ds: &mut DensitySpec| {
            if let DensitySpec::Image { path } = ds {
                if path.is_relative() {
                    *path = base_dir.join(&*path);
                }
            }
        };
        fix(&mut c.rho0);
        if let Some(ds) = c.rho1.as_mut() {
            fix(ds);
        }
        if let Some(tc) = c.terminal_cost.as_mut() {
            fix(&mut tc.target);
        }
        c.output_dir = None;
        c
    }

    pub fn build_mesh(&self) -> Result<SpaceTimeMesh> {
        let obstacles: Vec<AxisBox> = self
            .obstacles
            .iter()
            .map(|o| AxisBox::new(o.lower.clone(), o.upper.clone()))
            .collect();
        let sp = build_spatial_mesh(&self.domain.origin, &self.domain.extent, &self.cells, &obstacles)?;
        build_spacetime_mesh(sp, self.n_time)
    }

    pub fn cost_model(&self) -> Result<CostModel> {
        match &self.cost {
            Some(c) => CostModel::new(c.case, c.c, c.rho_max),
            None => Ok(CostModel::zero()),
        }
    }

    /// The problem on `mesh`, densities sampled at its spatial quadrature points.
    /// Relative image paths are resolved against `base_dir`.
    pub fn problem(&self, mesh: &SpaceTimeMesh, base_dir: &Path) -> Result<ProblemSpec> {
        let m = build_m_space(&mesh.spatial, self.degree)?;
        let load = |ds: &DensitySpec| -> Result<DensityData> {
            Ok(DensityData::Values(load_density(ds, &m, &self.domain, base_dir)?))
        };
        let cost = self.cost_model()?;
        let rho0 = load(&self.rho0)?;
        let r1 = self.r1.unwrap_or(self.r);
        let mut spec = match self.mode {
            Mode::Ot => ProblemSpec::ot(rho0, load(self.rho1.as_ref().expect("validated"))?, r1),
            Mode::Mfp => ProblemSpec::mfp(cost, rho0, load(self.rho1.as_ref().expect("validated"))?, r1),
            Mode::Mfg => {
                let tc = self.terminal_cost.as_ref().expect("validated");
                let mut s = ProblemSpec::mfg(cost, rho0, load(&tc.target)?, r1, self.r2.unwrap_or(self.r));
                s.rho1_domain = tc.domain;
                s
            }
        };
        spec.tol = self.tol;
        spec.max_iter = self.max_iter;
        spec.stop_on_err_r = self.stop_on_err_r;
        spec.solver = self.solver;
        spec.deterministic = self.deterministic;
        spec.validate()?;
        Ok(spec)
    }
}

/// A `convergence` configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    #[serde(default)]
    pub study: StudyConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse<T: serde::de::DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Reads and validates a run configuration. A run summary is accepted too; its
/// embedded `config` is used.
pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = read(path)?;
    let value: serde_json::Value = parse(&text, path)?;
    let cfg: RunConfig = match value.get("config") {
        Some(embedded) if value.get("metrics").is_some() => serde_json::from_value(embedded.clone())
            .map_err(|e| Error::Config(format!("{}: config: {e}", path.display())))?,
        _ => parse(&text, path)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_convergence_config(path: impl AsRef<Path>) -> Result<ConvergenceConfig> {
    let path = path.as_ref();
    let cfg: ConvergenceConfig = parse(&read(path)?, path)?;
    cfg.study.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(cfg)
}

/// Directory that relative paths in a config file refer to.
pub fn config_dir(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}
