//! Configuration files, density ingestion, exports and the `solve`/`convergence` workflows.

pub mod config;
pub mod density;
pub mod export;
pub mod summary;

use std::path::{Path, PathBuf};

pub use config::{
    config_dir, load_config, load_convergence_config, ConvergenceConfig, CostConfig, DomainConfig, ObstacleConfig,
    RunConfig, TerminalCostConfig,
};
pub use density::{load_density, parse_pgm, read_pgm, DensitySpec, GaussianScaling, GrayImage};
pub use export::{export_snapshot, sample_snapshot, Snapshot};
pub use summary::{StudySummary, Summary};

use crate::alg2::{run_with_observer, study::run_study, IterationRecord, RunResult, StudyRow};
use crate::error::Result;

pub struct SolveOutcome {
    pub result: RunResult,
    pub summary: Summary,
    /// Files written, in order.
    pub files: Vec<PathBuf>,
}

/// Runs `cfg` and writes `summary.json`, `log.csv` and the snapshots into `out_dir`.
/// Relative image paths resolve against `base_dir`.
pub fn solve(
    cfg: &RunConfig,
    base_dir: &Path,
    out_dir: &Path,
    observer: &mut (dyn FnMut(&IterationRecord) + Send),
) -> Result<SolveOutcome> {
    cfg.validate()?;
    let resolved = cfg.resolved(base_dir);
    let mesh = resolved.build_mesh()?;
    let spec = resolved.problem(&mesh, base_dir)?;
    let result = run_with_observer(&spec, &mesh, resolved.degree, observer)?;
    let summary = Summary::new(resolved, &result);

    let mut files = Vec::new();
    let path = out_dir.join("summary.json");
    export::write_file(&path, &summary::to_json(&summary)?)?;
    files.push(path);
    let path = out_dir.join("log.csv");
    export::write_file(&path, &export::format_log_csv(&result.log))?;
    files.push(path);
    for &t in &cfg.snapshot_times {
        files.extend(export_snapshot(
            &result.disc.w,
            &result.state.alpha.values,
            t,
            cfg.snapshot_resolution,
            out_dir,
            cfg.raster,
        )?);
    }
    Ok(SolveOutcome { result, summary, files })
}

/// Runs the study and writes `convergence.csv` and `convergence_summary.json` into `out_dir`.
pub fn convergence(cfg: &ConvergenceConfig, out_dir: &Path) -> Result<(Vec<StudyRow>, Vec<PathBuf>)> {
    let rows = run_study(&cfg.study)?;
    let csv = out_dir.join("convergence.csv");
    export::write_file(&csv, &export::format_study_csv(&rows))?;
    let json = out_dir.join("convergence_summary.json");
    let summary = StudySummary {
        study: cfg.study.clone(),
        rows,
    };
    export::write_file(&json, &summary::to_json(&summary)?)?;
    Ok((summary.rows, vec![csv, json]))
}
