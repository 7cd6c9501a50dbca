//! JSON run summaries. Wall-clock times are left out so that deterministic runs
//! produce identical files.

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::alg2::{Metrics, RunResult, StudyConfig, StudyRow};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    /// The resolved configuration; `solve --config` accepts this file directly.
    pub config: RunConfig,
    pub iterations: usize,
    pub converged: bool,
    pub err_a: f64,
    pub err_r: f64,
    pub metrics: Metrics,
}

impl Summary {
    pub fn new(config: RunConfig, result: &RunResult) -> Self {
        Self {
            config,
            iterations: result.iterations(),
            converged: result.converged,
            err_a: result.state.err_a,
            err_r: result.state.err_r,
            metrics: result.metrics.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySummary {
    pub study: StudyConfig,
    pub rows: Vec<StudyRow>,
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Config(format!("serializing summary: {e}")))?;
    s.push('\n');
    Ok(s)
}
