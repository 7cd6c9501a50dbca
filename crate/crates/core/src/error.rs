use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("obstacle not aligned with grid: {axis_name} coordinate {value} is not a grid line")]
    Alignment { axis_name: &'static str, value: f64 },

    #[error("CG did not converge after {iterations} iterations (relative residual {residual:e})")]
    SolverNotConverged {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },

    #[error("proximal solve failed at {} point(s); first at {:?}: {}", .failures.len(), .failures[0].coords, .failures[0].reason)]
    Prox { failures: Vec<ProxFailure> },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image format error: {0}")]
    Format(String),

    #[error("degenerate density: {0}")]
    DegenerateDensity(String),
}

/// A single failed pointwise proximal solve.
#[derive(Debug, Clone)]
pub struct ProxFailure {
    pub coords: Vec<f64>,
    pub reason: String,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

macro_rules! ensure_arg {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::InvalidArgument(format!($($fmt)+)));
        }
    };
}
pub(crate) use ensure_arg;
