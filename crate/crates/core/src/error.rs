use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("box radius {radius} needs side {side} but lattice side is {n}", side = 2 * radius + 1)]
    RadiusTooLarge { radius: usize, n: usize },

    #[error("density profile has total mass {mass} > 1 at u = ({u0}, {u1})")]
    ProfileMass { mass: f64, u0: f64, u1: f64 },

    #[error("density {value} outside [0, 1]")]
    DensityOutOfRange { value: f64 },

    #[error("state space has {count} states, above the enumeration guard of {limit}")]
    StateSpaceTooLarge { count: u128, limit: u128 },

    #[error("time step {dt} exceeds the stability bound {bound}")]
    Cfl { dt: f64, bound: f64 },

    #[error("non-finite {what} at cell ({x}, {y}, {k})")]
    NonFinite {
        what: &'static str,
        x: usize,
        y: usize,
        k: usize,
    },

    #[error("density {rho} exceeds the exclusion cap at cell ({x}, {y})")]
    ExclusionViolated { rho: f64, x: usize, y: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("eigensolver did not converge after {iterations} iterations (residual {residual:e})")]
    EigenNotConverged { iterations: usize, residual: f64 },

    #[error("configuration errors:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("replica with seed {seed} failed: {source}")]
    Replica {
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
