use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: String,
        reason: String,
    },

    #[error("singular kernel evaluation at x = 0")]
    SingularEvaluation,

    #[error("capped singular evaluations {capped}/{total} exceed threshold {threshold}")]
    ExcessCapping {
        capped: usize,
        total: usize,
        threshold: f64,
    },

    #[error("simulation fault: non-finite coordinate for particle {particle} at step {step}")]
    SimulationFault { particle: usize, step: u64 },

    #[error("leaked mass fraction {leaked:.3e} exceeds threshold {threshold:.3e}")]
    LeakedMass { leaked: f64, threshold: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("insufficient grid resolution: {0}")]
    Resolution(String),

    #[error("CFL violation: max|B|*dt = {courant:.3e} exceeds cell width {cell:.3e}")]
    Cfl { courant: f64, cell: f64 },

    #[error("Picard iteration is not contracting: gaps {0:?}")]
    NonContraction(Vec<f64>),

    #[error("reference drift field does not cover time {0}")]
    Coverage(f64),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("config error for key `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("study aborted at N = {n}, replica = {replica}, seed = {seed}: {source}")]
    Study {
        n: usize,
        replica: u64,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, value: impl ToString, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            value: value.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Configuration and validation problems map to exit status 2, runtime faults to 1.
    pub fn is_usage_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter { .. } | Error::Config { .. } | Error::Resolution(_)
        )
    }
}
