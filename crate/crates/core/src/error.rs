//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A structured-text file failed to parse. Carries file and line context.
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// A domain invariant was violated. The message names the invariant.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid node id {0}")]
    InvalidNode(usize),

    #[error("invalid pipe id {0}")]
    InvalidPipe(usize),

    #[error("node {0} is not reachable from any source through open pipes")]
    Unreachable(usize),

    #[error(
        "hydraulic solver did not converge: residual {residual:.3e} L/s after {iterations} iterations"
    )]
    NonConvergence { residual: f64, iterations: usize },

    #[error("simulation failed at step {step}: {source}")]
    SimulationStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("observation layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("label value {0} outside {{0, 1}}")]
    InvalidLabel(u8),

    #[error("graph has {nodes} nodes, exact enumeration is limited to {limit}")]
    GraphTooLarge { nodes: usize, limit: usize },

    #[error("model carries no calibration parameters; train with a calibration split first")]
    MissingCalibration,

    #[error("no marginal available for node {0}")]
    MissingMarginal(usize),

    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unsupported format version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: &str, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.to_string(),
            line,
            message: message.into(),
        }
    }
}
