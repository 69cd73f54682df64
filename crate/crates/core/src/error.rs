use thiserror::Error;

use crate::conic::ConicError;
use crate::grid::TopologyError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to parse {what}: {msg}")]
    Parse { what: &'static str, msg: String },

    #[error("invalid network: {0}")]
    Network(String),

    #[error(transparent)]
    Topology(#[from] TopologyError),

    #[error("invalid scenario field `{field}`: {msg}")]
    Scenario { field: String, msg: String },

    #[error("series `{field}` has {got} entries, expected {expected}")]
    LengthMismatch {
        field: String,
        got: usize,
        expected: usize,
    },

    #[error("penetration level must be non-negative, got {0}")]
    NegativePenetration(f64),

    #[error("fleet attached to unknown bus {0}")]
    UnknownBus(usize),

    #[error(transparent)]
    Conic(#[from] ConicError),

    #[error("negative squared voltage {value:e} at bus {bus}, hour {hour}")]
    NegativeVoltageSquare { bus: usize, hour: usize, value: f64 },

    #[error("relaxation not exact: gap {gap:e} exceeds {limit:e}")]
    InexactRelaxation { gap: f64, limit: f64 },

    #[error("fixed-current iteration did not converge in {iterations} iterations (deltas: {deltas:?})")]
    FixedCurrentDiverged { iterations: usize, deltas: Vec<f64> },

    #[error("power flow diverged after {iterations} iterations (mismatch {mismatch:e})")]
    PowerFlowDiverged { iterations: usize, mismatch: f64 },

    #[error("singular Jacobian at iteration {0}")]
    SingularJacobian(usize),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("plot error: {0}")]
    Plot(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Bad or unreadable input, as opposed to a failed computation.
    pub fn is_input(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Network(_)
                | Error::Topology(_)
                | Error::Scenario { .. }
                | Error::LengthMismatch { .. }
                | Error::NegativePenetration(_)
                | Error::UnknownBus(_)
                | Error::Io { .. }
        )
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn scenario(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Scenario {
            field: field.into(),
            msg: msg.into(),
        }
    }
}
