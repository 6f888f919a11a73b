//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape mismatch detected while building a computation graph.
    /// Carries the name of the offending operation.
    #[error("shape mismatch in `{op}`: {detail}")]
    Shape { op: &'static str, detail: String },

    /// Invalid argument to an operation (bad tuple size, negative sigma, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Configuration problem: unknown key, missing path, bad profile.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input data. `location` names the file and, when known,
    /// the frame or line index.
    #[error("parse error at {location}: {detail}")]
    Parse { location: String, detail: String },

    /// NaN gradient encountered during an optimizer step.
    #[error("NaN gradient for parameter `{param}`")]
    NanGradient { param: String },

    /// NaN loss encountered during training.
    #[error("NaN loss at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },

    /// The projected Gauss-Seidel solver did not reach the residual
    /// tolerance within the sweep cap. Carries the best iterate found.
    #[error("LCP solver did not converge: residual {residual:.3e} after {sweeps} sweeps")]
    LcpNonConvergence {
        residual: f64,
        sweeps: usize,
        best_iterate: Vec<f64>,
    },

    /// Generic numerical failure (non-finite value where one is forbidden).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Checkpoint file is malformed or has an unsupported version.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(location: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            detail: detail.into(),
        }
    }
}
