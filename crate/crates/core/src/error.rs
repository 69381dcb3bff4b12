use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulator. Every variant names the module it comes from.
#[derive(Debug, Error)]
pub enum Error {
    #[error("mesh: invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("fields: invalid material: {0}")]
    InvalidMaterial(String),

    #[error("{module}: configuration error: {message}")]
    Configuration {
        module: &'static str,
        message: String,
    },

    #[error("{module}: solver failure: {message}")]
    SolverFailure {
        module: &'static str,
        message: String,
        residuals: Vec<f64>,
    },

    #[error("stepper: step failure: {0}")]
    StepFailure(String),

    #[error("extrapolation: invalid input: {0}")]
    InvalidInput(String),

    #[error("config: {0}")]
    Parse(#[from] crate::config::ParseError),

    #[error("io: {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("output: unsupported dimension {0}")]
    UnsupportedDimension(usize),

    #[error("{module}: internal error: {message}")]
    Internal {
        module: &'static str,
        message: String,
    },
}

impl Error {
    pub(crate) fn config(module: &'static str, message: impl Into<String>) -> Self {
        Error::Configuration {
            module,
            message: message.into(),
        }
    }

    pub(crate) fn solver(module: &'static str, message: impl Into<String>) -> Self {
        Error::SolverFailure {
            module,
            message: message.into(),
            residuals: Vec::new(),
        }
    }

    pub(crate) fn internal(module: &'static str, message: impl Into<String>) -> Self {
        Error::Internal {
            module,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
