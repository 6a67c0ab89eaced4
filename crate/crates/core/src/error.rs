use thiserror::Error;

/// Errors raised by the geometry, stepping and estimation layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A caller violated a documented precondition or supplied bad input.
    #[error("usage error: {0}")]
    Usage(String),

    /// An exterior point is farther from the boundary than the uniqueness
    /// radius allows. Usually the step size is too large for the domain's
    /// curvature.
    #[error("projection ambiguity: point is {distance:.3e} outside the domain, reach is {reach:.3e}")]
    ProjectionAmbiguity { distance: f64, reach: f64 },

    /// An iterative solver failed to converge.
    #[error("numeric error: {what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    Numeric {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// The model itself is inconsistent: degenerate diffusion, a reflection
    /// field that is not oblique, a non-finite coefficient, and so on.
    #[error("model error: {0}")]
    Model(String),

    /// A run configuration is invalid. `key` names the offending setting.
    #[error("invalid configuration for `{key}`: {message}")]
    Config { key: String, message: String },

    /// Reading a configuration or writing an output failed.
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    /// Short machine-readable tag used in structured error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Usage(_) => "usage",
            Error::ProjectionAmbiguity { .. } => "projection_ambiguity",
            Error::Numeric { .. } => "numeric",
            Error::Model(_) => "model",
            Error::Config { .. } => "config",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
