use thiserror::Error;

/// Errors raised by the model, the discretization and the analysis layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PnpError {
    #[error("invalid parameter `{name}`: {reason}")]
    Validation { name: &'static str, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("singular linear system at pivot {0}")]
    SingularMatrix(usize),

    #[error(
        "nonlinear solve did not converge after {iterations} iterations (residual {residual:.3e})"
    )]
    NonConvergence {
        iterations: usize,
        residual: f64,
        best: Option<Box<crate::fem::DiscreteSolution>>,
    },

    #[error("concentration positivity could not be maintained")]
    Positivity,

    #[error("mesh is not strictly increasing: {0}")]
    Monotonicity(String),

    #[error("time integration failed: {0}")]
    Integration(String),

    #[error("root finding failed: {0}")]
    Root(String),

    #[error("outer iteration {iteration}: {source}")]
    Adapt {
        iteration: usize,
        #[source]
        source: Box<PnpError>,
    },
}

pub type Result<T> = std::result::Result<T, PnpError>;

impl PnpError {
    pub(crate) fn validation(name: &'static str, reason: impl Into<String>) -> Self {
        PnpError::Validation {
            name,
            reason: reason.into(),
        }
    }

    /// Strips any outer-iteration wrapper.
    pub fn root_cause(&self) -> &PnpError {
        match self {
            PnpError::Adapt { source, .. } => source.root_cause(),
            other => other,
        }
    }
}
