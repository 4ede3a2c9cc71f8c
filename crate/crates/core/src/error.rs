use thiserror::Error;

/// Error taxonomy shared by every module in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration struct is structurally invalid.
    #[error("configuration error: {0}")]
    Config(String),

    /// An input object violates a documented precondition.
    #[error("input error: {0}")]
    Input(String),

    /// A numerical routine produced an unusable result; carries enough
    /// context to locate the offending operation.
    #[error("numeric error in {context}: {message}")]
    Numeric { context: String, message: String },

    /// The fixed-point solver stalled; `residual` is the last map residual.
    #[error("solver did not converge: residual {residual:.3e} after {iterations} iterations")]
    SolverStalled { residual: f64, iterations: usize },

    /// Repeated step rejection in an SDE integrator.
    #[error("stiffness error: {0}")]
    Stiffness(String),

    /// An interaction kernel was evaluated at coincident points.
    #[error("singular kernel: {0}")]
    SingularKernel(String),

    /// A stable step size could not be found.
    #[error("step size error: {0}")]
    StepSize(String),
}

impl Error {
    pub fn numeric(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Numeric {
            context: context.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
