use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// Each variant maps onto one CLI exit code through [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration. `path` names the offending field.
    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    /// A computation produced a non-finite value or left its domain.
    #[error("numerical domain error: {0}")]
    NumericalDomain(String),

    /// The model does not provide a capability the operation needs
    /// (missing energy, missing coefficient, ...).
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A theorem's preconditions fail for the supplied constants.
    #[error("theorem not applicable: {0}")]
    TheoremInapplicable(String),

    /// An iterative solver ran out of iterations.
    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    /// A tabulation would exceed its cell budget.
    #[error("resource limit: {required} cells required, budget is {budget}")]
    Resource { required: u128, budget: u128 },

    /// An observer callback aborted a chain run.
    #[error("observer failed at step {step}: {message}")]
    Observer { step: u64, message: String },

    /// Expected result files are missing.
    #[error("missing results: {0}")]
    MissingFiles(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn domain(message: impl Into<String>) -> Self {
        Error::NumericalDomain(message.into())
    }

    /// Process exit status for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::NumericalDomain(_) | Error::Observer { .. } => 3,
            Error::NonConvergence { .. } => 4,
            Error::MissingFiles(_) => 5,
            Error::Unsupported(_) | Error::TheoremInapplicable(_) => 2,
            Error::Resource { .. } | Error::Io(_) | Error::Csv(_) => 1,
        }
    }
}
