use thiserror::Error;

/// Errors raised by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("mode index {index:?} out of range 1..={modes}")]
    Index { index: Vec<usize>, modes: usize },

    #[error("grid mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("potential energy {value} is not positive (coercivity violated)")]
    Coercivity { value: f64 },

    #[error("numeric blow-up at step {step}: {what}")]
    BlowUp { step: usize, what: String },

    #[error("fixed-point iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("path {path}: {source}")]
    Path {
        path: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("diagnostics gate failed on path {path}: {what}")]
    Gate { path: usize, what: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// The innermost error, skipping path wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Path { source, .. } => source.root(),
            e => e,
        }
    }

    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Config(_) | Error::Index { .. } | Error::Dimension(_) => 2,
            Error::Numeric(_) | Error::Coercivity { .. } | Error::BlowUp { .. } | Error::Gate { .. } => 3,
            Error::NonConvergence { .. } => 4,
            _ => 1,
        }
    }
}
