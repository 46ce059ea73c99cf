use thiserror::Error;

use crate::problems::external::ExternalError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller passed arguments that violate an operation's preconditions.
    #[error("usage error: {0}")]
    Usage(String),

    /// A matrix could not be factorized or a computation produced non-finite values.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Every optimizer start failed to produce a finite objective.
    #[error("hyperparameter fit failed: {0}")]
    Fit(String),

    #[error("fitting component `{component}` failed: {source}")]
    Component {
        component: String,
        #[source]
        source: Box<Error>,
    },

    #[error("elastic net solver did not converge (max KKT residual {residual:e} after {sweeps} sweeps)")]
    SolverNonConvergence { residual: f64, sweeps: usize },

    #[error("objective returned {got} values, expected {expected}")]
    OracleArity { expected: usize, got: usize },

    #[error("objective returned a non-finite value in component {index}")]
    OracleNonFinite { index: usize },

    #[error(transparent)]
    External(#[from] ExternalError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
