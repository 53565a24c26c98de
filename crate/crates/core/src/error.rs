use thiserror::Error;

/// Errors raised by estimation, inference and simulation routines.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input data or configuration.
    #[error("validation error: {0}")]
    Validation(String),

    /// Matrix shapes do not agree.
    #[error("dimension mismatch: {what}: expected {expected}, got {got}")]
    Dimension {
        what: String,
        expected: String,
        got: String,
    },

    /// A matrix that must be inverted is singular or too badly conditioned.
    #[error("{what} is singular or ill-conditioned (condition number {condition:.3e}); check regressors for collinearity")]
    Singular { what: String, condition: f64 },

    /// No optimizer start reached the convergence criterion.
    #[error("optimizer failure: {0}")]
    Optimizer(String),

    /// Restriction set `H beta = h` has no solution.
    #[error("infeasible restriction: {0}")]
    Infeasible(String),

    /// Any other numerical breakdown.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True when the error comes from bad input rather than numerical trouble.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Validation(_) | Error::Dimension { .. } | Error::Io(_) | Error::Csv(_)
        )
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Validation(_) => "validation",
            Error::Dimension { .. } => "dimension",
            Error::Singular { .. } => "singular",
            Error::Optimizer(_) => "optimizer",
            Error::Infeasible(_) => "infeasible",
            Error::Numerical(_) => "numerical",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
