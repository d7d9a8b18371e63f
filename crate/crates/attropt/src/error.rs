//! Crate-wide error type with stable machine-parsable codes.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("missing column `{column}` in {path}")]
    MissingColumn { column: String, path: String },
    #[error("non-numeric cell at row {row}, column `{column}`: `{value}`")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("unknown domain id `{id}` ({context})")]
    UnknownDomain { id: String, context: String },
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("continuous block {block} has zero norm{context}")]
    ZeroNormBlock { block: usize, context: String },
    #[error("singular system: {0}; use a regularization weight > 0")]
    Singular(String),
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("operation requires a {expected} model, got {got}")]
    ModelFamily {
        expected: &'static str,
        got: &'static str,
    },
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("iteration budget exhausted with residual {residual:.3e} (tol {tol:.3e})")]
    IterationBudget { residual: f64, tol: f64 },
    #[error("solver did not converge: {0}")]
    NonConvergence(String),
    #[error("linear program is infeasible")]
    LpInfeasible,
    #[error("linear program is unbounded")]
    LpUnbounded,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl Error {
    /// Stable short code for machine-parsable CLI error lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "E_IO",
            Error::Parse { .. } => "E_PARSE",
            Error::MissingColumn { .. } => "E_MISSING_COLUMN",
            Error::NonNumeric { .. } => "E_NON_NUMERIC",
            Error::UnknownDomain { .. } => "E_UNKNOWN_DOMAIN",
            Error::Dimension { .. } => "E_DIMENSION",
            Error::Schema(_) => "E_SCHEMA",
            Error::ZeroNormBlock { .. } => "E_ZERO_NORM_BLOCK",
            Error::Singular(_) => "E_SINGULAR",
            Error::NonFiniteLoss { .. } => "E_NON_FINITE_LOSS",
            Error::ModelFamily { .. } => "E_MODEL_FAMILY",
            Error::Infeasible(_) => "E_INFEASIBLE",
            Error::IterationBudget { .. } => "E_ITERATION_BUDGET",
            Error::NonConvergence(_) => "E_NON_CONVERGENCE",
            Error::LpInfeasible => "E_LP_INFEASIBLE",
            Error::LpUnbounded => "E_LP_UNBOUNDED",
            Error::InvalidInput(_) => "E_INVALID_INPUT",
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
