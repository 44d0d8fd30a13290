use thiserror::Error;

use crate::quiver::ValidationReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid datum: {0}")]
    InvalidDatum(ValidationReport),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid group element at {vertex}: {reason}")]
    InvalidGroupElement { vertex: String, reason: String },

    #[error("matrix for sink {sink} is not positive definite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { sink: usize, min_eigenvalue: f64 },

    #[error("matrix is singular (min eigenvalue {min_eigenvalue:e} below floor {floor:e})")]
    SingularMatrix { min_eigenvalue: f64, floor: f64 },

    #[error("matrix is not symmetric (asymmetry {asymmetry:e})")]
    Asymmetric { asymmetry: f64 },

    #[error("numeric error: {context}")]
    NumericError {
        context: String,
        iteration: Option<usize>,
    },

    #[error("not a fixed point: residual {residual:e}, min eigenvalue of M {min_m_eigenvalue:e}")]
    NotAFixedPoint {
        residual: f64,
        min_m_eigenvalue: f64,
    },

    #[error("wrong shape: {0}")]
    WrongShape(String),

    #[error("datum is not geometric (residual {residual:e})")]
    NotGeometric { residual: f64 },

    #[error("scaling did not converge (status {status})")]
    NotConverged { status: String },

    #[error("inconclusive: {0}")]
    Inconclusive(String),

    #[error("generation failed after {iterations} sweeps (residual {residual:e}, status {status})")]
    GenerationFailed {
        iterations: usize,
        residual: f64,
        status: String,
    },

    #[error("budget exceeded: need {needed}, budget {budget}")]
    BudgetExceeded { needed: usize, budget: usize },

    #[error(
        "filtration is not invariant: arrow '{label}' block ({row_block}, {col_block}) \
         has entry of magnitude {magnitude:e}"
    )]
    NonInvariantFiltration {
        label: String,
        row_block: usize,
        col_block: usize,
        magnitude: f64,
    },

    #[error("invalid filtration: {0}")]
    InvalidFiltration(String),
}

impl Error {
    pub(crate) fn numeric(context: impl Into<String>) -> Self {
        Error::NumericError {
            context: context.into(),
            iteration: None,
        }
    }
}
