use thiserror::Error;

/// Errors raised by the library.
///
/// Soft failures (a rank-deficient `C`, a nominal point that is only
/// approximately feasible) are reported through [`crate::model::ValidationReport`]
/// instead; they only become errors where an operation cannot proceed.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("invalid basis function #{index}: {reason}")]
    InvalidBasis { index: usize, reason: String },

    #[error("equality Jacobian is singular at the nominal point (condition number {condition:e})")]
    SingularJacobian { condition: f64 },

    #[error("empty box: lower bound {lower} exceeds upper bound {upper} at coordinate {index}")]
    EmptyBox { index: usize, lower: f64, upper: f64 },

    #[error("unsupported uncertainty form for basis #{index}: {reason}")]
    UnsupportedUncertaintyForm { index: usize, reason: String },

    #[error("uncertainty radius must be nonnegative, got {0}")]
    NegativeRadius(f64),

    #[error("invalid uncertainty model: {0}")]
    InvalidUncertainty(String),

    #[error("robustness margin is unbounded: the uncertainty never enters the restriction")]
    InfiniteMargin,

    #[error("implicit variable retrieval failed after {iterations} iterations (residual {residual:e})")]
    RetrievalFailed { iterations: usize, residual: f64 },

    #[error("convex subproblem failed: {0}")]
    Subproblem(String),

    #[error("invalid convex program: {0}")]
    InvalidProgram(String),

    #[error("invalid option: {0}")]
    InvalidOption(String),

    #[error("parse error at line {line}, field `{field}`: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },

    #[error("problem validation failed: {0}")]
    Validation(String),

    #[error("unknown catalog problem `{0}`")]
    UnknownCatalog(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn dims(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected,
            actual,
        }
    }

    /// Short machine-readable kind tag, used in CLI error JSON and FFI status mapping.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidBasis { .. } => "invalid_basis",
            Error::SingularJacobian { .. } => "singular_jacobian",
            Error::EmptyBox { .. } => "empty_box",
            Error::UnsupportedUncertaintyForm { .. } => "unsupported_uncertainty_form",
            Error::NegativeRadius(_) => "negative_radius",
            Error::InvalidUncertainty(_) => "invalid_uncertainty",
            Error::InfiniteMargin => "infinite_margin",
            Error::RetrievalFailed { .. } => "retrieval_failed",
            Error::Subproblem(_) => "subproblem_failed",
            Error::InvalidProgram(_) => "invalid_program",
            Error::InvalidOption(_) => "invalid_option",
            Error::Parse { .. } => "parse_error",
            Error::Validation(_) => "validation_error",
            Error::UnknownCatalog(_) => "unknown_catalog",
            Error::Io(_) => "io_error",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
