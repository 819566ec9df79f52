use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An input violated one of its invariants. `field` is a dotted path into
    /// the params document (e.g. `costs.channels`).
    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },

    #[error("constant churn probability is zero: expected lifetime diverges")]
    Divergent,

    #[error("initial churn rate is zero: closed form is singular")]
    Singular,

    #[error("series did not converge within {horizon} periods (tail bound {tail_bound:e})")]
    NonConvergence { horizon: usize, tail_bound: f64 },

    #[error("target {target} lies outside the attainable range ({lo}, {hi})")]
    NoSolution { target: f64, lo: f64, hi: f64 },

    #[error("mean time to churn is not monotone in cr_init on ({lo}, {hi}); inversion is ambiguous")]
    Ambiguous { lo: f64, hi: f64 },

    #[error("{param} is within one finite-difference step of its domain boundary")]
    BoundaryProximity { param: &'static str },

    #[error("factor jacobian has no entry for {0}")]
    MissingJacobianEntry(&'static str),

    #[error("need at least {needed} hazard points, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("sweep grid is empty")]
    EmptyGrid,

    #[error("malformed input: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Field path for validation errors, if any.
    pub fn field(&self) -> Option<&str> {
        match self {
            Error::Validation { field, .. } => Some(field),
            _ => None,
        }
    }

    /// True for failures of an iterative or series procedure rather than of
    /// the inputs themselves.
    pub fn is_convergence(&self) -> bool {
        matches!(self, Error::NonConvergence { .. } | Error::Ambiguous { .. })
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
