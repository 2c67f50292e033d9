use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate occupancy: state {state} has zero marginal")]
    DegenerateOccupancy { state: usize },

    #[error("singular linear system while {0}")]
    Singular(&'static str),

    #[error("linear program is infeasible")]
    Infeasible,

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("support violation: pi2(a={action}|s={state}) = 0 while pi1 > 0")]
    SupportViolation { state: usize, action: usize },

    #[error("constraint {constraint} violated: margin b - V_c = {margin:e} is not positive")]
    UnsafePolicy { constraint: usize, margin: f64 },

    #[error("barrier domain: cost advantage {advantage:e} >= margin {margin:e} for constraint {constraint}")]
    BarrierDomain {
        constraint: usize,
        advantage: f64,
        margin: f64,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("non-finite value at iteration {iter}: {what}")]
    NonFinite { iter: usize, what: String },

    #[error("environment generation failed after {attempts} attempts: {reason}")]
    Generation { attempts: usize, reason: String },

    #[error("configuration error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(format!("json: {e}"))
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(format!("csv: {e}"))
    }
}

impl Error {
    /// Stable machine-readable kind used by the CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidModel(_) => "invalid_model",
            Error::InvalidPolicy(_) => "invalid_policy",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::DegenerateOccupancy { .. } => "degenerate_occupancy",
            Error::Singular(_) => "singular",
            Error::Infeasible => "infeasible",
            Error::Unbounded => "unbounded",
            Error::SupportViolation { .. } => "support_violation",
            Error::UnsafePolicy { .. } => "unsafe_policy",
            Error::BarrierDomain { .. } => "barrier_domain",
            Error::Numerical(_) => "numerical",
            Error::NonFinite { .. } => "non_finite",
            Error::Generation { .. } => "generation",
            Error::Config { .. } => "config",
            Error::Unsupported(_) => "unsupported",
            Error::Io(_) => "io",
        }
    }
}
