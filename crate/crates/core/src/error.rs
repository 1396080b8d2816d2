//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, PsemError>;

/// Broad failure category, used by front ends to map errors onto exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Estimation,
    Incompatible,
}

impl ErrorKind {
    /// Process exit status used by the command line.
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Estimation => 4,
            ErrorKind::Incompatible => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorKind::Config => "config",
            ErrorKind::Data => "data",
            ErrorKind::Estimation => "estimation",
            ErrorKind::Incompatible => "incompatible",
        }
    }
}

#[derive(Debug, Error)]
pub enum PsemError {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e}, theta {theta:?})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        theta: Vec<f64>,
    },

    #[error("singular jacobian (reciprocal condition estimate {rcond:.3e})")]
    SingularJacobian { rcond: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("positivity violation: sampling probability below {epsilon} for records {ids:?}")]
    Positivity { epsilon: f64, ids: Vec<String> },

    #[error("logistic fit for the sampling model diverged (separation); use design-known weights instead")]
    Separation,

    #[error("assumption {assumption} not supported by the data: {detail}")]
    Assumption { assumption: &'static str, detail: String },

    #[error("degenerate estimate: {0}")]
    Degenerate(String),

    #[error("sensitivity parameters incompatible with the data: {0}")]
    Incompatible(String),
}

impl PsemError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            PsemError::Config(_) => ErrorKind::Config,
            PsemError::Schema(_) | PsemError::Row { .. } | PsemError::Io(_) | PsemError::Empty(_) => ErrorKind::Data,
            PsemError::Incompatible(_) => ErrorKind::Incompatible,
            _ => ErrorKind::Estimation,
        }
    }

    /// Stable snake_case name of the variant.
    pub fn name(&self) -> &'static str {
        match self {
            PsemError::Schema(_) => "schema",
            PsemError::Row { .. } => "row",
            PsemError::Io(_) => "io",
            PsemError::Empty(_) => "empty",
            PsemError::Config(_) => "config",
            PsemError::NonConvergence { .. } => "non_convergence",
            PsemError::SingularJacobian { .. } => "singular_jacobian",
            PsemError::NonFinite(_) => "non_finite",
            PsemError::Positivity { .. } => "positivity",
            PsemError::Separation => "separation",
            PsemError::Assumption { .. } => "assumption",
            PsemError::Degenerate(_) => "degenerate",
            PsemError::Incompatible(_) => "incompatible",
        }
    }

    pub(crate) fn row(row: usize, message: impl Into<String>) -> Self {
        PsemError::Row {
            row,
            message: message.into(),
        }
    }
}
