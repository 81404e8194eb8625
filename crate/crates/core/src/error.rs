use thiserror::Error;

use crate::seeds::IterationRecord;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Numerical,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: String,
    },

    #[error("fields live on different grids ({0})")]
    GridMismatch(String),

    #[error("empty region: {0}")]
    EmptyRegion(String),

    #[error("singular {what}: {count} node(s) flagged, first at index {first}")]
    Singular { what: String, count: usize, first: usize },

    #[error("non-contraction: estimate q = {q:.4} >= guard {guard}; scale the coefficient down")]
    NonContraction { q: f64, guard: f64 },

    #[error("no convergence after {} iterations (last residual {:.3e})", .history.len(), .history.last().map(|r| r.residual_sup).unwrap_or(f64::NAN))]
    NonConvergence { history: Vec<IterationRecord> },

    #[error("seed is not {what}: derivative defect {defect:.3e} exceeds {limit:.3e}")]
    SeedNotAnalytic {
        what: &'static str,
        defect: f64,
        limit: f64,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("at n = {n}: {source}")]
    Level {
        n: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_)
            | Error::DimensionMismatch { .. }
            | Error::GridMismatch(_)
            | Error::EmptyRegion(_)
            | Error::Parse(_) => ErrorKind::Config,
            Error::Singular { .. }
            | Error::NonContraction { .. }
            | Error::NonConvergence { .. }
            | Error::SeedNotAnalytic { .. } => ErrorKind::Numerical,
            Error::Io(_) => ErrorKind::Io,
            Error::Level { source, .. } => source.kind(),
        }
    }

    /// Short stable token for machine-parsable diagnostics.
    pub fn reason(&self) -> String {
        match self {
            Error::Config(_) => "config".into(),
            Error::DimensionMismatch { .. } => "dimension mismatch".into(),
            Error::GridMismatch(_) => "grid mismatch".into(),
            Error::EmptyRegion(_) => "empty region".into(),
            Error::Singular { what, .. } => format!("singular {what}"),
            Error::NonContraction { .. } => "non-contraction".into(),
            Error::NonConvergence { .. } => "non-convergence".into(),
            Error::SeedNotAnalytic { .. } => "seed not analytic".into(),
            Error::Parse(_) => "parse".into(),
            Error::Io(_) => "io".into(),
            Error::Level { source, .. } => source.reason(),
        }
    }
}
