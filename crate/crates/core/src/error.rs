use std::fmt;

/// Broad failure class, used for CLI exit codes and FFI status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    InvalidArgument,
    Numerical,
    Capacity,
    Convergence,
    Divergence,
    Io,
    Parse,
    Config,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::InvalidArgument => 2,
            ErrorCategory::Numerical => 3,
            ErrorCategory::Capacity => 4,
            ErrorCategory::Convergence => 5,
            ErrorCategory::Divergence => 6,
            ErrorCategory::Io => 7,
            ErrorCategory::Parse => 8,
            ErrorCategory::Config => 9,
        }
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ErrorCategory::InvalidArgument => "invalid-argument",
            ErrorCategory::Numerical => "numerical",
            ErrorCategory::Capacity => "capacity",
            ErrorCategory::Convergence => "convergence",
            ErrorCategory::Divergence => "divergence",
            ErrorCategory::Io => "io",
            ErrorCategory::Parse => "parse",
            ErrorCategory::Config => "config",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// `dᵀKd ≤ 0` inside CG: the operator lost positive definiteness under roundoff.
    #[error("CG breakdown at iteration {iteration}: d'Kd = {curvature:e}")]
    Breakdown { iteration: usize, curvature: f64 },

    #[error("Cholesky factorization failed (matrix not positive definite); try a larger noise variance lambda")]
    NotPositiveDefinite,

    #[error("{what}: n = {n} exceeds the dense capacity guard of {limit}")]
    Capacity {
        what: &'static str,
        n: usize,
        limit: usize,
    },

    #[error("{context}: solver did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        context: String,
        iterations: usize,
        residual: f64,
    },

    #[error("non-finite state at iteration {iteration}: psi = {state:?}")]
    Diverged { iteration: usize, state: [f64; 3] },

    #[error("{0}")]
    Degenerate(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("configuration invalid:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InvalidArgument(_) | Error::DimensionMismatch { .. } => {
                ErrorCategory::InvalidArgument
            }
            Error::Breakdown { .. } | Error::NotPositiveDefinite | Error::Degenerate(_) => {
                ErrorCategory::Numerical
            }
            Error::Capacity { .. } => ErrorCategory::Capacity,
            Error::NotConverged { .. } => ErrorCategory::Convergence,
            Error::Diverged { .. } => ErrorCategory::Divergence,
            Error::Context { source, .. } => source.category(),
            Error::Parse { .. } | Error::Csv(_) | Error::Json(_) => ErrorCategory::Parse,
            Error::Config(_) => ErrorCategory::Config,
            Error::Io(_) => ErrorCategory::Io,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Error {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Strips any `Context` wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            e => e,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { what, expected, got });
    }
    Ok(())
}
