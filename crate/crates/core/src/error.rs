use thiserror::Error;

/// Errors produced by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// An input violates a documented invariant. `field` is a dotted key path.
    #[error("invalid `{field}`: {reason}")]
    Validation { field: String, reason: String },

    /// The shot-noise reference is zero, so no ratio can be formed.
    #[error("shot-noise level is undefined: {0}")]
    UndefinedSnl(String),

    #[error("division by zero: {0}")]
    Division(String),

    /// An analytic result contradicts the invariants of its inputs.
    #[error("internal consistency failure: {0}")]
    Consistency(String),

    #[error("quadrant {0} receives no power")]
    EmptyQuadrant(usize),

    #[error("calibration infeasible: {reason}")]
    FitInfeasible { reason: String, diagnostics: Vec<String> },

    #[error("search failed: {0}")]
    Search(String),

    #[error("Fock truncation too small: tail mass {tail:.3e} exceeds {limit:.1e}")]
    TailMass { tail: f64, limit: f64 },

    #[error("numerical integration did not converge: {0}")]
    Integration(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("config parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Nests a validation error under a parent key, e.g. `gain` -> `source.gain`.
    pub fn within(self, parent: &str) -> Self {
        match self {
            Error::Validation { field, reason } => Error::Validation {
                field: format!("{parent}.{field}"),
                reason,
            },
            other => other,
        }
    }

    /// Process exit code: 2 validation, 3 numeric/consistency, 4 i/o.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation { .. } | Error::Parse(_) => 2,
            Error::Io { .. } => 4,
            _ => 3,
        }
    }
}

pub(crate) fn ensure(cond: bool, field: &str, reason: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::validation(field, reason()))
    }
}
