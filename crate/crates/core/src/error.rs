use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised across the allocation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("no elapsed days")]
    NoElapsedDays,
    #[error("degenerate historical")]
    DegenerateHistorical,
    #[error("inconsistent location sets: {0}")]
    InconsistentLocations(String),
    #[error("profile sum {0} ≠ 1")]
    ProfileSum(f64),
    #[error("duplicate site: {0}")]
    DuplicateSite(String),
    #[error("missing warehouse")]
    MissingWarehouse,
    #[error("location cannot host required resource")]
    NoCapacity,
    #[error("forbidden transfer leg")]
    ForbiddenLeg,
    #[error("locality violation: {from} -> {to} crosses districts")]
    LocalityViolation { from: String, to: String },
    #[error("stock underflow at {0}")]
    StockUnderflow(String),
    #[error("fleet cannot cover minimum allocation")]
    FleetTooSmall,
    #[error("absentee exceeds turnout")]
    AbsenteeExceedsTurnout,
    #[error(transparent)]
    Infeasible(#[from] InfeasibilityReport),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error beneath any context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}

/// Why an optimization instance admits no plan.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InfeasibilityReport {
    /// Location-days with no candidate inside the score bounds.
    pub empty_slots: Vec<(String, usize)>,
    /// Days (and resource names) on which no choice fits the available fleet.
    pub fleet_days: Vec<(usize, String)>,
}

impl InfeasibilityReport {
    pub fn is_empty(&self) -> bool {
        self.empty_slots.is_empty() && self.fleet_days.is_empty()
    }
}

impl fmt::Display for InfeasibilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "infeasible")?;
        if !self.empty_slots.is_empty() {
            let slots: Vec<String> = self
                .empty_slots
                .iter()
                .map(|(loc, day)| format!("{loc}@day{day}"))
                .collect();
            write!(f, "; no candidate within score bounds at {}", slots.join(", "))?;
        }
        if !self.fleet_days.is_empty() {
            let days: Vec<String> = self
                .fleet_days
                .iter()
                .map(|(day, scope)| format!("day{day} ({scope})"))
                .collect();
            write!(f, "; fleet exhausted on {}", days.join(", "))?;
        }
        Ok(())
    }
}

impl std::error::Error for InfeasibilityReport {}

pub trait ResultExt<T> {
    fn context(self, context: impl FnOnce() -> String) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn context(self, context: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| e.context(context()))
    }
}
