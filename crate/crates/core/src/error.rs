use std::fmt;
use std::path::PathBuf;

/// One violated model invariant, with the offending location spelled out.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub location: String,
    pub message: String,
}

impl Diagnostic {
    pub fn new(location: impl Into<String>, message: impl Into<String>) -> Self {
        Self { location: location.into(), message: message.into() }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

fn join_diagnostics(diags: &[Diagnostic]) -> String {
    diags.iter().map(|d| format!("  - {d}")).collect::<Vec<_>>().join("\n")
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot read or write {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("model validation failed:\n{}", join_diagnostics(.0))]
    Invalid(Vec<Diagnostic>),

    /// The signaling-free update has a zero denominator: the observation
    /// cannot occur under the given belief and action profile.
    #[error("impossible observation for agent {} at time {}", agent + 1, time + 1)]
    ImpossibleObservation { agent: usize, time: usize },

    #[error("conditioning event has probability zero: {0}")]
    ZeroProbability(String),

    #[error("budget exceeded for {what}: need {needed}, budget {budget}")]
    Budget { what: String, needed: u128, budget: u128 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("bundle error: {0}")]
    Bundle(String),

    #[error("no fixed point found at time {} cell {cell}: best gap {gap:.3e}, consistency residual {residual:.3e}", time + 1)]
    NoFixedPoint { time: usize, cell: usize, gap: f64, residual: f64 },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
