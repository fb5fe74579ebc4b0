use thiserror::Error;

/// Errors shared by all modules of the laboratory.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A query left the domain an object was built for (tabulated grid,
    /// finite moment generating function, horizon of a model, ...).
    #[error("{what}: {value} outside [{min}, {max}]")]
    OutOfRange {
        what: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },

    /// An object could not be constructed from the given parameters.
    #[error("construction failed: {0}")]
    Construction(String),

    /// The requested operation is not defined for this variant.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// The request exceeds a hard cost guard.
    #[error("budget exceeded: {what} needs {requested} but the guard is {limit}")]
    Budget {
        what: &'static str,
        requested: u64,
        limit: u64,
    },

    /// An integer search hit its cap before the predicate turned true.
    #[error("search for {what} exceeded cap {cap}")]
    CapExceeded { what: &'static str, cap: u64 },

    /// A bracketing step failed (no sign change / no grid point qualified).
    #[error("bracketing failed: {0}")]
    Bracketing(String),

    /// A result is returned but its error estimate exceeds the tolerance.
    #[error("precision loss: {0}")]
    Precision(String),
}
