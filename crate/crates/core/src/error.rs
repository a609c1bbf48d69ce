//! Crate-wide error and model-violation types.

use thiserror::Error;

/// A single model-invariant violation. Violations are data, not failures:
/// `validate` returns a list of them and loading fails only when the list
/// is non-empty.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Violation {
    /// Dotted path of the offending field, e.g. `transition[1]` or `cost[0][1]`.
    pub field: String,
    /// Human-readable description of the violated bound.
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse model file: {0}")]
    Parse(String),

    #[error("model validation failed: {}", format_violations(.0))]
    Validation(Vec<Violation>),

    #[error("observation {observation} has zero probability at time {time}")]
    ZeroProbObservation { observation: usize, time: usize },

    #[error("message {message} has zero probability under the current quantizer")]
    ImpossibleMessage { message: usize },

    #[error("history {history:?} has zero probability under the given policy")]
    ImpossibleHistory { history: Vec<usize> },

    #[error("quantizer has no entry for belief id {belief_id}")]
    QuantizerIncomplete { belief_id: usize },

    #[error("policy table at time {time} has no entry for key {key:?}")]
    PolicyIncomplete { time: usize, key: Vec<usize> },

    #[error(
        "search space requires {required} policy evaluations, budget is {budget}; \
         use a smaller instance or raise --budget"
    )]
    BudgetExceeded { required: f64, budget: u64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{0}")]
    Unsupported(String),
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;
