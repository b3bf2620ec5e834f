use thiserror::Error;

/// Errors raised by the design, metric and simulation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the operation (label out of
    /// range, negative variance, malformed vector length, ...).
    #[error("input out of domain: {0}")]
    InputDomain(String),

    /// Shapes of cooperating objects disagree (factor graph vs. mother
    /// constellation, codebook vs. graph, ...).
    #[error("structural mismatch: {0}")]
    Structural(String),

    /// The input is well-formed but degenerate (all-zero energy, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// The overlap rules cannot place the surplus points symmetrically.
    #[error("infeasible symmetric overlap: {0}")]
    InfeasibleSymmetry(String),

    /// An exhaustive enumeration was requested whose size exceeds the budget.
    #[error("enumeration of {required} {what} exceeds the budget of {budget}")]
    BudgetRefusal {
        what: &'static str,
        required: u128,
        budget: u128,
    },

    /// A document does not match its schema; the message lists JSON
    /// pointers to the offending values.
    #[error("schema violation: {0}")]
    Schema(String),

    /// A quantity that must be positive or finite was not; this points at a
    /// numerical fault and is never clamped.
    #[error("numerical fault: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
