use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("cluster invariant violated: {0}")]
    Violation(crate::cluster::ViolationReport),
    #[error("node budget exceeded (budget {budget}, spent at least {spent})")]
    BudgetExceeded { budget: u64, spent: u64 },
    #[error("memory budget exceeded (limit {limit} stored items)")]
    MemoryBudget { limit: usize },
    #[error("construction failed: {0}")]
    Construction(String),
    #[error("axiom violation: {0}")]
    AxiomViolation(String),
    #[error("generation failed after {0} attempts")]
    GenerationFailed(u64),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("metadata mismatch: {0}")]
    MetadataMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
