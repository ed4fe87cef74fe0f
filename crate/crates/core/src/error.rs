use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("shape {rows}x{cols} does not match data length {len}")]
    Shape { rows: usize, cols: usize, len: usize },
    #[error("matrices and vectors must have at least one row and one column")]
    Empty,
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("k = {k} is outside 1..={len}")]
    KOutOfRange { k: usize, len: usize },
    #[error("budget {budget} exceeds token count {len}")]
    BudgetExceedsLength { budget: usize, len: usize },
    #[error("selection is empty")]
    EmptySelection,
    #[error("selection index {index} is out of range for {len} tokens")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("selection indices must be strictly increasing")]
    UnsortedSelection,
    #[error("selection holds {count} indices but its budget is {budget}")]
    OverBudget { count: usize, budget: usize },
    #[error("selections have different budgets ({left} vs {right})")]
    BudgetMismatch { left: usize, right: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("score vector must be {0}")]
    WrongScoreKind(&'static str),
    #[error("policy `{0}` requires side state that was not provided")]
    MissingSideState(&'static str),
    #[error("side state for policy `{0}` was built with different parameters")]
    SideStateMismatch(&'static str),
    #[error("group parameter overflows half precision (channel {channel}, group {group})")]
    HalfOverflow { channel: usize, group: usize },
    #[error("zero-scale group (channel {channel}, group {group}) must have all code bits set")]
    NonCanonicalGroup { channel: usize, group: usize },
    #[error("from_dump workload requires a path")]
    MissingDumpPath,
    #[error("from_dump workloads must be loaded by the IO layer")]
    DumpRequiresIo,
}
