use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("token {token} outside domain of size {domain} for dimension {dim}")]
    Domain { dim: u16, token: u64, domain: u32 },

    #[error("invalid range on dimension {dim}: lo {lo} > hi {hi}")]
    InvalidRange { dim: u16, lo: i64, hi: i64 },

    #[error("duplicate keyword ({dim}, {token}) in object {object}")]
    DuplicateKeyword { object: u32, dim: u16, token: u32 },

    #[error("duplicate object id {0}")]
    DuplicateObject(u32),

    #[error("object ids must be dense 0..{expected}, found {found}")]
    SparseObjectIds { expected: u32, found: u32 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimensionality mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("counter overflow for object {object}: max_count {max_count} exceeded")]
    CounterOverflow { object: u32, max_count: u32 },

    #[error("object id {object} out of range (num_objects {num_objects})")]
    ObjectOutOfRange { object: u32, num_objects: u32 },

    #[error("hash table full (capacity {capacity}) while inserting object {object}")]
    TableFull { object: u32, capacity: usize },

    #[error("no candidates to verify")]
    NoCandidates,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("corrupt index file: {0}")]
    CorruptIndex(String),

    #[error("query {query}: {source}")]
    Query {
        query: u32,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors that signal a broken internal invariant rather than bad input.
    pub fn is_invariant_violation(&self) -> bool {
        match self {
            Error::CounterOverflow { .. } | Error::TableFull { .. } => true,
            Error::Query { source, .. } => source.is_invariant_violation(),
            _ => false,
        }
    }
}
