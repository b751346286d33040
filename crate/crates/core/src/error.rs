//! Error type shared by every module of the crate.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes or extents do not line up (matmul inner dims, conv geometry, ...).
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An index (token id, class id) is outside its valid range.
    #[error("index out of range: {0}")]
    Index(String),

    /// An operation's precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A fixed capacity (positional table length, context window) was exceeded.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// Invalid input data (empty dataset, bad horizon, ...).
    #[error("invalid input: {0}")]
    Input(String),

    /// A serialized artifact (FPV1, FPCK, CSV, manifest) is malformed.
    #[error("format error: {0}")]
    Format(String),

    /// A task template cannot satisfy its own invariants.
    #[error("template error: {0}")]
    Template(String),

    /// Dataset generation exhausted its retry budget.
    #[error("generation error: {0}")]
    Generation(String),

    /// Bad run configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
    pub fn index(msg: impl Into<String>) -> Self {
        Error::Index(msg.into())
    }
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
