use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not compose for the requested operation.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A numeric parameter is outside its valid range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A network or experiment configuration cannot be built.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data violates its contract (bad labels, empty dataset, ...).
    #[error("data error: {0}")]
    Data(String),

    /// A binary file does not match its expected format.
    #[error("format error at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },

    /// An API was called outside its documented protocol.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A kernel produced a non-finite value.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
