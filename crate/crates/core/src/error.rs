use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("non-finite values in tensor `{tensor}`")]
    NumericFailure { tensor: String },
    #[error("gradients have not been computed since the last reset")]
    UninitializedGradients,
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("bad magic bytes: {0}")]
    BadMagic(String),
    #[error("truncated data: {0}")]
    Truncated(String),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported maxval {0} (expected 255 or 65535)")]
    UnsupportedMaxval(u32),
    #[error("checkpoint does not match the requested model: {0}")]
    ConfigMismatch(String),
    #[error("missing data: {0}")]
    MissingData(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable numeric code, used by the C ABI. Zero is reserved for success.
    pub fn code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_) => 1,
            Error::Shape(_) => 2,
            Error::DegenerateInput(_) => 3,
            Error::NumericFailure { .. } => 4,
            Error::UninitializedGradients => 5,
            Error::Unsupported(_) => 6,
            Error::BadMagic(_) => 7,
            Error::Truncated(_) => 8,
            Error::MalformedHeader(_) => 9,
            Error::UnsupportedVersion(_) => 10,
            Error::UnsupportedMaxval(_) => 11,
            Error::ConfigMismatch(_) => 12,
            Error::MissingData(_) => 13,
            Error::EmptyDataset => 14,
            Error::NanLoss { .. } => 15,
            Error::Config(_) => 16,
            Error::Io(_) => 17,
        }
    }
}
