use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("gaussian set is empty")]
    EmptySet,

    #[error("dimension mismatch: {left_w}x{left_h} vs {right_w}x{right_h}")]
    DimensionMismatch { left_w: usize, left_h: usize, right_w: usize, right_h: usize },

    #[error("image too small: {width}x{height} (minimum side {min})")]
    ImageTooSmall { width: usize, height: usize, min: usize },

    #[error("non-finite {param} on gaussian {index}")]
    NonFinite { index: usize, param: &'static str },

    #[error("loss became non-finite at iteration {0}")]
    NonFiniteLoss(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("partition does not match the gaussian set: {0}")]
    StalePartition(String),

    #[error("bad magic bytes")]
    BadMagic,

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),

    #[error("truncated body: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("{0} trailing bytes after the last record")]
    TrailingBytes(usize),

    #[error("file holds no gaussians")]
    NoGaussians,

    #[error("block table is not a valid partition: {0}")]
    CorruptBlocks(String),

    #[error("value {value} cannot be stored as float16")]
    Unrepresentable { value: f64 },

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(PathBuf),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse grouping of [`Error`] variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Reading or writing a file failed.
    Io,
    /// A file was malformed or not in a supported format.
    Format,
    /// An argument or input did not meet a precondition.
    Input,
    /// Optimization diverged.
    Fit,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io(_) | Error::Image(image::ImageError::IoError(_)) => ErrorKind::Io,
            Error::BadMagic
            | Error::UnsupportedVersion(_)
            | Error::Truncated { .. }
            | Error::TrailingBytes(_)
            | Error::NoGaussians
            | Error::CorruptBlocks(_)
            | Error::Unrepresentable { .. }
            | Error::UnsupportedFormat(_)
            | Error::Image(_) => ErrorKind::Format,
            Error::NonFinite { .. } | Error::NonFiniteLoss(_) => ErrorKind::Fit,
            Error::InvalidParameter(_)
            | Error::EmptySet
            | Error::DimensionMismatch { .. }
            | Error::ImageTooSmall { .. }
            | Error::InvalidConfig(_)
            | Error::StalePartition(_) => ErrorKind::Input,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
