//! Error taxonomy for the whole toolkit.
//!
//! Every fallible operation returns [`Error`]. Variants are grouped by the
//! process exit code they map to at the CLI boundary: usage (2), I/O (3),
//! numeric (4), integrity (5).

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand shapes do not conform for the named primitive.
    #[error("shape mismatch in `{op}`: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A NaN or infinity appeared where finite values are required.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// A weight column had zero L2 norm; normalization is undefined.
    #[error("zero-norm column {index}: cannot normalize")]
    ZeroNormColumn { index: usize },

    /// A feature row had zero L2 norm; normalization is undefined.
    #[error("zero-norm feature row {index}: cannot normalize")]
    ZeroNormRow { index: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    /// `backward` requires a rank-0 (scalar) loss node.
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    /// `backward` was called twice on the same graph without rebuilding.
    #[error("backward already ran on this graph; rebuild the graph instead of re-running")]
    BackwardConsumed,

    /// Violated precondition on a user-supplied argument.
    #[error("invalid argument: {message}")]
    InvalidArgument { message: String },

    /// Bad key=value configuration input.
    #[error("config error: {message}")]
    Config { message: String },

    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A serialized artifact failed structural validation.
    #[error("{kind}{}", fmt_path(.path))]
    Format {
        path: Option<PathBuf>,
        kind: FormatErrorKind,
    },
}

/// Structural defects in serialized artifacts (tensors, checkpoints, IDX).
///
/// Each variant is a distinct, matchable failure code; the fuzz harness
/// asserts corrupted inputs land here rather than panicking.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FormatErrorKind {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("truncated input: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },

    #[error("{extra} trailing bytes after payload")]
    TrailingBytes { extra: usize },

    #[error("dimension overflow: dims {dims:?} exceed addressable size")]
    DimOverflow { dims: Vec<u64> },

    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    ChecksumMismatch { stored: u64, computed: u64 },

    #[error("missing entries {missing:?}; expected {expected:?}")]
    MissingEntries {
        expected: Vec<String>,
        missing: Vec<String>,
    },

    #[error("duplicate entry name {name:?}")]
    DuplicateEntry { name: String },

    #[error("entry name is not valid UTF-8")]
    InvalidName,

    #[error("invalid value: {what}")]
    InvalidValue { what: String },
}

fn fmt_path(path: &Option<PathBuf>) -> String {
    match path {
        Some(p) => format!(" in {}", p.display()),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn format(kind: FormatErrorKind) -> Self {
        Error::Format { path: None, kind }
    }

    /// Shorthand for [`Error::InvalidArgument`].
    pub fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument {
            message: message.into(),
        }
    }

    /// Attach a file path to format errors that were produced while parsing
    /// an in-memory buffer.
    pub(crate) fn with_path(self, p: &std::path::Path) -> Self {
        match self {
            Error::Format { path: None, kind } => Error::Format {
                path: Some(p.to_path_buf()),
                kind,
            },
            other => other,
        }
    }

    /// Process exit code for the CLI: 2 usage, 3 I/O, 4 numeric, 5 integrity.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument { .. } | Error::Config { .. } => 2,
            Error::Io { .. } => 3,
            Error::ShapeMismatch { .. }
            | Error::NonFinite { .. }
            | Error::ZeroNormColumn { .. }
            | Error::ZeroNormRow { .. }
            | Error::LabelOutOfRange { .. }
            | Error::NonScalarLoss { .. }
            | Error::BackwardConsumed => 4,
            Error::Format { .. } => 5,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_documented_mapping() {
        assert_eq!(Error::invalid("epochs must be >= 1").exit_code(), 2);
        assert_eq!(
            Error::Io {
                path: PathBuf::from("/nope"),
                source: std::io::Error::from(std::io::ErrorKind::NotFound),
            }
            .exit_code(),
            3
        );
        assert_eq!(
            Error::NonFinite {
                context: "test".into()
            }
            .exit_code(),
            4
        );
        assert_eq!(
            Error::format(FormatErrorKind::ChecksumMismatch {
                stored: 1,
                computed: 2
            })
            .exit_code(),
            5
        );
    }

    #[test]
    fn format_error_display_includes_path_when_known() {
        let err = Error::format(FormatErrorKind::BadMagic {
            expected: *b"AATN",
            found: *b"XXXX",
        })
        .with_path(std::path::Path::new("/tmp/t.aat"));
        let msg = err.to_string();
        assert!(msg.contains("bad magic"), "{msg}");
        assert!(msg.contains("/tmp/t.aat"), "{msg}");
    }
}
