use std::fmt;

use thiserror::Error;

/// Every failure the library can report. Each variant maps to a stable
/// category code used by the CLI exit status and the C ABI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numeric input error: {0}")]
    NumericInput(String),
    #[error("gradient oracle error: {0}")]
    Oracle(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("import error: {0}")]
    Import(String),
    #[error("label error: {0}")]
    Label(String),
    #[error("empty clip error: {0}")]
    EmptyClip(String),
    #[error("stratification error: {0}")]
    Stratification(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("divergence error: {0}")]
    Divergence(String),
    #[error("insufficient frames: {0}")]
    InsufficientFrames(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error categories with fixed numeric codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(i32)]
pub enum ErrorCategory {
    Shape = 2,
    NumericInput = 3,
    Oracle = 4,
    Config = 5,
    Usage = 6,
    Format = 7,
    Integrity = 8,
    Import = 9,
    Label = 10,
    EmptyClip = 11,
    Stratification = 12,
    Data = 13,
    Divergence = 14,
    InsufficientFrames = 15,
    Io = 16,
}

impl ErrorCategory {
    pub fn code(self) -> i32 {
        self as i32
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Shape => "shape",
            ErrorCategory::NumericInput => "numeric-input",
            ErrorCategory::Oracle => "oracle",
            ErrorCategory::Config => "config",
            ErrorCategory::Usage => "usage",
            ErrorCategory::Format => "format",
            ErrorCategory::Integrity => "integrity",
            ErrorCategory::Import => "import",
            ErrorCategory::Label => "label",
            ErrorCategory::EmptyClip => "empty-clip",
            ErrorCategory::Stratification => "stratification",
            ErrorCategory::Data => "data",
            ErrorCategory::Divergence => "divergence",
            ErrorCategory::InsufficientFrames => "insufficient-frames",
            ErrorCategory::Io => "io",
        }
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Shape(_) => ErrorCategory::Shape,
            Error::NumericInput(_) => ErrorCategory::NumericInput,
            Error::Oracle(_) => ErrorCategory::Oracle,
            Error::Config(_) => ErrorCategory::Config,
            Error::Usage(_) => ErrorCategory::Usage,
            Error::Format(_) => ErrorCategory::Format,
            Error::Integrity(_) => ErrorCategory::Integrity,
            Error::Import(_) => ErrorCategory::Import,
            Error::Label(_) => ErrorCategory::Label,
            Error::EmptyClip(_) => ErrorCategory::EmptyClip,
            Error::Stratification(_) => ErrorCategory::Stratification,
            Error::Data(_) => ErrorCategory::Data,
            Error::Divergence(_) => ErrorCategory::Divergence,
            Error::InsufficientFrames(_) => ErrorCategory::InsufficientFrames,
            Error::Io(_) => ErrorCategory::Io,
        }
    }

    /// Prefix the message while keeping the category.
    pub fn context(self, prefix: impl AsRef<str>) -> Self {
        let p = prefix.as_ref();
        match self {
            Error::Shape(m) => Error::Shape(format!("{p}: {m}")),
            Error::NumericInput(m) => Error::NumericInput(format!("{p}: {m}")),
            Error::Oracle(m) => Error::Oracle(format!("{p}: {m}")),
            Error::Config(m) => Error::Config(format!("{p}: {m}")),
            Error::Usage(m) => Error::Usage(format!("{p}: {m}")),
            Error::Format(m) => Error::Format(format!("{p}: {m}")),
            Error::Integrity(m) => Error::Integrity(format!("{p}: {m}")),
            Error::Import(m) => Error::Import(format!("{p}: {m}")),
            Error::Label(m) => Error::Label(format!("{p}: {m}")),
            Error::EmptyClip(m) => Error::EmptyClip(format!("{p}: {m}")),
            Error::Stratification(m) => Error::Stratification(format!("{p}: {m}")),
            Error::Data(m) => Error::Data(format!("{p}: {m}")),
            Error::Divergence(m) => Error::Divergence(format!("{p}: {m}")),
            Error::InsufficientFrames(m) => Error::InsufficientFrames(format!("{p}: {m}")),
            Error::Io(e) => Error::Io(std::io::Error::new(e.kind(), format!("{p}: {e}"))),
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn integrity(msg: impl Into<String>) -> Self {
        Error::Integrity(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}
