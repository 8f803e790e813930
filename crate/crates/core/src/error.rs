use std::fmt;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate frame: {0}")]
    DegenerateFrame(String),

    #[error("too few residual frames: {found} available, {needed} required")]
    TooFewFrames { found: usize, needed: usize },

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl fmt::Display) -> Self {
        Error::InvalidArgument(msg.to_string())
    }
}

/// Failures while decoding one of the on-disk formats.
#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported {format} version {found} (expected {expected})")]
    Version { format: &'static str, found: u32, expected: u32 },

    #[error("truncated input at byte {offset}: missing {what}")]
    Truncated { what: String, offset: usize },

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("wav: {msg} (byte {offset})")]
    Wav { msg: String, offset: usize },

    #[error("track line {line}: {msg}")]
    Track { msg: String, line: usize },

    #[error("invalid content at byte {offset}: {msg}")]
    Invalid { msg: String, offset: usize },
}
