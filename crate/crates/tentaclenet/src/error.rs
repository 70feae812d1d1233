//! Crate-wide error type.

use std::io;

/// Errors produced anywhere in the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand shapes are incompatible.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A non-finite value reached a numeric kernel that requires finite input.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Invalid argument outside shape concerns (zero tentacles, bad order, ...).
    #[error("invalid argument: {0}")]
    Invalid(String),

    /// Batch-norm scale is (numerically) zero; the channel output is constant beta.
    #[error("degenerate batch-norm scale in channel {channel}; channel output is constant beta")]
    DegenerateScale { channel: usize },

    /// Training loss became NaN or infinite.
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    /// Model file does not start with the expected magic bytes.
    #[error("bad magic: not a model file")]
    BadMagic,

    /// Model file version is newer than this build understands.
    #[error("unsupported model format version {found}")]
    UnsupportedVersion { found: u16 },

    /// A binary input (model file, dataset batch) ended before its declared
    /// content.
    #[error("truncated input: {0}")]
    Truncated(String),

    /// Stored checksum does not match the payload.
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    CrcMismatch { stored: u32, computed: u32 },

    /// Structurally invalid record inside a model file.
    #[error("malformed model file: {0}")]
    Malformed(String),

    /// Dataset file is damaged or has the wrong size.
    #[error("corrupt dataset: {0}")]
    CorruptData(String),

    /// Text input (spec file, config file, CSV row) failed to parse.
    #[error("parse error: {0}")]
    Parse(String),

    /// Configuration key is unknown or its value is invalid.
    #[error("config error: {0}")]
    Config(String),

    /// Error from a lower layer, annotated with where it happened.
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Wrap an error with location context (layer index, file name, ...).
    pub fn context(self, ctx: impl Into<String>) -> Self {
        Error::Context {
            context: ctx.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
