use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Binary file decoding failures.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 8], found: Vec<u8> },
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("truncated file: needed {needed} bytes, got {got}")]
    Truncated { needed: usize, got: usize },
    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error("nonzero header padding")]
    BadPadding,
    #[error("malformed metadata trailer: {0}")]
    Metadata(String),
    #[error("{0} unexpected trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("non-finite value at element {0}")]
    NonFinite(usize),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch in {op}: expected {expected}, found {found}")]
    Shape {
        op: &'static str,
        expected: String,
        found: String,
    },

    #[error("invalid label {label} at row {row} (num_classes = {num_classes})")]
    InvalidLabel {
        row: usize,
        label: usize,
        num_classes: usize,
    },

    #[error("{}: {source}", path.display())]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("class {0} has no items")]
    MissingClass(usize),

    #[error("class text embeddings are required but missing")]
    MissingTextEmbeddings,

    #[error("degenerate embedding: row {row} of {what} has zero norm")]
    DegenerateEmbedding { what: &'static str, row: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("blending weight {0} outside [0, 1]")]
    LambdaOutOfRange(f64),

    #[error("cannot adapt: no class received any pseudolabel")]
    CannotAdapt,

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::Shape {
            op,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
