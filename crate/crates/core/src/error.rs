use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error category, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("label `{0}` is not in the label map")]
    UnknownLabel(String),

    #[error("no usable rows after cleaning")]
    NoUsableRows,

    #[error("class {class_id} has {available} rows, need at least {required}")]
    TooFewRows {
        class_id: usize,
        available: usize,
        required: usize,
    },

    #[error("dimension mismatch: expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("incompatible models: {0}")]
    IncompatibleModels(String),

    #[error("empty confusion matrix")]
    EmptyMatrix,

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error(transparent)]
    Wire(#[from] WireError),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidArgument(_) => ErrorKind::Config,
            Error::Io(_) => ErrorKind::Io,
            Error::Csv(e) if e.is_io_error() => ErrorKind::Io,
            _ => ErrorKind::Data,
        }
    }
}

/// Failures decoding serialized models and protocol frames.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("truncated input: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("bad node tag {tag} at offset {offset}")]
    BadTag { tag: u8, offset: usize },
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u16),
    #[error("unknown message type {0}")]
    UnknownMsgType(u8),
    #[error("crc mismatch: frame says {expected:#010x}, payload hashes to {actual:#010x}")]
    CrcMismatch { expected: u32, actual: u32 },
    #[error("{0} trailing bytes after end of message")]
    TrailingBytes(usize),
    #[error("frame payload of {0} bytes exceeds the limit")]
    PayloadTooLarge(u64),
    #[error("invalid encoded value: {0}")]
    InvalidValue(String),
}
