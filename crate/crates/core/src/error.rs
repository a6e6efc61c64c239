use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(
        "attention extent k_d = {extent} (k = {range}, dilation = {dilation}) exceeds the {height}x{width} feature map{hint}"
    )]
    Geometry {
        range: usize,
        dilation: usize,
        height: usize,
        width: usize,
        extent: usize,
        hint: &'static str,
    },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("checkpoint {path}: bad magic, expected MATCKPT1")]
    BadMagic { path: PathBuf },

    #[error("checkpoint integrity error at byte {position}: {detail}")]
    Integrity { position: u64, detail: String },

    #[error("checkpoint parameter `{name}`: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: [usize; 4],
        found: [usize; 4],
    },

    #[error("checkpoint is missing parameter `{0}`")]
    MissingParam(String),

    #[error("checkpoint has unexpected parameter `{0}`")]
    UnexpectedParam(String),

    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
