//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid depth {depth} at pixel ({i}, {j}); depth must be positive")]
    InvalidDepth { i: f64, j: f64, depth: f64 },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("no valid depth pixels in the scene")]
    EmptyScene,

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty pixel mask")]
    EmptyMask,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("frame {frame_id}: {msg}")]
    Frame { frame_id: u32, msg: String },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("checkpoint parse error at byte offset {offset}: {msg}")]
    CheckpointParse { offset: u64, msg: String },

    #[error("non-finite gradient in parameter group '{group}' (first bad index {index})")]
    NonFiniteGradient { group: String, index: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {msg}")]
    Image { path: PathBuf, msg: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code class: 1 for validation problems, 2 for runtime/numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Dataset(_)
            | Error::Frame { .. }
            | Error::EmptyScene
            | Error::EmptyBatch
            | Error::EmptyMask
            | Error::CheckpointParse { .. } => 1,
            _ => 2,
        }
    }
}
