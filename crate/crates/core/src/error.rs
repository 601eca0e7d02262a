use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid hex key: {0}")]
    Hex(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("bad magic {found:?}, expected \"SCFTRC01\"")]
    BadMagic { found: [u8; 8] },

    #[error("unsupported sample dtype {0}")]
    UnsupportedDtype(u8),

    #[error("malformed header: {0}")]
    Header(String),

    #[error("truncated trace file: record {record} is incomplete ({actual} of {expected} bytes present)")]
    Truncated {
        record: u64,
        expected: u64,
        actual: u64,
    },

    #[error("record count mismatch: header declares {declared}, {written} written")]
    CountMismatch { declared: u64, written: u64 },

    #[error("geometry mismatch: expected {expected} samples, got {actual}")]
    Geometry { expected: usize, actual: usize },

    #[error("sample value {0} is outside the accumulator's fixed-point range")]
    SampleRange(f32),

    #[error("need at least 2 traces, have {0}")]
    TooFewTraces(u64),

    #[error("vector lengths differ or are shorter than 2 ({0} vs {1})")]
    Length(usize, usize),

    #[error("empty input")]
    Empty,

    #[error("no variant log available; re-run the simulation with variant logging enabled")]
    MissingVariantLog,

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
