//! On-disk formats for embeddings, labels, and demographics, demographic
//! groupings, and the synthetic benchmark generator with a known bias oracle.

mod embeddings;
mod samples;
mod synthetic;

pub use embeddings::{read_embeddings, write_embeddings, EmbeddingMatrix, EMBEDDINGS_MAGIC};
pub use samples::{
    derive_age_group, read_samples, write_samples, AgeGroup, Axis, Label, Race, SampleTable, Sex,
    Split, DEFAULT_CONDITIONS,
};
pub use synthetic::{generate_synthetic, OracleSpec, SignalSpec};

use thiserror::Error;

/// Errors raised while reading, writing, or generating datasets.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("truncated file: expected {expected} bytes of payload, got {got}")]
    TruncatedFile { expected: usize, got: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },
    #[error("missing column `{column}`")]
    MissingColumn { column: String },
    #[error("bad value `{token}` in column `{column}` at data row {row}")]
    BadEnumValue {
        row: usize,
        column: String,
        token: String,
    },
    #[error("duplicate id `{id}`")]
    DuplicateId { id: String },
    #[error("id sidecar lists {ids} ids but the matrix has {rows} rows")]
    IdCountMismatch { ids: usize, rows: usize },
    #[error("invalid oracle spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
