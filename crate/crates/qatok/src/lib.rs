//! IO, file formats and training orchestration around `qatok-core`.
//!
//! The core crate stays pure; everything that touches files, checksums,
//! threads or the command line lives here.

pub mod checkpoint;
pub mod config;
pub mod fastq;
pub mod lob;
pub mod logs;
pub mod manifest;
pub mod pipeline;
pub mod vocab_file;

use thiserror::Error;

/// Companion-crate errors.
#[derive(Debug, Error)]
pub enum IoFormatError {
    #[error("record {record}: {what}")]
    Fastq { record: usize, what: String },
    #[error("line {line}: {what}")]
    Csv { line: usize, what: String },
    #[error("config line {line}: {what}")]
    Config { line: usize, what: String },
    #[error("config: {0}")]
    ConfigValue(String),
    #[error("{file}: {what}")]
    Format { file: &'static str, what: String },
    #[error("checksum mismatch: stored {stored}, computed {computed}")]
    Checksum { stored: String, computed: String },
    #[error(transparent)]
    Core(#[from] qatok_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, IoFormatError>;

/// Hex sha256 of a byte slice, used by every artifact checksum line.
pub fn checksum_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}
