//! FASTQ ingestion (4-line records, Phred+33). Gzip is the caller's problem.

use std::io::BufRead;

use qatok_core::corpus::AtomicSequence;
use qatok_core::quality::phred_to_quality;

use crate::{IoFormatError, Result};

/// Genomic base alphabet, in symbol-id order.
pub const GENOMIC_ALPHABET: &[u8] = b"ACGTN";

/// Alphabet size for genomic sequences.
pub const GENOMIC_BASE_SIZE: u32 = 5;

/// Maps a base character to its symbol id.
pub fn base_to_symbol(c: u8) -> Option<u32> {
    match c.to_ascii_uppercase() {
        b'A' => Some(0),
        b'C' => Some(1),
        b'G' => Some(2),
        b'T' => Some(3),
        b'N' => Some(4),
        _ => None,
    }
}

/// Maps a symbol id back to its base character.
pub fn symbol_to_base(s: u32) -> Option<u8> {
    GENOMIC_ALPHABET.get(s as usize).copied()
}

fn fastq_err(record: usize, what: impl Into<String>) -> IoFormatError {
    IoFormatError::Fastq {
        record,
        what: what.into(),
    }
}

/// Reads every 4-line FASTQ record into a quality-annotated sequence.
/// Qualities are raw Phred confidences; positional decay is applied later by
/// the training pipeline.
pub fn read_fastq<R: BufRead>(reader: R) -> Result<Vec<AtomicSequence>> {
    let mut out = Vec::new();
    let mut lines = reader.lines();
    let mut record = 0usize;
    while let Some(header) = lines.next() {
        let header = header?;
        if header.is_empty() {
            // A blank line is tolerated only at EOF.
            if lines.next().is_none() {
                break;
            }
            return Err(fastq_err(record, "blank header line"));
        }
        if !header.starts_with('@') {
            return Err(fastq_err(record, format!("header must start with '@', got {header:?}")));
        }
        let seq = lines
            .next()
            .ok_or_else(|| fastq_err(record, "missing sequence line"))??;
        let plus = lines
            .next()
            .ok_or_else(|| fastq_err(record, "missing separator line"))??;
        if !plus.starts_with('+') {
            return Err(fastq_err(record, "separator line must start with '+'"));
        }
        let qual = lines
            .next()
            .ok_or_else(|| fastq_err(record, "missing quality line"))??;
        if seq.len() != qual.len() {
            return Err(fastq_err(
                record,
                format!(
                    "sequence length {} != quality length {}",
                    seq.len(),
                    qual.len()
                ),
            ));
        }

        let mut elements = Vec::with_capacity(seq.len());
        for (i, &c) in seq.as_bytes().iter().enumerate() {
            let sym = base_to_symbol(c).ok_or_else(|| {
                fastq_err(record, format!("unknown base {:?} at position {i}", c as char))
            })?;
            elements.push(sym);
        }
        let mut qualities = Vec::with_capacity(qual.len());
        for (i, &c) in qual.as_bytes().iter().enumerate() {
            if c < b'!' {
                return Err(fastq_err(
                    record,
                    format!("quality character below Phred+33 range at position {i}"),
                ));
            }
            let phred = u32::from(c - b'!');
            let q = phred_to_quality(phred)
                .map_err(|e| fastq_err(record, format!("position {i}: {e}")))?;
            qualities.push(q);
        }
        let source_id = header[1..]
            .split_whitespace()
            .next()
            .unwrap_or("")
            .to_string();
        out.push(
            AtomicSequence::new(elements, qualities, source_id, GENOMIC_BASE_SIZE)
                .map_err(IoFormatError::Core)?,
        );
        record += 1;
    }
    Ok(out)
}
