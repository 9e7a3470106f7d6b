//! Versioned line-oriented vocabulary file.
//!
//! ```text
//! qatok-vocab v1 base=<n> merges=<k> alpha=<float> domain=<genomics|finance>
//! <a-id> <b-id> <new-id> <q_t>
//! ...
//! checksum <hex sha256 of all preceding bytes>
//! ```
//!
//! Floats are written in Rust's shortest round-trip form, so
//! write -> read -> write reproduces the bytes exactly.

use std::fmt::Write as _;

use qatok_core::merge::Vocabulary;
use qatok_core::DomainMode;

use crate::{checksum_hex, IoFormatError, Result};

/// Header metadata stored alongside the merge table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VocabMeta {
    pub alpha: f64,
    pub domain: DomainMode,
}

fn domain_str(d: DomainMode) -> &'static str {
    match d {
        DomainMode::Genomics => "genomics",
        DomainMode::Finance => "finance",
    }
}

fn parse_domain(s: &str) -> Result<DomainMode> {
    match s {
        "genomics" => Ok(DomainMode::Genomics),
        "finance" => Ok(DomainMode::Finance),
        other => Err(IoFormatError::Format {
            file: "vocab",
            what: format!("unknown domain {other:?}"),
        }),
    }
}

/// Serializes a vocabulary to the canonical byte form.
pub fn vocab_to_string(vocab: &Vocabulary, meta: &VocabMeta) -> String {
    let mut body = String::new();
    let _ = writeln!(
        body,
        "qatok-vocab v1 base={} merges={} alpha={} domain={}",
        vocab.base_size(),
        vocab.merges().len(),
        meta.alpha,
        domain_str(meta.domain),
    );
    for rule in vocab.merges() {
        let _ = writeln!(body, "{} {} {} {}", rule.a, rule.b, rule.new_id, rule.quality);
    }
    let sum = checksum_hex(body.as_bytes());
    let _ = writeln!(body, "checksum {sum}");
    body
}

fn format_err(what: impl Into<String>) -> IoFormatError {
    IoFormatError::Format {
        file: "vocab",
        what: what.into(),
    }
}

/// Parses and validates a vocabulary file, checksum included.
pub fn vocab_from_str(text: &str) -> Result<(Vocabulary, VocabMeta)> {
    let trailer_at = text
        .rfind("checksum ")
        .ok_or_else(|| format_err("missing checksum line"))?;
    let (body, trailer) = text.split_at(trailer_at);
    let stored = trailer
        .trim_end()
        .strip_prefix("checksum ")
        .ok_or_else(|| format_err("malformed checksum line"))?
        .to_string();
    let computed = checksum_hex(body.as_bytes());
    if stored != computed {
        return Err(IoFormatError::Checksum { stored, computed });
    }

    let mut lines = body.lines();
    let header = lines.next().ok_or_else(|| format_err("empty file"))?;
    let mut fields = header.split_whitespace();
    if fields.next() != Some("qatok-vocab") || fields.next() != Some("v1") {
        return Err(format_err("expected 'qatok-vocab v1' header"));
    }
    let mut base = None;
    let mut merges = None;
    let mut alpha = None;
    let mut domain = None;
    for f in fields {
        let (key, value) = f
            .split_once('=')
            .ok_or_else(|| format_err(format!("bad header field {f:?}")))?;
        match key {
            "base" => base = Some(value.parse::<u32>().map_err(|e| format_err(format!("base: {e}")))?),
            "merges" => {
                merges = Some(value.parse::<usize>().map_err(|e| format_err(format!("merges: {e}")))?)
            }
            "alpha" => {
                alpha = Some(value.parse::<f64>().map_err(|e| format_err(format!("alpha: {e}")))?)
            }
            "domain" => domain = Some(parse_domain(value)?),
            other => return Err(format_err(format!("unknown header field {other:?}"))),
        }
    }
    let base = base.ok_or_else(|| format_err("missing base="))?;
    let merge_count = merges.ok_or_else(|| format_err("missing merges="))?;
    let meta = VocabMeta {
        alpha: alpha.ok_or_else(|| format_err("missing alpha="))?,
        domain: domain.ok_or_else(|| format_err("missing domain="))?,
    };

    let mut vocab = Vocabulary::base(base);
    let mut seen = 0usize;
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 4 {
            return Err(format_err(format!("merge line needs 4 fields: {line:?}")));
        }
        let a: u32 = parts[0].parse().map_err(|e| format_err(format!("a-id: {e}")))?;
        let b: u32 = parts[1].parse().map_err(|e| format_err(format!("b-id: {e}")))?;
        let new_id: u32 = parts[2].parse().map_err(|e| format_err(format!("new-id: {e}")))?;
        let q: f64 = parts[3].parse().map_err(|e| format_err(format!("q_t: {e}")))?;
        let got = vocab.push_merge(a, b, q).map_err(IoFormatError::Core)?;
        if got != new_id {
            return Err(format_err(format!(
                "non-contiguous merge id {new_id} (expected {got})"
            )));
        }
        seen += 1;
    }
    if seen != merge_count {
        return Err(format_err(format!(
            "header said {merge_count} merges, found {seen}"
        )));
    }
    vocab.validate().map_err(IoFormatError::Core)?;
    Ok((vocab, meta))
}

/// Writes a vocabulary file to disk.
pub fn write_vocab_file(path: &std::path::Path, vocab: &Vocabulary, meta: &VocabMeta) -> Result<()> {
    std::fs::write(path, vocab_to_string(vocab, meta))?;
    Ok(())
}

/// Reads a vocabulary file from disk.
pub fn read_vocab_file(path: &std::path::Path) -> Result<(Vocabulary, VocabMeta)> {
    let text = std::fs::read_to_string(path)?;
    vocab_from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (Vocabulary, VocabMeta) {
        let mut v = Vocabulary::base(5);
        v.push_merge(0, 1, 0.875).unwrap();
        v.push_merge(5, 2, 0.609).unwrap();
        (
            v,
            VocabMeta {
                alpha: 0.72,
                domain: DomainMode::Genomics,
            },
        )
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let (v, meta) = sample();
        let text = vocab_to_string(&v, &meta);
        let (v2, meta2) = vocab_from_str(&text).unwrap();
        assert_eq!(meta2, meta);
        assert_eq!(v2.merges(), v.merges());
        assert_eq!(vocab_to_string(&v2, &meta2), text);
    }

    #[test]
    fn checksum_tampering_is_detected() {
        let (v, meta) = sample();
        let text = vocab_to_string(&v, &meta).replace("0.875", "0.975");
        assert!(matches!(
            vocab_from_str(&text),
            Err(IoFormatError::Checksum { .. })
        ));
    }

    #[test]
    fn header_merge_count_is_enforced() {
        let (v, meta) = sample();
        let mut body: Vec<String> = vocab_to_string(&v, &meta)
            .lines()
            .map(String::from)
            .collect();
        body.remove(1);
        let mut text = body[..body.len() - 1].join("\n");
        text.push('\n');
        let sum = checksum_hex(text.as_bytes());
        text.push_str(&format!("checksum {sum}\n"));
        assert!(vocab_from_str(&text).is_err());
    }
}
