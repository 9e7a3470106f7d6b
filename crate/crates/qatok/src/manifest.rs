//! Sampling manifest: selected sequence ids, one per line, with the sampling
//! configuration and a body checksum in the header.

use std::fmt::Write as _;
use std::path::Path;

use crate::{checksum_hex, IoFormatError, Result};

/// Parsed manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub seed: u64,
    pub ratio: f64,
    pub epsilon_base: f64,
    /// Selected sequence indices in selection order.
    pub ids: Vec<usize>,
}

/// Serializes a manifest; the header checksum covers the id lines.
pub fn manifest_to_string(m: &Manifest) -> String {
    let mut body = String::new();
    for id in &m.ids {
        let _ = writeln!(body, "{id}");
    }
    let sum = checksum_hex(body.as_bytes());
    format!(
        "qatok-manifest v1 seed={} r={} eps_base={} checksum={sum}\n{body}",
        m.seed, m.ratio, m.epsilon_base
    )
}

fn format_err(what: impl Into<String>) -> IoFormatError {
    IoFormatError::Format {
        file: "manifest",
        what: what.into(),
    }
}

/// Parses and validates a manifest.
pub fn manifest_from_str(text: &str) -> Result<Manifest> {
    let (header, body) = text
        .split_once('\n')
        .ok_or_else(|| format_err("missing header line"))?;
    let mut fields = header.split_whitespace();
    if fields.next() != Some("qatok-manifest") || fields.next() != Some("v1") {
        return Err(format_err("expected 'qatok-manifest v1' header"));
    }
    let mut seed = None;
    let mut ratio = None;
    let mut eps = None;
    let mut stored = None;
    for f in fields {
        let (k, v) = f
            .split_once('=')
            .ok_or_else(|| format_err(format!("bad header field {f:?}")))?;
        match k {
            "seed" => seed = Some(v.parse().map_err(|e| format_err(format!("seed: {e}")))?),
            "r" => ratio = Some(v.parse().map_err(|e| format_err(format!("r: {e}")))?),
            "eps_base" => eps = Some(v.parse().map_err(|e| format_err(format!("eps_base: {e}")))?),
            "checksum" => stored = Some(v.to_string()),
            other => return Err(format_err(format!("unknown header field {other:?}"))),
        }
    }
    let stored = stored.ok_or_else(|| format_err("missing checksum="))?;
    let computed = checksum_hex(body.as_bytes());
    if stored != computed {
        return Err(IoFormatError::Checksum { stored, computed });
    }
    let ids = body
        .lines()
        .filter(|l| !l.is_empty())
        .map(|l| l.parse::<usize>().map_err(|e| format_err(format!("id line: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(Manifest {
        seed: seed.ok_or_else(|| format_err("missing seed="))?,
        ratio: ratio.ok_or_else(|| format_err("missing r="))?,
        epsilon_base: eps.ok_or_else(|| format_err("missing eps_base="))?,
        ids,
    })
}

pub fn write_manifest_file(path: &Path, m: &Manifest) -> Result<()> {
    std::fs::write(path, manifest_to_string(m))?;
    Ok(())
}

pub fn read_manifest_file(path: &Path) -> Result<Manifest> {
    manifest_from_str(&std::fs::read_to_string(path)?)
}
