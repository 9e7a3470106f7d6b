//! Parameter and network checkpoints.
//!
//! The adaptive-parameter checkpoint is line-oriented `name value` text with
//! a trailing checksum. Network checkpoints are a small versioned binary:
//! magic, layer sizes, row-major `f64` little-endian weight blocks, then a
//! sha256 of everything before it.

use std::fmt::Write as _;
use std::path::Path;

use qatok_core::adaptive::AdaptiveParams;
use qatok_core::nn::Mlp;

use crate::{checksum_hex, IoFormatError, Result};

fn format_err(file: &'static str, what: impl Into<String>) -> IoFormatError {
    IoFormatError::Format {
        file,
        what: what.into(),
    }
}

/// Serializes adaptive parameters as `name value` lines plus a checksum.
pub fn params_to_string(params: &AdaptiveParams) -> String {
    let mut body = String::from("qatok-params v1\n");
    let _ = writeln!(body, "alpha {}", params.alpha);
    let _ = writeln!(body, "beta_pos {}", params.beta_pos);
    let _ = writeln!(body, "beta_vol {}", params.beta_vol);
    for (i, l) in params.quality_weight_logits.iter().enumerate() {
        let _ = writeln!(body, "w_logit_{i} {l}");
    }
    for (i, l) in params.reward_weight_logits.iter().enumerate() {
        let _ = writeln!(body, "lambda_logit_{i} {l}");
    }
    let _ = writeln!(body, "lambda_reg {}", params.lambda_reg);
    let sum = checksum_hex(body.as_bytes());
    let _ = writeln!(body, "checksum {sum}");
    body
}

/// Parses an adaptive-parameter checkpoint.
pub fn params_from_str(text: &str) -> Result<AdaptiveParams> {
    let trailer_at = text
        .rfind("checksum ")
        .ok_or_else(|| format_err("params", "missing checksum line"))?;
    let (body, trailer) = text.split_at(trailer_at);
    let stored = trailer
        .trim_end()
        .strip_prefix("checksum ")
        .ok_or_else(|| format_err("params", "malformed checksum line"))?
        .to_string();
    let computed = checksum_hex(body.as_bytes());
    if stored != computed {
        return Err(IoFormatError::Checksum { stored, computed });
    }

    let mut lines = body.lines();
    if lines.next() != Some("qatok-params v1") {
        return Err(format_err("params", "expected 'qatok-params v1' header"));
    }
    let mut params = AdaptiveParams {
        quality_weight_logits: [0.0; 4],
        reward_weight_logits: Vec::new(),
        ..Default::default()
    };
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let (name, value) = line
            .split_once(' ')
            .ok_or_else(|| format_err("params", format!("bad line {line:?}")))?;
        let v: f64 = value
            .parse()
            .map_err(|e| format_err("params", format!("{name}: {e}")))?;
        match name {
            "alpha" => params.alpha = v,
            "beta_pos" => params.beta_pos = v,
            "beta_vol" => params.beta_vol = v,
            "lambda_reg" => params.lambda_reg = v,
            _ if name.starts_with("w_logit_") => {
                let i: usize = name["w_logit_".len()..]
                    .parse()
                    .map_err(|e| format_err("params", format!("{name}: {e}")))?;
                if i >= 4 {
                    return Err(format_err("params", format!("w_logit index {i} out of range")));
                }
                params.quality_weight_logits[i] = v;
            }
            _ if name.starts_with("lambda_logit_") => {
                let i: usize = name["lambda_logit_".len()..]
                    .parse()
                    .map_err(|e| format_err("params", format!("{name}: {e}")))?;
                if params.reward_weight_logits.len() <= i {
                    params.reward_weight_logits.resize(i + 1, 0.0);
                }
                params.reward_weight_logits[i] = v;
            }
            other => return Err(format_err("params", format!("unknown field {other:?}"))),
        }
    }
    if params.reward_weight_logits.is_empty() {
        params.reward_weight_logits = vec![0.0; 3];
    }
    Ok(params)
}

pub fn write_params_file(path: &Path, params: &AdaptiveParams) -> Result<()> {
    std::fs::write(path, params_to_string(params))?;
    Ok(())
}

pub fn read_params_file(path: &Path) -> Result<AdaptiveParams> {
    params_from_str(&std::fs::read_to_string(path)?)
}

const POLICY_MAGIC: &[u8; 8] = b"QATOKPOL";
const POLICY_VERSION: u32 = 1;

/// Serializes one or more networks (policy first) into the binary format.
pub fn networks_to_bytes(nets: &[&Mlp]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(POLICY_MAGIC);
    out.extend_from_slice(&POLICY_VERSION.to_le_bytes());
    out.extend_from_slice(&(nets.len() as u32).to_le_bytes());
    for net in nets {
        let sizes = net.sizes();
        out.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
        for s in sizes {
            out.extend_from_slice(&(*s as u32).to_le_bytes());
        }
        let params = net.flat_params();
        out.extend_from_slice(&(params.len() as u64).to_le_bytes());
        for p in params {
            out.extend_from_slice(&p.to_le_bytes());
        }
    }
    let digest = {
        use sha2::{Digest, Sha256};
        Sha256::digest(&out)
    };
    out.extend_from_slice(&digest);
    out
}

struct Cursor<'a> {
    data: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.data.len() {
            return Err(format_err("policy", "truncated checkpoint"));
        }
        let s = &self.data[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses networks from the binary checkpoint, verifying the checksum.
pub fn networks_from_bytes(data: &[u8]) -> Result<Vec<Mlp>> {
    if data.len() < 32 {
        return Err(format_err("policy", "file shorter than its checksum"));
    }
    let (body, stored) = data.split_at(data.len() - 32);
    let digest = {
        use sha2::{Digest, Sha256};
        Sha256::digest(body)
    };
    if stored != digest.as_slice() {
        return Err(IoFormatError::Checksum {
            stored: hex::encode(stored),
            computed: hex::encode(digest),
        });
    }
    let mut cur = Cursor { data: body, at: 0 };
    if cur.take(8)? != POLICY_MAGIC {
        return Err(format_err("policy", "bad magic"));
    }
    let version = cur.u32()?;
    if version != POLICY_VERSION {
        return Err(format_err("policy", format!("unsupported version {version}")));
    }
    let count = cur.u32()? as usize;
    let mut nets = Vec::with_capacity(count);
    for _ in 0..count {
        let n_sizes = cur.u32()? as usize;
        if n_sizes < 2 {
            return Err(format_err("policy", "network needs at least two layers"));
        }
        let mut sizes = Vec::with_capacity(n_sizes);
        for _ in 0..n_sizes {
            sizes.push(cur.u32()? as usize);
        }
        let n_params = cur.u64()? as usize;
        let mut net = Mlp::with_hidden(sizes[0], &sizes[1..n_sizes - 1], sizes[n_sizes - 1], 0);
        if net.param_count() != n_params {
            return Err(format_err(
                "policy",
                format!("expected {} params, header says {n_params}", net.param_count()),
            ));
        }
        let mut flat = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            flat.push(cur.f64()?);
        }
        net.set_flat_params(&flat);
        nets.push(net);
    }
    if cur.at != body.len() {
        return Err(format_err("policy", "trailing bytes after networks"));
    }
    Ok(nets)
}

pub fn write_networks_file(path: &Path, nets: &[&Mlp]) -> Result<()> {
    std::fs::write(path, networks_to_bytes(nets))?;
    Ok(())
}

pub fn read_networks_file(path: &Path) -> Result<Vec<Mlp>> {
    networks_from_bytes(&std::fs::read(path)?)
}
