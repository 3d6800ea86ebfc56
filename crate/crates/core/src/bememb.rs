//! `BEMEMB v1` embedding files for externally computed backbone features.
//!
//! Layout: an ASCII header line `BEMEMB v1 dim=<d> count=<n>\n` followed by
//! `n` rows of `d` little-endian `f32`. Rows are re-normalized on load.

use std::fs;
use std::path::Path;

use crate::embedding::Embedding;
use crate::error::{BemError, Result};
use crate::num::Scalar;

pub fn encode<T: Scalar>(rows: &[Embedding<T>]) -> Result<Vec<u8>> {
    let dim = rows.first().map_or(0, |r| r.dim());
    if rows.iter().any(|r| r.dim() != dim) {
        return Err(BemError::invalid("embedding rows differ in dimension"));
    }
    let mut out = format!("BEMEMB v1 dim={dim} count={}\n", rows.len()).into_bytes();
    out.reserve(rows.len() * dim * 4);
    for r in rows {
        for v in r.values() {
            out.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Embedding<f32>>> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| BemError::data("BEMEMB header missing newline"))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| BemError::data("BEMEMB header not UTF-8"))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some("BEMEMB") || parts.next() != Some("v1") {
        return Err(BemError::data(format!("not a BEMEMB v1 file: {header:?}")));
    }
    let mut field = |key: &str| -> Result<usize> {
        parts
            .next()
            .and_then(|p| p.strip_prefix(key))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| BemError::data(format!("BEMEMB header lacks {key}<int>: {header:?}")))
    };
    let dim = field("dim=")?;
    let count = field("count=")?;
    let body = &bytes[nl + 1..];
    if body.len() != dim * count * 4 {
        return Err(BemError::data(format!(
            "BEMEMB body has {} bytes, header implies {}",
            body.len(),
            dim * count * 4
        )));
    }
    if dim == 0 && count > 0 {
        return Err(BemError::data("BEMEMB rows with dim=0"));
    }
    body.chunks_exact(dim.max(1) * 4)
        .take(count)
        .enumerate()
        .map(|(i, row)| {
            let raw: Vec<f64> = row
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            Embedding::normalize(&raw)
                .map_err(|_| BemError::data(format!("BEMEMB row {i} is non-finite or zero")))
        })
        .collect()
}

pub fn write<T: Scalar>(path: &Path, rows: &[Embedding<T>]) -> Result<()> {
    fs::write(path, encode(rows)?)?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Vec<Embedding<f32>>> {
    decode(&fs::read(path)?).map_err(|e| BemError::data(format!("{}: {e}", path.display())))
}
