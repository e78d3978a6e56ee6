//! Binary tensor container shared by checkpoints and calibration statistics.
//!
//! Layout (no padding anywhere):
//!
//! ```text
//! magic      4 bytes   e.g. "MAMA" or "MAMC"
//! version    1 byte    = 1
//! hdr_len    4 bytes   little-endian u32
//! header     hdr_len   UTF-8 JSON, includes "tensors": [{name, rows, cols}, ...]
//! payload    Σ rows·cols·4 bytes, little-endian IEEE-754 f32, descriptor order
//! ```

use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const FORMAT_VERSION: u8 = 1;
const PREAMBLE: usize = 4 + 1 + 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Descriptor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

impl Descriptor {
    pub fn of(name: impl Into<String>, m: &Matrix) -> Self {
        Self {
            name: name.into(),
            rows: m.rows(),
            cols: m.cols(),
        }
    }
}

/// A JSON header that lists the tensors which follow it.
pub trait ContainerHeader: Serialize + DeserializeOwned {
    fn descriptors(&self) -> &[Descriptor];
}

pub fn encode<H: ContainerHeader>(magic: &[u8; 4], header: &H, payloads: &[&Matrix]) -> Result<Vec<u8>> {
    let descs = header.descriptors();
    if descs.len() != payloads.len() {
        return Err(Error::Header(format!(
            "{} descriptors for {} payloads",
            descs.len(),
            payloads.len()
        )));
    }
    for (d, m) in descs.iter().zip(payloads) {
        if (d.rows, d.cols) != m.shape() {
            return Err(Error::Header(format!(
                "descriptor {} says {}x{}, payload is {}x{}",
                d.name,
                d.rows,
                d.cols,
                m.rows(),
                m.cols()
            )));
        }
    }
    let json = serde_json::to_vec(header)?;
    let hdr_len = u32::try_from(json.len())
        .map_err(|_| Error::Header("header exceeds 4 GiB".into()))?;
    let payload_len: usize = payloads.iter().map(|m| m.len() * 4).sum();
    let mut out = Vec::with_capacity(PREAMBLE + json.len() + payload_len);
    out.extend_from_slice(magic);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&hdr_len.to_le_bytes());
    out.extend_from_slice(&json);
    for m in payloads {
        for &v in m.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode<H: ContainerHeader>(magic: &[u8; 4], bytes: &[u8]) -> Result<(H, Vec<Matrix>)> {
    if bytes.len() < 5 || &bytes[..4] != magic {
        return Err(Error::Version(format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&bytes[..bytes.len().min(4)])
        )));
    }
    if bytes[4] != FORMAT_VERSION {
        return Err(Error::Version(format!(
            "unsupported format version {} (expected {FORMAT_VERSION})",
            bytes[4]
        )));
    }
    if bytes.len() < PREAMBLE {
        return Err(Error::Truncated("file ends inside the preamble".into()));
    }
    let hdr_len = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let hdr_end = PREAMBLE
        .checked_add(hdr_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Truncated(format!("header of {hdr_len} bytes runs past end of file")))?;
    let header: H = serde_json::from_slice(&bytes[PREAMBLE..hdr_end])
        .map_err(|e| Error::Header(e.to_string()))?;

    let mut offset = hdr_end;
    let mut out = Vec::with_capacity(header.descriptors().len());
    for d in header.descriptors() {
        let n = d
            .rows
            .checked_mul(d.cols)
            .ok_or_else(|| Error::Header(format!("tensor {} is too large", d.name)))?;
        let end = n
            .checked_mul(4)
            .and_then(|b| offset.checked_add(b))
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| {
                Error::Truncated(format!(
                    "payload for tensor {} ({}x{}) is incomplete",
                    d.name, d.rows, d.cols
                ))
            })?;
        let data = bytes[offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        out.push(Matrix::from_vec(d.rows, d.cols, data)?);
        offset = end;
    }
    if offset != bytes.len() {
        return Err(Error::Header(format!(
            "{} trailing bytes after the last declared tensor",
            bytes.len() - offset
        )));
    }
    Ok((header, out))
}

/// Write via a sibling temp file and rename, so readers never see partial output.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}
