//! Two-file embedding dataset format.
//!
//! `<base>.pemb` is a little-endian binary matrix:
//!
//! ```text
//! offset  size          field
//! 0       4             magic "PEMB"
//! 4       4             version (u32) = 1
//! 8       4             count   (u32)
//! 12      4             dim     (u32)
//! 16      count*dim*4   rows, f32, row-major
//! ```
//!
//! `<base>.meta.jsonl` has one JSON object per line, line `i` describing row
//! `i`: `{"id", "label", "label_id", "split", "image"?}`.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use protofix_core::{ClassLabel, EmbeddingDataset, EmbeddingVector, Record, Split};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PEMB";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// Rows whose norm is within this of 1 are kept bit-for-bit on ingestion.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Serialize, Deserialize)]
struct MetaLine {
    id: String,
    label: String,
    label_id: u32,
    split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image: Option<String>,
}

fn with_suffix(base: &Path, suffix: &str) -> PathBuf {
    let mut s = OsString::from(base.as_os_str());
    s.push(suffix);
    PathBuf::from(s)
}

pub fn matrix_path(base: &Path) -> PathBuf {
    with_suffix(base, ".pemb")
}

pub fn meta_path(base: &Path) -> PathBuf {
    with_suffix(base, ".meta.jsonl")
}

/// Writes `<base>.pemb` and `<base>.meta.jsonl`. Embeddings are narrowed to f32.
pub fn write_embeddings(dataset: &EmbeddingDataset, base: &Path) -> Result<()> {
    let count = u32::try_from(dataset.len()).map_err(|_| Error::format("more than u32::MAX rows"))?;
    let dim = u32::try_from(dataset.dim()).map_err(|_| Error::format("dim exceeds u32::MAX"))?;

    let mut bytes = Vec::with_capacity(HEADER_LEN + dataset.len() * dataset.dim() * 4);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&count.to_le_bytes());
    bytes.extend_from_slice(&dim.to_le_bytes());
    for r in dataset.records() {
        for &v in r.embedding.as_slice() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let path = matrix_path(base);
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;

    let path = meta_path(base);
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = BufWriter::new(file);
    for r in dataset.records() {
        let line = MetaLine {
            id: r.id.clone(),
            label: r.label.name.clone(),
            label_id: r.label.id.0,
            split: r.split,
            image: r.image.clone(),
        };
        serde_json::to_writer(&mut out, &line).map_err(|e| Error::format(e.to_string()))?;
        out.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    }
    out.flush().map_err(|e| Error::io(&path, e))
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

/// Parsed `.pemb` matrix, rows as f32.
pub fn parse_matrix(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(format!("header truncated: {} bytes", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format(format!("bad magic {:?}", String::from_utf8_lossy(&bytes[..4]))));
    }
    let version = read_u32(bytes, 4);
    if version != VERSION {
        return Err(Error::format(format!("unsupported version {version}")));
    }
    let count = read_u32(bytes, 8) as usize;
    let dim = read_u32(bytes, 12) as usize;
    if dim == 0 {
        return Err(Error::format("dim is zero"));
    }
    let expected = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::format("count * dim overflows"))?;
    if bytes.len() != expected {
        return Err(Error::format(format!(
            "expected {expected} bytes for {count} x {dim}, found {}",
            bytes.len()
        )));
    }
    let values = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    Ok((count, dim, values))
}

/// Reads a dataset, L2-normalising rows that are not already unit norm.
pub fn read_embeddings(base: &Path) -> Result<EmbeddingDataset> {
    let path = matrix_path(base);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let (count, dim, values) = parse_matrix(&bytes)?;

    let path = meta_path(base);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.len() != count {
        return Err(Error::format(format!(
            "{} metadata lines for {count} embedding rows",
            lines.len()
        )));
    }

    let mut rescaled = false;
    let mut records = Vec::with_capacity(count);
    for (i, (row, line)) in values.chunks_exact(dim).zip(lines).enumerate() {
        let meta: MetaLine = serde_json::from_str(line)
            .map_err(|e| Error::format(format!("metadata line {}: {e}", i + 1)))?;
        let raw = EmbeddingVector::from_f32(row)
            .map_err(|e| Error::format(format!("row {i}: {e}")))?;
        let norm = raw.norm();
        let embedding = if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            rescaled = true;
            protofix_core::normalize(&raw)?
        } else {
            raw
        };
        records.push(Record {
            id: meta.id,
            embedding,
            label: ClassLabel::new(meta.label_id, meta.label),
            split: meta.split,
            image: meta.image,
        });
    }
    let mut dataset = EmbeddingDataset::new(dim, records).map_err(|e| match e {
        protofix_core::Error::DuplicateId(id) => Error::format(format!("duplicate id {id:?}")),
        protofix_core::Error::InvalidConfig(msg) => Error::format(msg),
        other => Error::Core(other),
    })?;
    if !dataset.has_contiguous_labels() {
        return Err(Error::format("label ids are not contiguous from 0"));
    }
    dataset.set_rescaled(rescaled);
    Ok(dataset)
}
