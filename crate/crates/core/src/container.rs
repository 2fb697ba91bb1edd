//! The `COMCAEMB` binary container and its `.ids.jsonl` companion manifest.
//!
//! Layout, all integers little-endian:
//!
//! | offset | size      | field                                  |
//! |--------|-----------|----------------------------------------|
//! | 0      | 8         | magic `COMCAEMB`                       |
//! | 8      | 4 (u32)   | version, currently 1                   |
//! | 12     | 4 (u32)   | kind: 0 image, 1 text, 2 labels        |
//! | 16     | 4 (u32)   | row count `n`                          |
//! | 20     | 4 (u32)   | row width `d`                          |
//! | 24     | 4·n·d     | `f32` values, row-major                |
//!
//! The manifest lives at the container path with `.ids.jsonl` appended and
//! holds one `{"row": <int>, "id": "<string>"}` object per line.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"COMCAEMB";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContainerKind {
    Image,
    Text,
    Labels,
}

impl ContainerKind {
    pub fn code(self) -> u32 {
        match self {
            ContainerKind::Image => 0,
            ContainerKind::Text => 1,
            ContainerKind::Labels => 2,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(ContainerKind::Image),
            1 => Ok(ContainerKind::Text),
            2 => Ok(ContainerKind::Labels),
            other => Err(Error::Format(format!("unknown kind code {other}"))),
        }
    }
}

/// Decoded container contents, values still at interchange precision.
#[derive(Debug, Clone, PartialEq)]
pub struct RawContainer {
    pub kind: ContainerKind,
    pub dim: usize,
    pub ids: Vec<String>,
    pub values: Vec<f32>,
}

impl RawContainer {
    pub fn rows(&self) -> usize {
        self.ids.len()
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestLine {
    row: usize,
    id: String,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".ids.jsonl");
    PathBuf::from(s)
}

pub fn encode_body(kind: ContainerKind, n: usize, dim: usize, values: &[f32]) -> Result<Vec<u8>> {
    if values.len() != n * dim {
        return Err(Error::Format(format!(
            "{} values for {n} rows of width {dim}",
            values.len()
        )));
    }
    let to_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} exceeds u32")))
    };
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&kind.code().to_le_bytes());
    out.extend_from_slice(&to_u32(n, "row count")?.to_le_bytes());
    out.extend_from_slice(&to_u32(dim, "dimension")?.to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parses the binary body, returning `(kind, n, d, values)`.
pub fn decode_body(bytes: &[u8]) -> Result<(ContainerKind, usize, usize, Vec<f32>)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let version = word(8);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let kind = ContainerKind::from_code(word(12))?;
    let n = word(16) as usize;
    let d = word(20) as usize;
    let expected = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(4))
        .and_then(|c| c.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::Format("size overflow".into()))?;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "expected {expected} bytes for {n}x{d}, found {}",
            bytes.len()
        )));
    }
    let values = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((kind, n, d, values))
}

pub fn encode_manifest(ids: &[String]) -> String {
    let mut out = String::new();
    for (row, id) in ids.iter().enumerate() {
        let line = ManifestLine {
            row,
            id: id.clone(),
        };
        out.push_str(&serde_json::to_string(&line).expect("manifest line serializes"));
        out.push('\n');
    }
    out
}

pub fn decode_manifest(text: &str) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let entry: ManifestLine = serde_json::from_str(line)
            .map_err(|e| Error::Format(format!("manifest line {}: {e}", i + 1)))?;
        if entry.row != ids.len() {
            return Err(Error::Format(format!(
                "manifest line {} has row {}, expected {}",
                i + 1,
                entry.row,
                ids.len()
            )));
        }
        ids.push(entry.id);
    }
    Ok(ids)
}

pub fn write(path: &Path, raw: &RawContainer) -> Result<()> {
    if raw.ids.iter().any(|id| id.is_empty()) {
        return Err(Error::Format("empty id".into()));
    }
    let body = encode_body(raw.kind, raw.rows(), raw.dim, &raw.values)?;
    fs::write(path, body).map_err(|e| Error::io(path, e))?;
    let mpath = manifest_path(path);
    fs::write(&mpath, encode_manifest(&raw.ids)).map_err(|e| Error::io(mpath, e))
}

pub fn read(path: &Path) -> Result<RawContainer> {
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (kind, n, dim, values) = decode_body(&bytes)?;
    let mpath = manifest_path(path);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let ids = decode_manifest(&text)?;
    if ids.len() != n {
        return Err(Error::Format(format!(
            "{} has {n} rows but its manifest lists {}",
            path.display(),
            ids.len()
        )));
    }
    Ok(RawContainer {
        kind,
        dim,
        ids,
        values,
    })
}
