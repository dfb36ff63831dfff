//! Binary embedding (`EMB1`) and feature (`FEA1`) files with JSON sidecars.
//!
//! Both layouts are little-endian: magic, optional length-prefixed layout
//! string (features only), `u32` dimension, `u32` row count, then `f32` rows.
//! The sidecar at `<file>.json` maps rows to window keys.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::WindowKey;
use crate::error::{Error, Result};

const EMB_MAGIC: &[u8; 4] = b"EMB1";
const FEA_MAGIC: &[u8; 4] = b"FEA1";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub key: WindowKey,
    pub frame_slot: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct EmbeddingSidecar {
    pub encoder_id: String,
    pub rows: Vec<EmbeddingRow>,
}

/// Window feature rows sharing one layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub layout: String,
    pub dim: usize,
    pub keys: Vec<WindowKey>,
    pub rows: Vec<Vec<f32>>,
}

#[derive(Serialize, Deserialize)]
struct FeatureSidecar {
    layout: String,
    keys: Vec<WindowKey>,
}

pub(crate) fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn write_rows(out: &mut Vec<u8>, dim: usize, rows: &[Vec<f32>]) -> Result<()> {
    out.extend((dim as u32).to_le_bytes());
    out.extend((rows.len() as u32).to_le_bytes());
    for r in rows {
        if r.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, actual: r.len() });
        }
        for v in r {
            out.extend(v.to_le_bytes());
        }
    }
    Ok(())
}

struct Cursor<'a> {
    what: &'static str,
    bytes: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(Error::Format { what: self.what, reason: "truncated".into() });
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn rows(&mut self) -> Result<(usize, Vec<Vec<f32>>)> {
        let dim = self.u32()? as usize;
        let count = self.u32()? as usize;
        let body = self.take(dim * count * 4)?;
        if !self.bytes.is_empty() {
            return Err(Error::Format { what: self.what, reason: "trailing bytes".into() });
        }
        let values: Vec<f32> =
            body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let rows = if dim == 0 { vec![Vec::new(); count] } else { values.chunks(dim).map(<[f32]>::to_vec).collect() };
        Ok((dim, rows))
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut buf)).map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

fn write_all(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::File::create(path).and_then(|mut f| f.write_all(bytes)).map_err(|e| Error::io(path, e))
}

pub fn write_embeddings(path: &Path, encoder_id: &str, dim: usize, rows: &[(EmbeddingRow, Vec<f32>)]) -> Result<()> {
    let mut out = EMB_MAGIC.to_vec();
    let vectors: Vec<Vec<f32>> = rows.iter().map(|(_, v)| v.clone()).collect();
    write_rows(&mut out, dim, &vectors)?;
    write_all(path, &out)?;
    let sidecar =
        EmbeddingSidecar { encoder_id: encoder_id.to_string(), rows: rows.iter().map(|(r, _)| r.clone()).collect() };
    let side = sidecar_path(path);
    write_all(&side, serde_json::to_string_pretty(&sidecar)?.as_bytes())
}

pub type KeyedEmbeddings = Vec<(EmbeddingRow, Vec<f32>)>;

/// Returns the encoder id, the dimension and the keyed rows.
pub fn read_embeddings(path: &Path) -> Result<(String, usize, KeyedEmbeddings)> {
    let bytes = read_all(path)?;
    let mut cur = Cursor { what: "embedding file", bytes: &bytes };
    if cur.take(4)? != EMB_MAGIC {
        return Err(Error::Format { what: "embedding file", reason: "bad magic".into() });
    }
    let (dim, vectors) = cur.rows()?;
    let side = sidecar_path(path);
    let sidecar: EmbeddingSidecar = serde_json::from_slice(&read_all(&side)?)?;
    if sidecar.rows.len() != vectors.len() {
        return Err(Error::Format {
            what: "embedding sidecar",
            reason: format!("{} keys for {} rows", sidecar.rows.len(), vectors.len()),
        });
    }
    Ok((sidecar.encoder_id, dim, sidecar.rows.into_iter().zip(vectors).collect()))
}

pub fn write_features(path: &Path, m: &FeatureMatrix) -> Result<()> {
    if m.keys.len() != m.rows.len() {
        return Err(Error::DimensionMismatch { expected: m.rows.len(), actual: m.keys.len() });
    }
    let mut out = FEA_MAGIC.to_vec();
    out.extend((m.layout.len() as u32).to_le_bytes());
    out.extend(m.layout.as_bytes());
    write_rows(&mut out, m.dim, &m.rows)?;
    write_all(path, &out)?;
    let sidecar = FeatureSidecar { layout: m.layout.clone(), keys: m.keys.clone() };
    write_all(&sidecar_path(path), serde_json::to_string_pretty(&sidecar)?.as_bytes())
}

pub fn read_features(path: &Path) -> Result<FeatureMatrix> {
    let bytes = read_all(path)?;
    let mut cur = Cursor { what: "feature file", bytes: &bytes };
    if cur.take(4)? != FEA_MAGIC {
        return Err(Error::Format { what: "feature file", reason: "bad magic".into() });
    }
    let len = cur.u32()? as usize;
    let layout = String::from_utf8(cur.take(len)?.to_vec())
        .map_err(|_| Error::Format { what: "feature file", reason: "layout is not UTF-8".into() })?;
    let (dim, rows) = cur.rows()?;
    let sidecar: FeatureSidecar = serde_json::from_slice(&read_all(&sidecar_path(path))?)?;
    if sidecar.keys.len() != rows.len() || sidecar.layout != layout {
        return Err(Error::Format { what: "feature sidecar", reason: "does not match feature file".into() });
    }
    Ok(FeatureMatrix { layout, dim, keys: sidecar.keys, rows })
}
