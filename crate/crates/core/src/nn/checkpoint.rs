//! `DANN1` container: magic, little-endian `u64` header length, a JSON
//! header, the declared `f32` tensors in order, then opaque byte sections.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"DANN1";
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectionSpec {
    pub name: String,
    pub bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    meta: serde_json::Value,
    tensors: Vec<TensorSpec>,
    sections: Vec<SectionSpec>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Model-specific metadata (configuration, labels, init scheme, ...).
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Matrix<f32>)>,
    pub sections: Vec<(String, Vec<u8>)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Result<&Matrix<f32>> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    }

    pub fn section(&self, name: &str) -> Result<&[u8]> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, b)| b.as_slice())
            .ok_or_else(|| Error::Checkpoint(format!("missing section {name}")))
    }
}

pub fn write_checkpoint<W: Write>(
    mut w: W,
    meta: &serde_json::Value,
    tensors: &[(String, &Matrix<f32>)],
    sections: &[(&str, &[u8])],
) -> Result<()> {
    let header = Header {
        format_version: CHECKPOINT_FORMAT_VERSION,
        meta: meta.clone(),
        tensors: tensors
            .iter()
            .map(|(n, m)| TensorSpec {
                name: n.clone(),
                rows: m.rows(),
                cols: m.cols(),
            })
            .collect(),
        sections: sections
            .iter()
            .map(|(n, b)| SectionSpec {
                name: (*n).to_string(),
                bytes: b.len(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    let mut buf = Vec::new();
    for (_, m) in tensors {
        buf.clear();
        buf.extend(m.as_slice().iter().flat_map(|x| x.to_le_bytes()));
        w.write_all(&buf)?;
    }
    for (_, bytes) in sections {
        w.write_all(bytes)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic, not a DANN1 file".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len);
    if len > 1 << 30 {
        return Err(Error::Checkpoint(format!("implausible header length {len}")));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json)
        .map_err(|_| Error::Checkpoint("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&json)?;
    if header.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for spec in &header.tensors {
        let mut bytes = vec![0u8; spec.rows * spec.cols * 4];
        r.read_exact(&mut bytes)
            .map_err(|_| Error::Checkpoint(format!("truncated tensor {}", spec.name)))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let m = Matrix::from_vec(spec.rows, spec.cols, data)?;
        if !m.is_finite() {
            return Err(Error::Checkpoint(format!("non-finite values in {}", spec.name)));
        }
        tensors.push((spec.name.clone(), m));
    }
    let mut sections = Vec::with_capacity(header.sections.len());
    for spec in &header.sections {
        let mut bytes = vec![0u8; spec.bytes];
        r.read_exact(&mut bytes)
            .map_err(|_| Error::Checkpoint(format!("truncated section {}", spec.name)))?;
        sections.push((spec.name.clone(), bytes));
    }
    Ok(Checkpoint {
        meta: header.meta,
        tensors,
        sections,
    })
}
