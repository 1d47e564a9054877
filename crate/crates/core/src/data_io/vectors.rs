//! `REIDVEC1` binary vector files and the in-memory [`EmbeddingSet`].
//!
//! Layout (little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 0..8  | ASCII `REIDVEC1` |
//! | 8..12 | `u32` row count |
//! | 12..16 | `u32` dim |
//! | 16..  | `count * dim` `f32`, row-major |
//! | tail  | optional `u32` CRC32 of the payload bytes |
//!
//! Rows are aligned to manifest records by position only.

use std::fs;
use std::path::Path;

use crate::data_io::manifest::ItemRecord;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"REIDVEC1";
pub const HEADER_LEN: usize = 16;

/// Tolerance on row norms for sets flagged as normalized.
pub const UNIT_NORM_TOL: f64 = 1e-4;

/// Dense row-major matrix of feature vectors aligned to manifest items.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    data: Vec<f32>,
    item_order: Vec<String>,
    normalized: bool,
}

impl EmbeddingSet {
    /// Builds an unnormalized set. `data.len()` must equal `item_order.len() * dim`.
    pub fn new(dim: usize, data: Vec<f32>, item_order: Vec<String>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("embedding dim must be positive".into()));
        }
        if data.len() != item_order.len() * dim {
            return Err(Error::Shape(format!(
                "{} values do not form {} rows of dim {dim}",
                data.len(),
                item_order.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Shape(format!(
                "non-finite value at row {} column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(EmbeddingSet {
            dim,
            data,
            item_order,
            normalized: false,
        })
    }

    pub fn from_rows(rows: &[Vec<f32>], item_order: Vec<String>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape("rows have differing lengths".into()));
        }
        Self::new(dim, rows.concat(), item_order)
    }

    /// Marks the set as normalized after checking every row norm.
    pub fn into_normalized(mut self) -> Result<Self> {
        for i in 0..self.count() {
            let norm = row_norm(self.row(i));
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                if norm == 0.0 {
                    return Err(Error::ZeroNorm {
                        row: i,
                        item_id: self.item_order[i].clone(),
                    });
                }
                return Err(Error::InvalidParam(format!(
                    "row {i} ('{}') has norm {norm}, not unit",
                    self.item_order[i]
                )));
            }
        }
        self.normalized = true;
        Ok(self)
    }

    pub(crate) fn from_parts_normalized(
        dim: usize,
        data: Vec<f32>,
        item_order: Vec<String>,
    ) -> Self {
        debug_assert_eq!(data.len(), dim * item_order.len());
        EmbeddingSet {
            dim,
            data,
            item_order,
            normalized: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.item_order.len()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn item_order(&self) -> &[String] {
        &self.item_order
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    /// New set holding the given rows, in the given order. Normalization state carries over.
    pub fn select(&self, indices: &[usize]) -> EmbeddingSet {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        let mut order = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.row(i));
            order.push(self.item_order[i].clone());
        }
        EmbeddingSet {
            dim: self.dim,
            data,
            item_order: order,
            normalized: self.normalized,
        }
    }

    /// Same vectors under different item ids (e.g. refinement rows re-keyed to their base items).
    pub fn with_item_order(mut self, item_order: Vec<String>) -> Result<Self> {
        if item_order.len() != self.count() {
            return Err(Error::Shape(format!(
                "item order of length {} for {} rows",
                item_order.len(),
                self.count()
            )));
        }
        self.item_order = item_order;
        Ok(self)
    }
}

pub(crate) fn row_norm(row: &[f32]) -> f64 {
    row.iter()
        .map(|&v| f64::from(v) * f64::from(v))
        .sum::<f64>()
        .sqrt()
}

/// Encodes a set as `REIDVEC1` bytes, optionally with the CRC32 trailer.
pub fn encode_vectors(set: &EmbeddingSet, with_crc: bool) -> Result<Vec<u8>> {
    let count =
        u32::try_from(set.count()).map_err(|_| Error::Shape("row count exceeds u32".into()))?;
    let dim = u32::try_from(set.dim()).map_err(|_| Error::Shape("dim exceeds u32".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + set.data.len() * 4 + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    for v in &set.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if with_crc {
        let crc = crc32fast::hash(&out[HEADER_LEN..]);
        out.extend_from_slice(&crc.to_le_bytes());
    }
    Ok(out)
}

/// Raw decoded matrix: `(count, dim, row-major values)`.
pub fn decode_matrix(bytes: &[u8], origin: &Path) -> Result<(usize, usize, Vec<f32>)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(
            origin,
            format!("truncated header ({} bytes)", bytes.len()),
        ));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::format(origin, "bad magic, expected REIDVEC1"));
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let payload_len = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(origin, "header count*dim overflows"))?;
    let body = &bytes[HEADER_LEN..];
    let payload = if body.len() == payload_len {
        body
    } else if body.len() == payload_len + 4 {
        let (payload, tail) = body.split_at(payload_len);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let actual = crc32fast::hash(payload);
        if stored != actual {
            return Err(Error::format(
                origin,
                format!("payload CRC32 mismatch (stored {stored:#010x}, computed {actual:#010x})"),
            ));
        }
        payload
    } else if body.len() < payload_len {
        return Err(Error::format(
            origin,
            format!(
                "truncated payload: header declares {count}x{dim} ({payload_len} bytes), found {}",
                body.len()
            ),
        ));
    } else {
        return Err(Error::format(
            origin,
            format!(
                "payload length {} does not match header {count}x{dim} ({payload_len} bytes)",
                body.len()
            ),
        ));
    };
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((count, dim, values))
}

/// Decodes `REIDVEC1` bytes against the records the rows belong to.
pub fn decode_vectors(bytes: &[u8], records: &[ItemRecord], origin: &Path) -> Result<EmbeddingSet> {
    let (count, dim, values) = decode_matrix(bytes, origin)?;
    if count != records.len() {
        return Err(Error::format(
            origin,
            format!(
                "vector count {count} does not match {} manifest records",
                records.len()
            ),
        ));
    }
    if dim == 0 {
        return Err(Error::format(origin, "dim must be positive"));
    }
    let order = records.iter().map(|r| r.item_id.clone()).collect();
    EmbeddingSet::new(dim, values, order).map_err(|e| Error::format(origin, e.to_string()))
}

pub fn load_vectors(path: impl AsRef<Path>, records: &[ItemRecord]) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_vectors(&bytes, records, path)
}

/// Writes the set without a CRC trailer.
pub fn save_vectors(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    write_vectors(set, path, false)
}

pub fn save_vectors_with_crc(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    write_vectors(set, path, true)
}

fn write_vectors(set: &EmbeddingSet, path: impl AsRef<Path>, with_crc: bool) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_vectors(set, with_crc)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
