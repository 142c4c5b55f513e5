//! Sentence embeddings: mean pooling, L2 normalization and the LTDE binary file.
//!
//! LTDE layout (all integers little-endian):
//!
//! ```text
//! "LTDE" | u16 version=1 | u8 normalized | u8 reserved=0 | u64 n | u32 d
//! n*d f32 row-major
//! n x (u16 byte length | UTF-8 id)
//! ```

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::data_model::SampleRecord;

pub const MAGIC: &[u8; 4] = b"LTDE";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 1 + 1 + 8 + 4;

/// Allowed deviation of a unit vector's Euclidean norm from 1.
pub const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("empty input")]
    EmptyInput,
    #[error("zero vector cannot be normalized")]
    ZeroVector,
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("row {row} has norm {norm}, expected unit length")]
    NotUnit { row: usize, norm: f64 },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("id `{id}` at row {row} does not match corpus id `{expected}`")]
    IdMismatch {
        row: usize,
        id: String,
        expected: String,
    },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("id `{0}` longer than 65535 bytes")]
    IdTooLong(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("truncated file: {0}")]
    TruncatedFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

/// Dot product accumulated in f64.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub fn norm(v: &[f32]) -> f64 {
    dot(v, v).sqrt()
}

pub fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

pub fn is_unit(v: &[f32]) -> bool {
    (norm(v) - 1.0).abs() <= UNIT_TOLERANCE
}

/// Token-level hidden states of one sample, `len x dim`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenEmbeddings {
    data: Vec<f32>,
    dim: usize,
}

impl TokenEmbeddings {
    pub fn new(data: Vec<f32>, dim: usize) -> Result<Self> {
        if dim == 0 || data.is_empty() {
            return Err(StoreError::EmptyInput);
        }
        if !data.len().is_multiple_of(dim) {
            return Err(StoreError::DimensionMismatch {
                expected: dim,
                actual: data.len() % dim,
            });
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(StoreError::NonFinite {
                row: pos / dim,
                col: pos % dim,
            });
        }
        Ok(Self { data, dim })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).ok_or(StoreError::EmptyInput)?;
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(StoreError::DimensionMismatch {
                expected: dim,
                actual: bad.len(),
            });
        }
        Self::new(rows.concat(), dim)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }
}

/// Averages all token rows. Padding must already be excluded by the producer.
pub fn mean_pool(tokens: &TokenEmbeddings) -> Result<Vec<f32>> {
    mean_rows(tokens.rows(), tokens.dim())
}

fn mean_rows<'a>(rows: impl Iterator<Item = &'a [f32]>, dim: usize) -> Result<Vec<f32>> {
    let mut acc = vec![0f64; dim];
    let mut count = 0usize;
    for row in rows {
        for (a, &x) in acc.iter_mut().zip(row) {
            *a += x as f64;
        }
        count += 1;
    }
    if count == 0 {
        return Err(StoreError::EmptyInput);
    }
    let inv = 1.0 / count as f64;
    Ok(acc.into_iter().map(|a| (a * inv) as f32).collect())
}

pub fn l2_normalize(v: &[f32]) -> Result<Vec<f32>> {
    if v.is_empty() {
        return Err(StoreError::EmptyInput);
    }
    let n = norm(v);
    if !n.is_finite() {
        return Err(StoreError::NonFinite { row: 0, col: 0 });
    }
    if n == 0.0 {
        return Err(StoreError::ZeroVector);
    }
    Ok(v.iter().map(|&x| (x as f64 / n) as f32).collect())
}

/// An `n x d` matrix of sentence embeddings with one id per row.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore {
    matrix: Vec<f32>,
    dim: usize,
    normalized: bool,
    ids: Vec<String>,
}

impl EmbeddingStore {
    /// Validates shape, finiteness, id uniqueness and, when `normalized`, unit rows.
    pub fn new(matrix: Vec<f32>, dim: usize, normalized: bool, ids: Vec<String>) -> Result<Self> {
        let store = Self::new_unchecked_ids(matrix, dim, normalized, ids)?;
        let mut seen = std::collections::HashSet::with_capacity(store.ids.len());
        for id in &store.ids {
            if !seen.insert(id.as_str()) {
                return Err(StoreError::DuplicateId(id.clone()));
            }
        }
        Ok(store)
    }

    // Token-level dumps repeat ids across rows, so uniqueness is optional here.
    fn new_unchecked_ids(
        matrix: Vec<f32>,
        dim: usize,
        normalized: bool,
        ids: Vec<String>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(StoreError::DimensionMismatch {
                expected: 1,
                actual: 0,
            });
        }
        if matrix.len() != ids.len() * dim {
            return Err(StoreError::DimensionMismatch {
                expected: ids.len() * dim,
                actual: matrix.len(),
            });
        }
        if let Some(pos) = matrix.iter().position(|x| !x.is_finite()) {
            return Err(StoreError::NonFinite {
                row: pos / dim,
                col: pos % dim,
            });
        }
        if let Some(id) = ids.iter().find(|id| id.len() > u16::MAX as usize) {
            return Err(StoreError::IdTooLong(id.clone()));
        }
        let store = Self {
            matrix,
            dim,
            normalized,
            ids,
        };
        if normalized {
            store.check_normalized()?;
        }
        Ok(store)
    }

    pub fn from_rows(rows: &[Vec<f32>], ids: Vec<String>, normalized: bool) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(1);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(StoreError::DimensionMismatch {
                expected: dim,
                actual: bad.len(),
            });
        }
        Self::new(rows.concat(), dim, normalized, ids)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.matrix
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.matrix.chunks_exact(self.dim)
    }

    pub fn check_normalized(&self) -> Result<()> {
        for (row, v) in self.rows().enumerate() {
            let n = norm(v);
            if (n - 1.0).abs() > UNIT_TOLERANCE {
                return Err(StoreError::NotUnit { row, norm: n });
            }
        }
        Ok(())
    }

    /// Returns a copy with every row scaled to unit length.
    pub fn normalized(&self) -> Result<Self> {
        let mut matrix = Vec::with_capacity(self.matrix.len());
        for v in self.rows() {
            matrix.extend(l2_normalize(v)?);
        }
        Self::new(matrix, self.dim, true, self.ids.clone())
    }

    /// Mean-pools runs of consecutive rows sharing an id, then L2-normalizes.
    ///
    /// A token-level dump stores one row per token with the sample id repeated;
    /// an already pooled store (one row per id) passes through as a plain
    /// normalization. An id that reappears after a different id is rejected.
    pub fn pool_tokens(&self) -> Result<Self> {
        let mut matrix = Vec::new();
        let mut ids: Vec<String> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let mut start = 0;
        while start < self.len() {
            let id = &self.ids[start];
            if !seen.insert(id.as_str()) {
                return Err(StoreError::DuplicateId(id.clone()));
            }
            let mut end = start + 1;
            while end < self.len() && &self.ids[end] == id {
                end += 1;
            }
            let pooled = mean_rows((start..end).map(|r| self.row(r)), self.dim)?;
            let unit = l2_normalize(&pooled).map_err(|e| match e {
                StoreError::ZeroVector => {
                    StoreError::Format(format!("sample `{id}` pools to a zero vector"))
                }
                other => other,
            })?;
            matrix.extend(unit);
            ids.push(id.clone());
            start = end;
        }
        Self::new(matrix, self.dim, true, ids)
    }

    /// Checks that rows align 1:1 with `corpus` ids, in order.
    pub fn check_aligned(&self, corpus: &[SampleRecord]) -> Result<()> {
        if self.len() != corpus.len() {
            return Err(StoreError::DimensionMismatch {
                expected: corpus.len(),
                actual: self.len(),
            });
        }
        for (row, (id, rec)) in self.ids.iter().zip(corpus).enumerate() {
            if id != &rec.id {
                return Err(StoreError::IdMismatch {
                    row,
                    id: id.clone(),
                    expected: rec.id.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn index_of(&self) -> HashMap<&str, usize> {
        self.ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let ids_len: usize = self.ids.iter().map(|id| 2 + id.len()).sum();
        let mut out = Vec::with_capacity(HEADER_LEN + self.matrix.len() * 4 + ids_len);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.normalized as u8);
        out.push(0);
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for x in &self.matrix {
            out.extend_from_slice(&x.to_le_bytes());
        }
        for id in &self.ids {
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        out
    }

    /// Parses an LTDE buffer. Duplicate ids are allowed only for token-level dumps;
    /// use [`EmbeddingStore::from_bytes`] for sentence-level stores.
    pub fn from_bytes_raw(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(4, "magic")?;
        if magic != MAGIC {
            return Err(StoreError::Format(format!("bad magic {magic:?}")));
        }
        let version = u16::from_le_bytes(cur.array("version")?);
        if version != VERSION {
            return Err(StoreError::Format(format!("unsupported version {version}")));
        }
        let normalized = match cur.take(1, "flags")?[0] {
            0 => false,
            1 => true,
            other => return Err(StoreError::Format(format!("bad normalized flag {other}"))),
        };
        let reserved = cur.take(1, "flags")?[0];
        if reserved != 0 {
            return Err(StoreError::Format(format!("reserved byte is {reserved}")));
        }
        let n = u64::from_le_bytes(cur.array("row count")?);
        let d = u32::from_le_bytes(cur.array("dimension")?) as usize;
        let n = usize::try_from(n).map_err(|_| StoreError::Format(format!("row count {n}")))?;
        let floats = n
            .checked_mul(d)
            .ok_or_else(|| StoreError::Format(format!("{n} x {d} overflows")))?;
        let byte_len = floats
            .checked_mul(4)
            .ok_or_else(|| StoreError::Format(format!("{n} x {d} overflows")))?;
        let body = cur.take(byte_len, "matrix")?;
        let matrix = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            let len = u16::from_le_bytes(cur.array("id length")?) as usize;
            let raw = cur.take(len, "id")?;
            let id = std::str::from_utf8(raw)
                .map_err(|e| StoreError::Format(format!("id is not UTF-8: {e}")))?;
            ids.push(id.to_string());
        }
        if cur.pos != bytes.len() {
            return Err(StoreError::Format(format!(
                "{} trailing bytes",
                bytes.len() - cur.pos
            )));
        }
        Self::new_unchecked_ids(matrix, d, normalized, ids)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let store = Self::from_bytes_raw(bytes)?;
        Self::new(store.matrix, store.dim, store.normalized, store.ids)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                StoreError::TruncatedFile(format!("{what} at byte {} needs {len} bytes", self.pos))
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let s = self.take(N, what)?;
        let mut a = [0u8; N];
        a.copy_from_slice(s);
        Ok(a)
    }
}

pub fn write_store(store: &EmbeddingStore, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&store.to_bytes())?;
    w.flush()?;
    Ok(())
}

fn read_all(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    Ok(bytes)
}

pub fn read_store(path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    EmbeddingStore::from_bytes(&read_all(path)?)
}

/// Reads a token-level dump, where consecutive rows may share a sample id.
pub fn read_token_dump(path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    EmbeddingStore::from_bytes_raw(&read_all(path)?)
}
