//! Precomputed embedding matrices and the `CEMB` binary file format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "CEMB" | version u32 = 1 | dim u32 | count u64 | flags u32 (bit0 = normalized)
//! count x { key_len u32 | key utf-8 bytes | dim x f32 }
//! ```
//!
//! Values are always stored as `f32`; matrices can be held in memory at any
//! [`Scalar`] precision and are cast on load and save.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::scalar::{dot, l2_norm, normalize_in_place, Scalar};

pub const MAGIC: &[u8; 4] = b"CEMB";
pub const VERSION: u32 = 1;
pub const FLAG_NORMALIZED: u32 = 1;
/// Allowed deviation of a row norm from 1 when a matrix claims to be normalized.
pub const NORM_TOLERANCE: f64 = 1e-4;

const HEADER_LEN: u64 = 4 + 4 + 4 + 8 + 4;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("embedding file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("bad magic {found:?}, expected \"CEMB\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported embedding file version {0}")]
    BadVersion(u32),
    #[error("truncated embedding file: expected at least {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("{trailing} trailing bytes after the last record")]
    TrailingBytes { trailing: u64 },
    #[error("key at record {index} is not valid UTF-8")]
    BadKey { index: u64 },
    #[error("non-finite value in row {key:?}")]
    NonFinite { key: String },
    #[error("row {key:?} has norm {norm}, but the matrix is flagged normalized")]
    NotNormalized { key: String, norm: f64 },
    #[error("duplicate key {0:?}")]
    DuplicateKey(String),
    #[error("row {key:?} has {found} values, expected {expected}")]
    RowLength { key: String, expected: usize, found: usize },
    #[error("missing embedding for key {0:?}")]
    MissingKey(String),
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("mean of the input vectors is zero")]
    DegenerateAverage,
    #[error("no vectors to average")]
    NoVectors,
}

/// Row-major `keys x dim` matrix with unique string keys.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix<T> {
    dim: usize,
    keys: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<T>,
    normalized: bool,
}

impl<T: Scalar> EmbeddingMatrix<T> {
    pub fn new(dim: usize) -> Self {
        EmbeddingMatrix {
            dim,
            keys: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
            normalized: false,
        }
    }

    /// Builds a matrix from `(key, row)` pairs. `normalized` is verified,
    /// not applied.
    pub fn from_rows<K, I>(dim: usize, rows: I, normalized: bool) -> Result<Self, EmbeddingError>
    where
        K: Into<String>,
        I: IntoIterator<Item = (K, Vec<T>)>,
    {
        let mut m = Self::new(dim);
        for (k, row) in rows {
            m.push(k, &row)?;
        }
        if normalized {
            m.check_normalized()?;
            m.normalized = true;
        }
        Ok(m)
    }

    pub fn push(&mut self, key: impl Into<String>, row: &[T]) -> Result<(), EmbeddingError> {
        let key = key.into();
        if row.len() != self.dim {
            return Err(EmbeddingError::RowLength {
                key,
                expected: self.dim,
                found: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite { key });
        }
        if self.index.contains_key(&key) {
            return Err(EmbeddingError::DuplicateKey(key));
        }
        if self.normalized {
            let n = l2_norm(row).to_f64_lossy();
            if (n - 1.0).abs() > NORM_TOLERANCE {
                return Err(EmbeddingError::NotNormalized { key, norm: n });
            }
        }
        self.index.insert(key.clone(), self.keys.len());
        self.keys.push(key);
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, key: &str) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn get(&self, key: &str) -> Option<&[T]> {
        self.position(key).map(|i| self.row(i))
    }

    /// Like [`get`](Self::get) but a missing key is an error naming it.
    pub fn require(&self, key: &str) -> Result<&[T], EmbeddingError> {
        self.get(key)
            .ok_or_else(|| EmbeddingError::MissingKey(key.to_string()))
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &[T])> {
        self.keys
            .iter()
            .enumerate()
            .map(move |(i, k)| (k.as_str(), self.row(i)))
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    fn check_normalized(&self) -> Result<(), EmbeddingError> {
        for (k, row) in self.rows() {
            let n = l2_norm(row).to_f64_lossy();
            if (n - 1.0).abs() > NORM_TOLERANCE {
                return Err(EmbeddingError::NotNormalized {
                    key: k.to_string(),
                    norm: n,
                });
            }
        }
        Ok(())
    }

    /// Returns a copy with every row scaled to unit norm.
    pub fn normalized(&self) -> Result<Self, EmbeddingError> {
        let mut out = self.clone();
        for (i, chunk) in out.data.chunks_mut(self.dim.max(1)).enumerate() {
            if self.dim > 0 && !normalize_in_place(chunk) {
                return Err(EmbeddingError::NotNormalized {
                    key: self.keys[i].clone(),
                    norm: 0.0,
                });
            }
        }
        out.normalized = true;
        Ok(out)
    }

    pub fn cast<U: Scalar>(&self) -> EmbeddingMatrix<U> {
        EmbeddingMatrix {
            dim: self.dim,
            keys: self.keys.clone(),
            index: self.index.clone(),
            data: self.data.iter().map(|v| U::of(v.to_f64_lossy())).collect(),
            normalized: self.normalized,
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.keys.len() as u64).to_le_bytes())?;
        let flags = if self.normalized { FLAG_NORMALIZED } else { 0 };
        w.write_all(&flags.to_le_bytes())?;
        for (k, row) in self.rows() {
            w.write_all(&(k.len() as u32).to_le_bytes())?;
            w.write_all(k.as_bytes())?;
            for v in row {
                let f = v.to_f32().unwrap_or(f32::NAN);
                w.write_all(&f.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EmbeddingError> {
        let path = path.as_ref();
        let io_err = |source| EmbeddingError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
        self.write_to(&mut w).map_err(io_err)?;
        w.flush().map_err(io_err)
    }

    /// Parses a complete `CEMB` image.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EmbeddingError> {
        let actual = bytes.len() as u64;
        let mut cur = Cursor { bytes, pos: 0 };
        if actual < 4 {
            return Err(EmbeddingError::Truncated { expected: HEADER_LEN, actual });
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("length checked");
        if &magic != MAGIC {
            return Err(EmbeddingError::BadMagic { found: magic });
        }
        cur.pos = 4;
        if actual < HEADER_LEN {
            return Err(EmbeddingError::Truncated { expected: HEADER_LEN, actual });
        }
        let version = cur.u32();
        if version != VERSION {
            return Err(EmbeddingError::BadVersion(version));
        }
        let dim = cur.u32() as usize;
        let count = cur.u64();
        let flags = cur.u32();
        let mut m = EmbeddingMatrix::new(dim);
        let row_bytes = 4 * dim as u64;
        let mut row = Vec::with_capacity(dim);
        for index in 0..count {
            let remaining = count - index;
            // every remaining record needs at least a key length and a row
            let min_rest = remaining * (4 + row_bytes);
            if cur.pos + 4 > actual {
                return Err(EmbeddingError::Truncated {
                    expected: cur.pos + min_rest,
                    actual,
                });
            }
            let key_len = cur.u32() as u64;
            let need = key_len + row_bytes + (remaining - 1) * (4 + row_bytes);
            if cur.pos + need > actual {
                return Err(EmbeddingError::Truncated {
                    expected: cur.pos + need,
                    actual,
                });
            }
            let key = std::str::from_utf8(cur.take(key_len as usize))
                .map_err(|_| EmbeddingError::BadKey { index })?
                .to_string();
            row.clear();
            for _ in 0..dim {
                row.push(T::of(cur.f32() as f64));
            }
            m.push(key, &row)?;
        }
        if cur.pos != actual {
            return Err(EmbeddingError::TrailingBytes {
                trailing: actual - cur.pos,
            });
        }
        if flags & FLAG_NORMALIZED != 0 {
            m.check_normalized()?;
            m.normalized = true;
        }
        Ok(m)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: u64,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> &'a [u8] {
        let s = &self.bytes[self.pos as usize..self.pos as usize + n];
        self.pos += n as u64;
        s
    }
    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take(4).try_into().unwrap())
    }
    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take(8).try_into().unwrap())
    }
    fn f32(&mut self) -> f32 {
        f32::from_le_bytes(self.take(4).try_into().unwrap())
    }
}

/// Loads a `CEMB` file, validating magic, size, finiteness and (when the
/// header says so) row norms.
pub fn load_embeddings<T: Scalar>(path: impl AsRef<Path>) -> Result<EmbeddingMatrix<T>, EmbeddingError> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(|source| EmbeddingError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    EmbeddingMatrix::from_bytes(&bytes)
}

/// Cosine similarity `u.v / (|u||v|)`.
pub fn cosine<T: Scalar>(u: &[T], v: &[T]) -> Result<T, EmbeddingError> {
    if u.len() != v.len() {
        return Err(EmbeddingError::DimMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let nu = l2_norm(u);
    let nv = l2_norm(v);
    if nu == T::zero() || nv == T::zero() {
        return Err(EmbeddingError::ZeroVector);
    }
    let c = dot(u, v) / (nu * nv);
    Ok(c.max(-T::one()).min(T::one()))
}

/// L2-normalized arithmetic mean of equal-length vectors.
pub fn average_normalized<T: Scalar, V: AsRef<[T]>>(vectors: &[V]) -> Result<Vec<T>, EmbeddingError> {
    let first = vectors.first().ok_or(EmbeddingError::NoVectors)?.as_ref();
    let dim = first.len();
    let mut acc = vec![T::zero(); dim];
    for v in vectors {
        let v = v.as_ref();
        if v.len() != dim {
            return Err(EmbeddingError::DimMismatch {
                left: dim,
                right: v.len(),
            });
        }
        for (a, &x) in acc.iter_mut().zip(v) {
            *a = *a + x;
        }
    }
    let n = T::of(vectors.len() as f64);
    for a in acc.iter_mut() {
        *a = *a / n;
    }
    // relative to the input scale, so that antipodal pairs are caught despite rounding
    let scale = vectors
        .iter()
        .map(|v| l2_norm(v.as_ref()))
        .fold(T::zero(), |a, b| a.max(b));
    if l2_norm(&acc) <= scale * T::epsilon() * T::of(dim.max(1) as f64) {
        return Err(EmbeddingError::DegenerateAverage);
    }
    normalize_in_place(&mut acc);
    Ok(acc)
}
