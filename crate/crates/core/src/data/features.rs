//! Binary feature matrices with a JSON id sidecar.
//!
//! ```text
//! magic    "CITEFEAT"
//! version  u32 = 1
//! rows     u64
//! cols     u64
//! payload  rows × cols little-endian f32, row-major
//! ```
//!
//! Row ids live next to the matrix in `<file>.ids.json` as a JSON array.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::error::{CiteError, Result};
use crate::tensor::Matrix;

pub const FEATURE_MAGIC: &[u8; 8] = b"CITEFEAT";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8 + 8;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStore {
    dim: usize,
    data: Vec<f32>,
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

pub fn ids_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".ids.json");
    PathBuf::from(s)
}

impl FeatureStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            data: Vec::new(),
            ids: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn from_rows(dim: usize, ids: Vec<String>, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(CiteError::Data("feature dimension must be ≥ 1".into()));
        }
        if data.len() != ids.len() * dim {
            return Err(CiteError::Data(format!(
                "{} ids with {} values of width {dim}",
                ids.len(),
                data.len()
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(CiteError::Data(format!("duplicate feature id {id}")));
            }
        }
        Ok(Self {
            dim,
            data,
            ids,
            index,
        })
    }

    /// Appends a row (stored as `f32`) and returns its index.
    pub fn push(&mut self, id: impl Into<String>, row: &[f64]) -> Result<usize> {
        if row.len() != self.dim {
            return Err(CiteError::dim(
                "feature_store",
                format!("row of width {} in a store of width {}", row.len(), self.dim),
            ));
        }
        let id = id.into();
        let idx = self.ids.len();
        if self.index.insert(id.clone(), idx).is_some() {
            return Err(CiteError::Data(format!("duplicate feature id {id}")));
        }
        self.ids.push(id);
        self.data.extend(row.iter().map(|&v| v as f32));
        Ok(idx)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn raw(&self) -> &[f32] {
        &self.data
    }

    /// Gathers rows into an `f64` matrix, optionally appending extra columns per row.
    pub fn gather(&self, rows: &[usize]) -> Matrix {
        let mut m = Matrix::zeros(rows.len(), self.dim);
        for (out, &r) in rows.iter().enumerate() {
            for (dst, &v) in m.row_mut(out).iter_mut().zip(self.row(r)) {
                *dst = v as f64;
            }
        }
        m
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        buf.extend_from_slice(FEATURE_MAGIC);
        buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.rows() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.dim as u64).to_le_bytes());
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    /// Parses the binary matrix; ids default to the row numbers.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |detail: String| CiteError::Corrupt {
            path: path.to_path_buf(),
            detail,
        };
        if bytes.len() < HEADER_LEN {
            return Err(corrupt(format!(
                "header needs {HEADER_LEN} bytes, file has {}",
                bytes.len()
            )));
        }
        if &bytes[..8] != FEATURE_MAGIC {
            return Err(corrupt("bad magic, not a feature file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FEATURE_VERSION {
            return Err(CiteError::Version {
                path: path.to_path_buf(),
                expected: FEATURE_VERSION,
                found: version,
            });
        }
        let rows = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let cols = u64::from_le_bytes(bytes[20..28].try_into().unwrap()) as usize;
        if cols == 0 {
            return Err(corrupt("feature dimension is 0".into()));
        }
        let expected = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(HEADER_LEN))
            .ok_or_else(|| corrupt(format!("header claims {rows}x{cols}")))?;
        if bytes.len() != expected {
            return Err(corrupt(format!(
                "expected {expected} bytes for {rows}x{cols}, found {}",
                bytes.len()
            )));
        }
        let data = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_rows(cols, (0..rows).map(|i| i.to_string()).collect(), data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| CiteError::io(path, e))?;
        let ids = serde_json::to_string(&self.ids).expect("string array serialises");
        let side = ids_path(path);
        std::fs::write(&side, ids).map_err(|e| CiteError::io(side, e))
    }
}

/// Reads a feature file and, when present, its id sidecar.
pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureStore> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| CiteError::io(path, e))?;
    let store = FeatureStore::from_bytes(&bytes, path)?;
    let side = ids_path(path);
    if !side.exists() {
        return Ok(store);
    }
    let text = std::fs::read_to_string(&side).map_err(|e| CiteError::io(&side, e))?;
    let ids: Vec<String> = serde_json::from_str(&text)
        .map_err(|e| CiteError::Data(format!("{}: {e}", side.display())))?;
    if ids.len() != store.rows() {
        return Err(CiteError::Data(format!(
            "{}: {} ids for {} rows",
            side.display(),
            ids.len(),
            store.rows()
        )));
    }
    FeatureStore::from_rows(store.dim, ids, store.data)
}
