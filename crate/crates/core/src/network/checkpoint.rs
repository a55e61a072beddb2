//! Binary checkpoint format.
//!
//! ```text
//! magic    "CITEMODL"
//! version  u32
//! config   u64 d_v, u64 d_t, u64 M, u64 K, u8 assignment (0 learned, 1 external)
//! count    u64
//! records  count × { u32 name_len, name (UTF-8), u32 rank, rank × u64 dims, f64 payload }
//! ```
//!
//! All integers and floats are little-endian. Batch-norm running statistics
//! are stored as rank-1 records named `<stage>.running_mean` / `<stage>.running_var`.

use std::path::Path;

use super::{init_model, AssignmentMode, ModelConfig, ModelParams};
use crate::error::{CiteError, Result};
use crate::tensor::Matrix;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CITEMODL";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Record<'a> {
    name: String,
    dims: Vec<u64>,
    data: &'a [f64],
}

fn records(params: &ModelParams) -> Vec<Record<'_>> {
    let mut out: Vec<Record<'_>> = params
        .params
        .iter()
        .map(|(_, name, m)| Record {
            name: name.to_string(),
            dims: vec![m.rows() as u64, m.cols() as u64],
            data: m.as_slice(),
        })
        .collect();
    for (stage, stats) in &params.running {
        out.push(Record {
            name: format!("{stage}.running_mean"),
            dims: vec![stats.mean.len() as u64],
            data: &stats.mean,
        });
        out.push(Record {
            name: format!("{stage}.running_var"),
            dims: vec![stats.var.len() as u64],
            data: &stats.var,
        });
    }
    out
}

pub fn encode_model(params: &ModelParams) -> Vec<u8> {
    let cfg = params.config();
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [cfg.region_dim, cfg.phrase_dim, cfg.embed_dim, cfg.num_embeddings] {
        buf.extend_from_slice(&(v as u64).to_le_bytes());
    }
    buf.push(match cfg.assignment {
        AssignmentMode::Learned => 0,
        AssignmentMode::External => 1,
    });
    let recs = records(params);
    buf.extend_from_slice(&(recs.len() as u64).to_le_bytes());
    for r in recs {
        buf.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(r.name.as_bytes());
        buf.extend_from_slice(&(r.dims.len() as u32).to_le_bytes());
        for d in &r.dims {
            buf.extend_from_slice(&d.to_le_bytes());
        }
        for v in r.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn save_model(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_model(params)).map_err(|e| CiteError::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(CiteError::Corrupt {
                path: self.path.to_path_buf(),
                detail: format!(
                    "truncated while reading {what}: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.buf.len()
                ),
            }),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn corrupt(&self, detail: impl Into<String>) -> CiteError {
        CiteError::Corrupt {
            path: self.path.to_path_buf(),
            detail: detail.into(),
        }
    }
}

pub fn decode_model(bytes: &[u8], path: &Path) -> Result<ModelParams> {
    let mut r = Reader { buf: bytes, pos: 0, path };
    if r.take(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(r.corrupt("bad magic, not a model checkpoint"));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(CiteError::Version {
            path: path.to_path_buf(),
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    let mut dims = [0usize; 4];
    for d in dims.iter_mut() {
        *d = r.u64("config")? as usize;
    }
    let assignment = match r.u8("config")? {
        0 => AssignmentMode::Learned,
        1 => AssignmentMode::External,
        other => return Err(r.corrupt(format!("unknown assignment mode byte {other}"))),
    };
    let cfg = ModelConfig::new(dims[0], dims[1], dims[2], dims[3], assignment, 0);
    cfg.validate().map_err(|e| r.corrupt(e.to_string()))?;
    let mut model = init_model(&cfg)?;
    let expected_records = records(&model).len();

    let count = r.u64("record count")? as usize;
    if count != expected_records {
        return Err(r.corrupt(format!(
            "{count} tensor records, config implies {expected_records}"
        )));
    }
    let mut seen = std::collections::BTreeSet::new();
    for _ in 0..count {
        let name_len = r.u32("tensor name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| r.corrupt("tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u32("tensor rank")? as usize;
        if rank > 2 {
            return Err(r.corrupt(format!("tensor {name} has rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| r.u64("tensor dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.saturating_mul(8), &format!("payload of {name}"))?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();

        if let Some(stage) = name.strip_suffix(".running_mean") {
            let stats = model.running.get_mut(stage).ok_or_else(|| unexpected(&name, &shape))?;
            check_shape(&name, &[stats.mean.len()], &shape)?;
            stats.mean = data;
        } else if let Some(stage) = name.strip_suffix(".running_var") {
            let stats = model.running.get_mut(stage).ok_or_else(|| unexpected(&name, &shape))?;
            check_shape(&name, &[stats.var.len()], &shape)?;
            stats.var = data;
        } else {
            let id = model.params.id(&name).ok_or_else(|| unexpected(&name, &shape))?;
            let slot = model.params.get_mut(id);
            check_shape(&name, &[slot.rows(), slot.cols()], &shape)?;
            *slot = Matrix::from_vec(shape[0], shape[1], data)?;
        }
        if !seen.insert(name.clone()) {
            return Err(r.corrupt(format!("duplicate tensor {name}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(r.corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(model)
}

fn unexpected(name: &str, shape: &[usize]) -> CiteError {
    CiteError::Shape {
        name: name.to_string(),
        expected: vec![],
        found: shape.to_vec(),
    }
}

fn check_shape(name: &str, expected: &[usize], found: &[usize]) -> Result<()> {
    if expected != found {
        return Err(CiteError::Shape {
            name: name.to_string(),
            expected: expected.to_vec(),
            found: found.to_vec(),
        });
    }
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| CiteError::io(path, e))?;
    decode_model(&bytes, path)
}

/// Loads a checkpoint and checks every tensor against the shapes `expected` implies.
pub fn load_model_for(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<ModelParams> {
    let mut model = load_model(path)?;
    for (name, rows, cols) in expected.tensor_shapes() {
        let found = model
            .tensor(&name)
            .map(|m| vec![m.rows(), m.cols()])
            .unwrap_or_default();
        check_shape(&name, &[rows, cols], &found)?;
    }
    if model.config().assignment != expected.assignment {
        return Err(CiteError::Config(format!(
            "checkpoint uses {} assignment, run expects {}",
            model.config().assignment,
            expected.assignment
        )));
    }
    model.config.seed = expected.seed;
    Ok(model)
}
