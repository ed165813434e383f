//! Binary checkpoint container: magic, version, a JSON config block and a
//! list of named little-endian `f64` arrays. See `docs/checkpoint.md`.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use serde_json::Value;

use super::tape::Tensor;
use super::{ModelConfig, ModelParameters, NetError};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FXSMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedArray {
    pub fn from_tensor(name: impl Into<String>, t: &Tensor) -> NamedArray {
        NamedArray { name: name.into(), shape: vec![t.rows, t.cols], data: t.data.clone() }
    }

    pub fn to_tensor(&self) -> Result<Tensor, NetError> {
        match self.shape[..] {
            [rows, cols] if rows * cols == self.data.len() => Ok(Tensor::matrix(rows, cols, self.data.clone())),
            _ => Err(NetError::Checkpoint(format!("array `{}` has shape {:?}, expected 2-d", self.name, self.shape))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    /// Free-form JSON; carries at least `{"model": ModelConfig}`.
    pub config: Value,
    pub arrays: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn from_params(params: &ModelParameters, mut config: Value) -> Checkpoint {
        if let Value::Object(map) = &mut config {
            map.insert("model".into(), serde_json::to_value(params.config).expect("config serializes"));
        }
        let arrays = params.names.iter().zip(&params.tensors).map(|(n, t)| NamedArray::from_tensor(n.clone(), t)).collect();
        Checkpoint { version: CHECKPOINT_VERSION, config, arrays }
    }

    pub fn model_config(&self) -> Result<ModelConfig, NetError> {
        let v = self.config.get("model").ok_or_else(|| NetError::Checkpoint("no `model` config block".into()))?;
        serde_json::from_value(v.clone()).map_err(|e| NetError::Checkpoint(format!("bad model config: {e}")))
    }

    /// Model parameters; arrays with a `prefix/` (optimizer state etc.) are skipped.
    pub fn params(&self) -> Result<ModelParameters, NetError> {
        let cfg = self.model_config()?;
        let mut named = HashMap::new();
        for a in self.arrays.iter().filter(|a| !a.name.contains('/')) {
            named.insert(a.name.clone(), a.to_tensor()?);
        }
        ModelParameters::from_named(cfg, named)
    }

    pub fn array(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }
}

fn bad(msg: impl Into<String>) -> NetError {
    NetError::Checkpoint(msg.into())
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&ck.version.to_le_bytes());
    let json = serde_json::to_vec(&ck.config).expect("json value serializes");
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(ck.arrays.len() as u64).to_le_bytes());
    for a in &ck.arrays {
        out.extend_from_slice(&(a.name.len() as u32).to_le_bytes());
        out.extend_from_slice(a.name.as_bytes());
        out.extend_from_slice(&(a.shape.len() as u32).to_le_bytes());
        for &d in &a.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in &a.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], NetError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| bad("truncated checkpoint"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<usize, NetError> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| bad("length overflows usize"))
    }
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Checkpoint, NetError> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(8)? != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let n = c.u64()?;
    let config: Value = serde_json::from_slice(c.take(n)?).map_err(|e| bad(format!("config block: {e}")))?;
    let count = c.u64()?;
    let mut arrays = Vec::new();
    for _ in 0..count {
        let n = c.u32()? as usize;
        let name = String::from_utf8(c.take(n)?.to_vec()).map_err(|_| bad("array name is not UTF-8"))?;
        let ndim = c.u32()? as usize;
        let shape = (0..ndim).map(|_| c.u64()).collect::<Result<Vec<_>, _>>()?;
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| bad("shape overflows"))?;
        let bytes = c.take(len.checked_mul(8).ok_or_else(|| bad("shape overflows"))?)?;
        let data = bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        arrays.push(NamedArray { name, shape, data });
    }
    if c.pos != buf.len() {
        return Err(bad("trailing bytes after last array"));
    }
    Ok(Checkpoint { version, config, arrays })
}

/// Writes through a temporary file and renames, so an interrupted write never
/// replaces a good checkpoint.
pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&encode_checkpoint(ck))?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, NetError> {
    let mut buf = Vec::new();
    fs::File::open(path).and_then(|mut f| f.read_to_end(&mut buf)).map_err(|e| bad(format!("{}: {e}", path.display())))?;
    decode_checkpoint(&buf)
}
