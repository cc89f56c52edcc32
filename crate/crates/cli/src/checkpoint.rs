//! Binary checkpoint format for named tensors.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "ETCK" | u32 version (=1) | u32 count
//! per tensor: u16 name_len | name (UTF-8) | u8 dtype (0 = f64) | u8 rank
//!             | rank × u64 dims | payload (f64 LE, row-major)
//! ```
//!
//! An empty map encodes to 12 bytes. Decoding is strict: trailing bytes,
//! duplicate names and unknown dtypes are errors.

use std::path::Path;

use ether_core::Tensor;
use indexmap::IndexMap;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"ETCK";
pub const VERSION: u32 = 1;
pub const DTYPE_F64: u8 = 0;

pub type TensorMap = IndexMap<String, Tensor>;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format error at byte {offset}{}: {message}", tensor_suffix(.tensor))]
    Format {
        offset: usize,
        tensor: Option<String>,
        message: String,
    },
    #[error("cannot encode tensor '{name}': {message}")]
    Encode { name: String, message: String },
}

fn tensor_suffix(t: &Option<String>) -> String {
    t.as_ref().map(|n| format!(" (tensor '{n}')")).unwrap_or_default()
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

pub fn encode(map: &TensorMap) -> Result<Vec<u8>> {
    let count = u32::try_from(map.len()).map_err(|_| CheckpointError::Encode {
        name: String::new(),
        message: "too many tensors".into(),
    })?;
    let mut out = Vec::with_capacity(12 + map.values().map(|t| 8 * t.numel() + 64).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in map {
        let fail = |message: &str| CheckpointError::Encode {
            name: name.clone(),
            message: message.into(),
        };
        let len = u16::try_from(name.len()).map_err(|_| fail("name longer than 65535 bytes"))?;
        let rank = u8::try_from(t.rank()).map_err(|_| fail("rank above 255"))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F64);
        out.push(rank);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    tensor: Option<String>,
}

impl<'a> Reader<'a> {
    fn fail(&self, offset: usize, message: impl Into<String>) -> CheckpointError {
        CheckpointError::Format {
            offset,
            tensor: self.tensor.clone(),
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.fail(
                self.pos,
                format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            )),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<TensorMap> {
    let mut r = Reader { bytes, pos: 0, tensor: None };
    if r.take(4, "magic")? != MAGIC {
        return Err(r.fail(0, "bad magic, expected 'ETCK'"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(r.fail(4, format!("unsupported version {version}")));
    }
    let count = r.u32("tensor count")?;
    let mut map = TensorMap::new();
    for _ in 0..count {
        r.tensor = None;
        let start = r.pos;
        let len = r.u16("name length")? as usize;
        let name_at = r.pos;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| r.fail(name_at, "name is not valid UTF-8"))?
            .to_string();
        if map.contains_key(&name) {
            r.tensor = Some(name);
            return Err(r.fail(start, "duplicate tensor name"));
        }
        r.tensor = Some(name.clone());
        let dtype_at = r.pos;
        let dtype = r.u8("dtype")?;
        if dtype != DTYPE_F64 {
            return Err(r.fail(dtype_at, format!("unsupported dtype {dtype}")));
        }
        let rank = r.u8("rank")? as usize;
        let dims_at = r.pos;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = r.u64("dimension")?;
            shape.push(usize::try_from(d).map_err(|_| r.fail(dims_at, "dimension overflows usize"))?);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(8).map(|_| n))
            .ok_or_else(|| r.fail(dims_at, "element count overflows"))?;
        let payload = r.take(numel * 8, "payload")?;
        let data: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| r.fail(dims_at, e.to_string()))?;
        map.insert(name, t);
    }
    r.tensor = None;
    if r.pos != bytes.len() {
        return Err(r.fail(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(map)
}

/// Writes atomically: a temporary file in the target directory is renamed
/// over `path` only once fully written.
pub fn save_checkpoint(path: &Path, map: &TensorMap) -> Result<()> {
    let bytes = encode(map)?;
    crate::output::write_atomic(path, &bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TensorMap> {
    decode(&std::fs::read(path)?)
}
