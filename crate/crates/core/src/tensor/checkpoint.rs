//! Binary parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "MXCK" | u32 version
//! u32 n_meta  | n_meta × (str key, str value)
//! u32 n_param | n_param × (str name, u8 trainable, u32 ndim, ndim × u64 extent, numel × f64 bits)
//! str = u32 byte length + UTF-8 bytes
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use super::{ParamSet, Tensor, TensorError};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"MXCK";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub params: ParamSet,
    pub metadata: BTreeMap<String, String>,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> io::Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(checkpoint.metadata.len() as u32).to_le_bytes());
    for (k, v) in &checkpoint.metadata {
        put_str(&mut out, k);
        put_str(&mut out, v);
    }
    out.extend_from_slice(&(checkpoint.params.len() as u32).to_le_bytes());
    for (name, t) in checkpoint.params.iter() {
        put_str(&mut out, name);
        out.push(u8::from(t.requires_grad()));
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    f.sync_all()
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], TensorError> {
        if self.pos + n > self.buf.len() {
            return Err(TensorError::Checkpoint("truncated file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, TensorError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, TensorError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, TensorError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| TensorError::Checkpoint(e.to_string()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TensorError> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| TensorError::Checkpoint(format!("{}: {e}", path.display())))?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(TensorError::Checkpoint(format!("{}: not a checkpoint file", path.display())));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(TensorError::Checkpoint(format!("unsupported version {version}")));
    }
    let mut metadata = BTreeMap::new();
    for _ in 0..r.u32()? {
        let k = r.string()?;
        let v = r.string()?;
        metadata.insert(k, v);
    }
    let mut params = ParamSet::new();
    for _ in 0..r.u32()? {
        let name = r.string()?;
        let trainable = r.take(1)?[0] != 0;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| r.u64().map(f64::from_bits)).collect::<Result<Vec<_>, _>>()?;
        let mut t = Tensor::new(shape, data)?;
        t.set_requires_grad(trainable);
        params.insert(name, t);
    }
    if r.pos != buf.len() {
        return Err(TensorError::Checkpoint("trailing bytes".into()));
    }
    Ok(Checkpoint { params, metadata })
}
