//! Binary model checkpoints.
//!
//! Layout (little-endian): magic `MUNETCK1`, `u32` format version, `u8`
//! element width (4 or 8), `u32`-prefixed network spec JSON, `u32`
//! parameter count, then per parameter a `u32`-prefixed name, a `u8`
//! trainable flag, a `u32` rank, `u64` dims and the raw elements.
//! Batch-norm running statistics are stored as non-trainable parameters.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{ModelState, NetworkSpec};
use crate::tensor::optim::Parameter;
use crate::tensor::{Element, Tensor};

const MAGIC: &[u8; 8] = b"MUNETCK1";
const VERSION: u32 = 1;

pub fn write_checkpoint<T: Element, W: Write>(model: &ModelState<T>, mut out: W) -> std::io::Result<()> {
    let width = std::mem::size_of::<T>() as u8;
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&[width])?;
    let spec = serde_json::to_vec(model.spec()).map_err(std::io::Error::other)?;
    out.write_all(&(spec.len() as u32).to_le_bytes())?;
    out.write_all(&spec)?;
    out.write_all(&(model.params().len() as u32).to_le_bytes())?;
    for p in model.params() {
        out.write_all(&(p.name.len() as u32).to_le_bytes())?;
        out.write_all(p.name.as_bytes())?;
        out.write_all(&[u8::from(p.trainable)])?;
        let shape = p.tensor.shape();
        out.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(p.tensor.numel() * width as usize);
        for &v in p.tensor.data() {
            if width == 4 {
                buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            } else {
                buf.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

struct Reader<'a, R> {
    inner: R,
    path: &'a Path,
}

impl<R: Read> Reader<'_, R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0; n];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => self.err("truncated file"),
            _ => Error::io(self.path, e),
        })?;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().expect("8 bytes")))
    }

    fn err(&self, detail: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            detail: detail.into(),
        }
    }
}

/// Reads a checkpoint into element type `T`; `path` is only used in errors.
pub fn read_checkpoint<T: Element, R: Read>(input: R, path: &Path) -> Result<ModelState<T>> {
    let mut r = Reader { inner: input, path };
    if r.bytes(8)? != MAGIC {
        return Err(r.err("not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.err(format!("unsupported checkpoint version {version}")));
    }
    let width = r.u8()?;
    if width != 4 && width != 8 {
        return Err(r.err(format!("bad element width {width}")));
    }
    let len = r.u32()? as usize;
    let spec: NetworkSpec = serde_json::from_slice(&r.bytes(len)?).map_err(|e| r.err(format!("spec: {e}")))?;
    let count = r.u32()? as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.bytes(len)?).map_err(|_| r.err("parameter name is not UTF-8"))?;
        let trainable = r.u8()? != 0;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.bytes(n * width as usize)?;
        let data = raw
            .chunks_exact(width as usize)
            .map(|c| {
                T::from_f64(if width == 4 {
                    f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes")))
                } else {
                    f64::from_le_bytes(c.try_into().expect("8 bytes"))
                })
            })
            .collect();
        params.push(Parameter::new(name, Tensor::new(&shape, data)?, trainable));
    }
    let mut rest = Vec::new();
    r.inner.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
    if !rest.is_empty() {
        return Err(r.err(format!("{} trailing bytes", rest.len())));
    }
    ModelState::from_parameters(spec, params)
}

pub fn save_checkpoint<T: Element>(model: &ModelState<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    write_checkpoint(model, &mut out)
        .and_then(|()| out.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Element>(path: impl AsRef<Path>) -> Result<ModelState<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file), path)
}
