//! `FBNN` checkpoint files.
//!
//! Little-endian layout: magic `FBNN`, `u32` config length, the model config
//! text, `u32` tensor count, then per tensor `u32` rank, `u32` extents and
//! the `f64` values, in [`Model::params`] order.

use std::io::{Read, Write};

use super::model::{Model, ModelConfig};
use crate::error::{Error, Result};

pub const FBNN_MAGIC: &[u8; 4] = b"FBNN";

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn save_checkpoint<W: Write>(mut w: W, model: &Model) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(FBNN_MAGIC);
    let text = model.config().to_text();
    put_u32(&mut buf, text.len());
    buf.extend_from_slice(text.as_bytes());
    let params = model.params();
    put_u32(&mut buf, params.len());
    for p in params {
        put_u32(&mut buf, p.shape().len());
        for &d in p.shape() {
            put_u32(&mut buf, d);
        }
        for v in p.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

pub fn load_checkpoint<R: Read>(mut r: R) -> Result<Model> {
    let bad = |reason: String| Error::Format { what: "checkpoint", reason };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != FBNN_MAGIC {
        return Err(bad(format!("bad magic {magic:?}")));
    }
    let len = get_u32(&mut r)?;
    let mut text = vec![0u8; len];
    r.read_exact(&mut text)?;
    let text = String::from_utf8(text).map_err(|_| bad("config is not UTF-8".into()))?;
    let mut model = Model::new(ModelConfig::from_text(&text)?)?;
    let count = get_u32(&mut r)?;
    let mut params = model.params_mut();
    if count != params.len() {
        return Err(bad(format!("{count} tensors for a model with {}", params.len())));
    }
    for p in params.iter_mut() {
        let rank = get_u32(&mut r)?;
        let dims = (0..rank).map(|_| get_u32(&mut r)).collect::<Result<Vec<_>>>()?;
        if dims != p.shape() {
            return Err(bad(format!("tensor {dims:?} where {:?} expected", p.shape())));
        }
        let mut raw = vec![0u8; 8 * p.len()];
        r.read_exact(&mut raw)?;
        for (v, c) in p.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(c.try_into().expect("8 bytes"));
        }
    }
    Ok(model)
}
