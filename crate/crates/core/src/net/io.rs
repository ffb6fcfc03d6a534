//! `SSW1` weight files.
//!
//! ```text
//! "SSW1"
//! u32 LE config length, UTF-8 JSON config
//! u32 LE tensor count
//! per tensor: u16 LE name length, name, u8 ndim, ndim x u32 LE dims,
//!             row-major f32 LE data
//! ```

use std::path::Path;

use super::{ModelConfig, ModelWeights, NetError, Tensor};

pub const SSW_MAGIC: &[u8; 4] = b"SSW1";

pub fn encode_ssw(w: &ModelWeights) -> Vec<u8> {
    let config = serde_json::to_vec(&w.config).expect("config serializes");
    let mut out = Vec::with_capacity(16 + config.len() + 4 * w.tensors.iter().map(|(_, t)| t.len() + 8).sum::<usize>());
    out.extend_from_slice(SSW_MAGIC);
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&(w.tensors.len() as u32).to_le_bytes());
    for (name, t) in &w.tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], NetError> {
        if self.bytes.len() < n {
            return Err(NetError::TruncatedFile(what));
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, NetError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

/// Parses and validates an `SSW1` image against the config it carries.
pub fn decode_ssw(bytes: &[u8]) -> Result<ModelWeights, NetError> {
    let mut c = Cursor { bytes };
    if c.take(4, "magic").map_err(|_| NetError::BadMagic)? != SSW_MAGIC {
        return Err(NetError::BadMagic);
    }
    let clen = c.u32("config length")? as usize;
    let config: ModelConfig = serde_json::from_slice(c.take(clen, "config")?)?;
    config.validate()?;
    let count = c.u32("tensor count")? as usize;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let nlen = u16::from_le_bytes(c.take(2, "name length")?.try_into().expect("2 bytes")) as usize;
        let name = String::from_utf8(c.take(nlen, "name")?.to_vec())
            .map_err(|_| NetError::ShapeMismatchWithConfig("tensor name is not UTF-8".into()))?;
        let ndim = c.take(1, "ndim")?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(c.u32("dims")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or(NetError::TruncatedFile("data"))?;
        let data = c
            .take(n, "data")?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        tensors.push((name, Tensor::new(shape, data)?));
    }
    if !c.bytes.is_empty() {
        return Err(NetError::TrailingBytes(c.bytes.len()));
    }
    let w = ModelWeights { config, tensors };
    w.check()?;
    Ok(w)
}

pub fn save_weights(w: &ModelWeights, path: impl AsRef<Path>) -> Result<(), NetError> {
    std::fs::write(path, encode_ssw(w))?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<ModelWeights, NetError> {
    decode_ssw(&std::fs::read(path)?)
}
