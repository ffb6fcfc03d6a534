//! "EPD1" epoch dataset files.
//!
//! ```text
//! "EPD1" | u32 epoch count | u32 samples per epoch
//! per epoch: u8 label | u32 night id | samples x f32
//! ```
//!
//! All integers and floats little-endian. Epoch indices are not stored; on
//! load they restart at 0 for each night in file order.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{LabeledEpoch, NightId, StageLabel};
use crate::EPOCH_SAMPLES;

pub const EPD_MAGIC: &[u8; 4] = b"EPD1";

#[derive(Debug, thiserror::Error)]
pub enum EpdError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("file truncated: {0}")]
    Truncated(&'static str),
    #[error("unsupported samples per epoch {0}")]
    EpochLength(u32),
    #[error("epoch {index}: label code {code} out of range")]
    BadLabel { index: usize, code: u8 },
    #[error("epoch {0}: non-finite sample")]
    NonFinite(usize),
    #[error("{0} trailing bytes after last epoch")]
    TrailingBytes(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn encode_epd(epochs: &[LabeledEpoch]) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + epochs.len() * (5 + 4 * EPOCH_SAMPLES));
    out.extend_from_slice(EPD_MAGIC);
    out.extend_from_slice(&(epochs.len() as u32).to_le_bytes());
    out.extend_from_slice(&(EPOCH_SAMPLES as u32).to_le_bytes());
    for e in epochs {
        out.push(e.label.code());
        out.extend_from_slice(&e.source_night.0.to_le_bytes());
        for &s in &e.samples {
            out.extend_from_slice(&(s as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_epd(bytes: &[u8]) -> Result<Vec<LabeledEpoch>, EpdError> {
    if bytes.len() < 12 {
        return Err(EpdError::Truncated("header"));
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if &magic != EPD_MAGIC {
        return Err(EpdError::BadMagic(magic));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let spe = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if spe as usize != EPOCH_SAMPLES {
        return Err(EpdError::EpochLength(spe));
    }
    let stride = 5 + 4 * EPOCH_SAMPLES;
    let body = &bytes[12..];
    let needed = count.checked_mul(stride).ok_or(EpdError::Truncated("epoch count"))?;
    if body.len() < needed {
        return Err(EpdError::Truncated("epochs"));
    }
    if body.len() > needed {
        return Err(EpdError::TrailingBytes(body.len() - needed));
    }
    let mut per_night: HashMap<u32, u32> = HashMap::new();
    let mut out = Vec::with_capacity(count);
    for (index, chunk) in body.chunks_exact(stride).enumerate() {
        let code = chunk[0];
        let label = StageLabel::from_code(code).ok_or(EpdError::BadLabel { index, code })?;
        let night = u32::from_le_bytes(chunk[1..5].try_into().expect("4 bytes"));
        let mut samples = Vec::with_capacity(EPOCH_SAMPLES);
        for c in chunk[5..].chunks_exact(4) {
            let v = f32::from_le_bytes(c.try_into().expect("4 bytes"));
            if !v.is_finite() {
                return Err(EpdError::NonFinite(index));
            }
            samples.push(f64::from(v));
        }
        let slot = per_night.entry(night).or_insert(0);
        out.push(LabeledEpoch {
            samples,
            label,
            source_night: NightId(night),
            epoch_index: *slot,
        });
        *slot += 1;
    }
    Ok(out)
}

pub fn write_epd(path: impl AsRef<Path>, epochs: &[LabeledEpoch]) -> Result<(), EpdError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&encode_epd(epochs))?;
    f.flush()?;
    Ok(())
}

pub fn read_epd(path: impl AsRef<Path>) -> Result<Vec<LabeledEpoch>, EpdError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_epd(&bytes)
}
