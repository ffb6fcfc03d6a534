//! Length-prefixed binary frames.
//!
//! ```text
//! u8 type | u32 LE payload length | payload
//! HELLO 0x01  u32 sample_rate_hz, u16 calib_epochs, u8 name_len, name
//! DATA  0x02  u32 n, n x f32 samples
//! STAGE 0x03  u32 epoch_index, u8 stage, f32 confidence, 5 x f32 probabilities
//! BYE   0x04  (empty)
//! ```
//! All integers and floats are little-endian.

use std::io::{self, Read, Write};

use super::StreamError;

pub const HELLO: u8 = 0x01;
pub const DATA: u8 = 0x02;
pub const STAGE: u8 = 0x03;
pub const BYE: u8 = 0x04;

pub const FRAME_HEADER_LEN: usize = 5;
pub const STAGE_PAYLOAD_LEN: usize = 4 + 1 + 4 + 5 * 4;
/// Largest accepted payload (4 Mi samples in one DATA frame).
pub const MAX_PAYLOAD: u32 = 16 << 20;
/// `calib_epochs` value asking the server to use its configured default.
pub const CALIB_SERVER_DEFAULT: u16 = u16::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct Hello {
    pub sample_rate_hz: u32,
    pub calib_epochs: u16,
    pub device_name: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageFrame {
    pub epoch_index: u32,
    pub stage: u8,
    pub confidence: f32,
    pub probabilities: [f32; 5],
}

#[derive(Debug, Clone, PartialEq)]
pub enum Frame {
    Hello(Hello),
    Data(Vec<f32>),
    Stage(StageFrame),
    Bye,
}

impl Frame {
    pub fn type_byte(&self) -> u8 {
        match self {
            Frame::Hello(_) => HELLO,
            Frame::Data(_) => DATA,
            Frame::Stage(_) => STAGE,
            Frame::Bye => BYE,
        }
    }
}

fn malformed(m: impl Into<String>) -> StreamError {
    StreamError::MalformedPayload(m.into())
}

pub fn encode_frame(frame: &Frame) -> Result<Vec<u8>, StreamError> {
    let mut p = Vec::new();
    match frame {
        Frame::Hello(h) => {
            let name = h.device_name.as_bytes();
            let len = u8::try_from(name.len()).map_err(|_| malformed("device name longer than 255 bytes"))?;
            p.extend_from_slice(&h.sample_rate_hz.to_le_bytes());
            p.extend_from_slice(&h.calib_epochs.to_le_bytes());
            p.push(len);
            p.extend_from_slice(name);
        }
        Frame::Data(samples) => {
            p.reserve(4 + 4 * samples.len());
            p.extend_from_slice(&(samples.len() as u32).to_le_bytes());
            for s in samples {
                p.extend_from_slice(&s.to_le_bytes());
            }
        }
        Frame::Stage(s) => {
            p.extend_from_slice(&s.epoch_index.to_le_bytes());
            p.push(s.stage);
            p.extend_from_slice(&s.confidence.to_le_bytes());
            for v in s.probabilities {
                p.extend_from_slice(&v.to_le_bytes());
            }
        }
        Frame::Bye => {}
    }
    if p.len() > MAX_PAYLOAD as usize {
        return Err(StreamError::FrameTooLarge(p.len() as u64));
    }
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + p.len());
    out.push(frame.type_byte());
    out.extend_from_slice(&(p.len() as u32).to_le_bytes());
    out.extend_from_slice(&p);
    Ok(out)
}

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes(b[..4].try_into().expect("4 bytes"))
}

fn le_f32(b: &[u8]) -> f32 {
    f32::from_le_bytes(b[..4].try_into().expect("4 bytes"))
}

/// Decodes the payload of a frame whose header has already been read.
pub fn decode_payload(kind: u8, p: &[u8]) -> Result<Frame, StreamError> {
    match kind {
        HELLO => {
            if p.len() < 7 {
                return Err(malformed("HELLO shorter than 7 bytes"));
            }
            let name_len = p[6] as usize;
            if p.len() != 7 + name_len {
                return Err(malformed(format!(
                    "HELLO name length {name_len} disagrees with payload {}",
                    p.len()
                )));
            }
            let device_name = std::str::from_utf8(&p[7..])
                .map_err(|_| malformed("device name is not UTF-8"))?
                .to_string();
            Ok(Frame::Hello(Hello {
                sample_rate_hz: le_u32(p),
                calib_epochs: u16::from_le_bytes([p[4], p[5]]),
                device_name,
            }))
        }
        DATA => {
            if p.len() < 4 {
                return Err(malformed("DATA shorter than 4 bytes"));
            }
            let n = le_u32(p) as usize;
            if (p.len() - 4) / 4 != n || !(p.len() - 4).is_multiple_of(4) {
                return Err(malformed(format!(
                    "DATA announces {n} samples in {} bytes",
                    p.len() - 4
                )));
            }
            Ok(Frame::Data(p[4..].chunks_exact(4).map(le_f32).collect()))
        }
        STAGE => {
            if p.len() != STAGE_PAYLOAD_LEN {
                return Err(malformed(format!(
                    "STAGE payload is {} bytes, expected {STAGE_PAYLOAD_LEN}",
                    p.len()
                )));
            }
            let mut probabilities = [0.0; 5];
            for (i, v) in probabilities.iter_mut().enumerate() {
                *v = le_f32(&p[9 + 4 * i..]);
            }
            Ok(Frame::Stage(StageFrame {
                epoch_index: le_u32(p),
                stage: p[4],
                confidence: le_f32(&p[5..]),
                probabilities,
            }))
        }
        BYE => {
            if !p.is_empty() {
                return Err(malformed("BYE carries a payload"));
            }
            Ok(Frame::Bye)
        }
        other => Err(StreamError::UnknownFrameType(other)),
    }
}

/// Decodes one frame from the front of `bytes`; returns it with the number of
/// bytes consumed.
pub fn decode_frame(bytes: &[u8]) -> Result<(Frame, usize), StreamError> {
    if bytes.len() < FRAME_HEADER_LEN {
        return Err(StreamError::TruncatedFrame);
    }
    let kind = bytes[0];
    if !(HELLO..=BYE).contains(&kind) {
        return Err(StreamError::UnknownFrameType(kind));
    }
    let len = le_u32(&bytes[1..]);
    if len > MAX_PAYLOAD {
        return Err(StreamError::FrameTooLarge(len as u64));
    }
    let end = FRAME_HEADER_LEN + len as usize;
    if bytes.len() < end {
        return Err(StreamError::TruncatedFrame);
    }
    Ok((decode_payload(kind, &bytes[FRAME_HEADER_LEN..end])?, end))
}

/// Reads one frame; `Ok(None)` on a clean end of stream at a frame boundary.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Frame>, StreamError> {
    let mut header = [0u8; FRAME_HEADER_LEN];
    let mut got = 0;
    while got < FRAME_HEADER_LEN {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(StreamError::TruncatedFrame),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let kind = header[0];
    if !(HELLO..=BYE).contains(&kind) {
        return Err(StreamError::UnknownFrameType(kind));
    }
    let len = le_u32(&header[1..]);
    if len > MAX_PAYLOAD {
        return Err(StreamError::FrameTooLarge(len as u64));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => StreamError::TruncatedFrame,
        _ => e.into(),
    })?;
    decode_payload(kind, &payload).map(Some)
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> Result<(), StreamError> {
    w.write_all(&encode_frame(frame)?)?;
    Ok(())
}
