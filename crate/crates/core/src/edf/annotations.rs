//! EDF+ time-stamped annotation lists (TALs).
//!
//! Each TAL is `[+-]onset[\x15duration]\x14text\x14[text\x14...]\x00`. An
//! annotation record is a run of TALs padded with `\x00`. The first TAL of a
//! record has an empty text and only keeps time.

use super::EdfError;

const DURATION_SEP: u8 = 0x15;
const TEXT_SEP: u8 = 0x14;
const TAL_END: u8 = 0x00;

#[derive(Debug, Clone, PartialEq)]
pub struct StageAnnotation {
    pub onset_s: f64,
    pub duration_s: f64,
    pub label_text: String,
}

impl StageAnnotation {
    pub fn new(onset_s: f64, duration_s: f64, label_text: impl Into<String>) -> Self {
        Self {
            onset_s,
            duration_s,
            label_text: label_text.into(),
        }
    }

    /// Hypnogram entries span whole 30 s scoring epochs.
    pub fn is_epoch_aligned(&self) -> bool {
        let epochs = self.duration_s / 30.0;
        (epochs - epochs.round()).abs() < 1e-9
    }
}

/// Decodes every TAL in one annotation record. Time-keeping TALs (no text)
/// produce no annotations.
pub fn decode_tal_block(block: &[u8]) -> Result<Vec<StageAnnotation>, EdfError> {
    let mut out = Vec::new();
    let mut rest = block;
    // skip padding between / after TALs
    while let Some(start) = rest.iter().position(|&b| b != TAL_END) {
        rest = &rest[start..];
        let end = rest
            .iter()
            .position(|&b| b == TAL_END)
            .ok_or_else(|| EdfError::MalformedTal {
                reason: "TAL without terminating NUL".into(),
            })?;
        decode_tal(&rest[..end], &mut out)?;
        rest = &rest[end + 1..];
    }
    Ok(out)
}

fn decode_tal(tal: &[u8], out: &mut Vec<StageAnnotation>) -> Result<(), EdfError> {
    if tal.last() != Some(&TEXT_SEP) {
        return Err(EdfError::MalformedTal {
            reason: "TAL does not end with 0x14".into(),
        });
    }
    let head_end = tal.iter().position(|&b| b == TEXT_SEP).expect("checked above");
    if head_end + 1 == tal.len() {
        return Err(EdfError::MalformedTal {
            reason: "TAL has a time stamp but no annotation list".into(),
        });
    }
    let head = &tal[..head_end];
    let (onset_raw, duration_raw) = match head.iter().position(|&b| b == DURATION_SEP) {
        Some(p) => (&head[..p], Some(&head[p + 1..])),
        None => (head, None),
    };

    let onset_s = parse_time(onset_raw, true)?;
    if onset_s < 0.0 {
        return Err(EdfError::MalformedTal {
            reason: format!("negative onset {onset_s}"),
        });
    }
    let duration_s = match duration_raw {
        Some(d) => parse_time(d, false)?,
        None => 0.0,
    };

    // texts between the separators; the final empty piece is the terminator
    let texts = &tal[head_end + 1..tal.len() - 1];
    if texts.is_empty() {
        return Ok(());
    }
    for text in texts.split(|&b| b == TEXT_SEP) {
        if text.is_empty() {
            continue;
        }
        let label_text = String::from_utf8(text.to_vec()).map_err(|_| EdfError::MalformedTal {
            reason: "annotation text is not UTF-8".into(),
        })?;
        out.push(StageAnnotation {
            onset_s,
            duration_s,
            label_text,
        });
    }
    Ok(())
}

fn parse_time(raw: &[u8], signed: bool) -> Result<f64, EdfError> {
    let s = std::str::from_utf8(raw).map_err(|_| EdfError::MalformedTal {
        reason: "non-ASCII time field".into(),
    })?;
    let bad = || EdfError::MalformedTal {
        reason: format!("bad time field {s:?}"),
    };
    let digits = if signed {
        match s.as_bytes().first() {
            Some(b'+') | Some(b'-') => &s[1..],
            _ => return Err(bad()),
        }
    } else {
        s
    };
    // digits with at most one '.', nothing else (no exponents, no spaces)
    if digits.is_empty()
        || !digits.bytes().all(|b| b.is_ascii_digit() || b == b'.')
        || digits.bytes().filter(|&b| b == b'.').count() > 1
    {
        return Err(bad());
    }
    let v: f64 = digits.parse().map_err(|_| bad())?;
    if !v.is_finite() {
        return Err(bad());
    }
    Ok(if s.starts_with('-') { -v } else { v })
}
