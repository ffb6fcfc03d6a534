//! Fixed-width ASCII header of EDF/EDF+ files.
//!
//! Layout (all fields space padded, left justified):
//!
//! ```text
//! 8 version | 80 patient | 80 recording | 8 startdate | 8 starttime |
//! 8 header bytes | 44 reserved | 8 record count | 8 record duration | 4 ns
//! ```
//!
//! followed by `ns` signal headers stored field-major (all labels, then all
//! transducers, ...), 256 bytes per signal in total.

use super::EdfError;

pub(crate) const FIXED_HEADER_LEN: usize = 256;
pub(crate) const SIGNAL_HEADER_LEN: usize = 256;

/// Label of the EDF+ annotation pseudo-signal.
pub const ANNOTATIONS_LABEL: &str = "EDF Annotations";

#[derive(Debug, Clone, PartialEq)]
pub struct EdfHeader {
    pub version: String,
    pub patient_id: String,
    pub recording_id: String,
    pub start_date: String,
    pub start_time: String,
    pub header_bytes: usize,
    /// `EDF+C` / `EDF+D` for EDF+ files, blank for plain EDF.
    pub reserved: String,
    /// Number of data records. A `-1` in the file is resolved from the file size.
    pub data_record_count: usize,
    pub record_duration_s: f64,
    pub signal_count: usize,
}

impl EdfHeader {
    pub fn is_edf_plus(&self) -> bool {
        self.reserved.starts_with("EDF+")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalSpec {
    pub label: String,
    pub transducer: String,
    pub physical_dim: String,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
    pub prefiltering: String,
    pub samples_per_record: usize,
}

impl SignalSpec {
    pub fn is_annotation(&self) -> bool {
        self.label == ANNOTATIONS_LABEL
    }

    /// Maps a digital sample to physical units with the affine EDF scaling.
    pub fn digital_to_physical(&self, d: i32) -> Result<f64, EdfError> {
        digital_to_physical(d, self)
    }
}

/// Affine EDF scaling from digital to physical units.
///
/// `physical_min + (d - digital_min) * (physical_max - physical_min) / (digital_max - digital_min)`
pub fn digital_to_physical(d: i32, spec: &SignalSpec) -> Result<f64, EdfError> {
    if spec.digital_max == spec.digital_min {
        return Err(EdfError::DegenerateScale {
            label: spec.label.clone(),
        });
    }
    let span_d = f64::from(spec.digital_max) - f64::from(spec.digital_min);
    let span_p = spec.physical_max - spec.physical_min;
    Ok(spec.physical_min + (f64::from(d) - f64::from(spec.digital_min)) * span_p / span_d)
}

struct FieldReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> FieldReader<'a> {
    fn text(&mut self, name: &'static str, width: usize) -> Result<String, EdfError> {
        let raw = &self.bytes[self.pos..self.pos + width];
        self.pos += width;
        if !raw.is_ascii() {
            return Err(EdfError::MalformedField {
                field: name,
                value: String::from_utf8_lossy(raw).into_owned(),
            });
        }
        // is_ascii above makes this infallible
        let s = std::str::from_utf8(raw).expect("ascii");
        Ok(s.trim_end_matches([' ', '\0']).to_string())
    }

    fn number<T: std::str::FromStr>(&mut self, name: &'static str, width: usize) -> Result<T, EdfError> {
        let s = self.text(name, width)?;
        s.trim()
            .parse()
            .map_err(|_| EdfError::MalformedField { field: name, value: s })
    }
}

/// Parses the fixed header plus every signal header.
///
/// `bytes` may be the header alone or a whole file; when it holds a whole file
/// a record count of `-1` is resolved from its length.
pub fn parse_header(bytes: &[u8]) -> Result<(EdfHeader, Vec<SignalSpec>), EdfError> {
    if bytes.len() < FIXED_HEADER_LEN {
        return Err(EdfError::TruncatedHeader {
            expected: FIXED_HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let mut r = FieldReader { bytes, pos: 0 };
    let version = r.text("version", 8)?;
    let patient_id = r.text("patient_id", 80)?;
    let recording_id = r.text("recording_id", 80)?;
    let start_date = r.text("start_date", 8)?;
    let start_time = r.text("start_time", 8)?;
    let header_bytes: usize = r.number("header_bytes", 8)?;
    let reserved = r.text("reserved", 44)?;
    let raw_count: i64 = r.number("data_record_count", 8)?;
    let record_duration_s: f64 = r.number("record_duration", 8)?;
    let signal_count: usize = r.number("signal_count", 4)?;

    if !record_duration_s.is_finite() || record_duration_s < 0.0 {
        return Err(EdfError::MalformedField {
            field: "record_duration",
            value: record_duration_s.to_string(),
        });
    }
    let expected_len = signal_count
        .checked_add(1)
        .and_then(|n| n.checked_mul(SIGNAL_HEADER_LEN))
        .ok_or_else(|| EdfError::MalformedField {
            field: "signal_count",
            value: signal_count.to_string(),
        })?;
    if header_bytes != expected_len {
        return Err(EdfError::MalformedField {
            field: "header_bytes",
            value: header_bytes.to_string(),
        });
    }
    if bytes.len() < header_bytes {
        return Err(EdfError::TruncatedHeader {
            expected: header_bytes,
            actual: bytes.len(),
        });
    }

    let ns = signal_count;
    let mut cols: Vec<Vec<String>> = Vec::with_capacity(10);
    for (name, width) in [
        ("label", 16),
        ("transducer", 80),
        ("physical_dim", 8),
        ("physical_min", 8),
        ("physical_max", 8),
        ("digital_min", 8),
        ("digital_max", 8),
        ("prefiltering", 80),
        ("samples_per_record", 8),
        ("signal_reserved", 32),
    ] {
        let mut col = Vec::with_capacity(ns);
        for _ in 0..ns {
            col.push(r.text(name, width)?);
        }
        cols.push(col);
    }

    let parse_f = |field: &'static str, s: &str| -> Result<f64, EdfError> {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| EdfError::MalformedField {
                field,
                value: s.to_string(),
            })
    };
    let parse_i = |field: &'static str, s: &str| -> Result<i32, EdfError> {
        s.trim().parse::<i32>().map_err(|_| EdfError::MalformedField {
            field,
            value: s.to_string(),
        })
    };

    let mut signals = Vec::with_capacity(ns);
    #[allow(clippy::needless_range_loop)] // column-major header fields
    for i in 0..ns {
        let samples_per_record: usize =
            cols[8][i]
                .trim()
                .parse()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| EdfError::MalformedField {
                    field: "samples_per_record",
                    value: cols[8][i].clone(),
                })?;
        signals.push(SignalSpec {
            label: cols[0][i].clone(),
            transducer: cols[1][i].clone(),
            physical_dim: cols[2][i].clone(),
            physical_min: parse_f("physical_min", &cols[3][i])?,
            physical_max: parse_f("physical_max", &cols[4][i])?,
            digital_min: parse_i("digital_min", &cols[5][i])?,
            digital_max: parse_i("digital_max", &cols[6][i])?,
            prefiltering: cols[7][i].clone(),
            samples_per_record,
        });
    }

    let record_bytes = record_len_bytes(&signals);
    let data_record_count = match raw_count {
        -1 => (bytes.len() - header_bytes).checked_div(record_bytes).unwrap_or(0),
        n if n >= 0 => n as usize,
        n => {
            return Err(EdfError::MalformedField {
                field: "data_record_count",
                value: n.to_string(),
            })
        }
    };

    Ok((
        EdfHeader {
            version,
            patient_id,
            recording_id,
            start_date,
            start_time,
            header_bytes,
            reserved,
            data_record_count,
            record_duration_s,
            signal_count,
        },
        signals,
    ))
}

/// Bytes per data record (two bytes per sample across all signals).
pub(crate) fn record_len_bytes(signals: &[SignalSpec]) -> usize {
    signals.iter().map(|s| s.samples_per_record * 2).sum()
}
