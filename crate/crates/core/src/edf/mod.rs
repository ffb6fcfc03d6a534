//! EDF/EDF+ ingestion: PSG signal files and hypnogram annotation files.
//!
//! Only 16-bit EDF is handled. A file is parsed once into an [`EdfFile`]
//! that owns its bytes; channels and annotations are decoded on demand.

mod annotations;
mod header;
pub mod writer;

use std::path::Path;

use log::warn;
use thiserror::Error;

pub use annotations::{decode_tal_block, StageAnnotation};
pub use header::{digital_to_physical, parse_header, EdfHeader, SignalSpec, ANNOTATIONS_LABEL};

#[derive(Debug, Error)]
pub enum EdfError {
    #[error("truncated header: need {expected} bytes, got {actual}")]
    TruncatedHeader { expected: usize, actual: usize },
    #[error("malformed header field {field}: {value:?}")]
    MalformedField { field: &'static str, value: String },
    #[error("signal {label:?} has digital_min == digital_max")]
    DegenerateScale { label: String },
    #[error("no signal labelled {0:?}")]
    ChannelNotFound(String),
    #[error("{count} signals are labelled {label:?}")]
    AmbiguousChannel { label: String, count: usize },
    #[error("file ends inside data record {record} (of {expected})")]
    TruncatedRecord { record: usize, expected: usize },
    #[error("signal {0:?} requires a positive record duration")]
    ZeroRecordDuration(String),
    #[error("no \"EDF Annotations\" signal in file")]
    NotAnnotated,
    #[error("malformed TAL: {reason}")]
    MalformedTal { reason: String },
    #[error("writer: {0}")]
    Writer(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One channel in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub channel_label: String,
    pub sample_rate_hz: f64,
    pub samples: Vec<f64>,
    /// Digital samples outside `[digital_min, digital_max]` that were clamped.
    pub clamped_samples: usize,
}

impl Recording {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }
}

/// A parsed EDF file together with its raw bytes.
#[derive(Debug, Clone)]
pub struct EdfFile {
    pub header: EdfHeader,
    pub signals: Vec<SignalSpec>,
    bytes: Vec<u8>,
}

impl EdfFile {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, EdfError> {
        Self::parse(std::fs::read(path)?)
    }

    pub fn parse(bytes: Vec<u8>) -> Result<Self, EdfError> {
        let (header, signals) = parse_header(&bytes)?;
        Ok(Self { header, signals, bytes })
    }

    fn record_len(&self) -> usize {
        header::record_len_bytes(&self.signals)
    }

    /// Byte offset of signal `idx` inside a data record.
    fn signal_offset(&self, idx: usize) -> usize {
        self.signals[..idx].iter().map(|s| s.samples_per_record * 2).sum()
    }

    /// Index of the unique signal named `label`.
    pub fn signal_index(&self, label: &str) -> Result<usize, EdfError> {
        let hits: Vec<usize> = self
            .signals
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == label)
            .map(|(i, _)| i)
            .collect();
        match hits.as_slice() {
            [] => Err(EdfError::ChannelNotFound(label.to_string())),
            [i] => Ok(*i),
            _ => Err(EdfError::AmbiguousChannel {
                label: label.to_string(),
                count: hits.len(),
            }),
        }
    }

    /// Raw bytes of signal `idx` in data record `record`.
    fn record_slice(&self, idx: usize, record: usize) -> Result<&[u8], EdfError> {
        let start = self.header.header_bytes + record * self.record_len() + self.signal_offset(idx);
        let len = self.signals[idx].samples_per_record * 2;
        self.bytes.get(start..start + len).ok_or(EdfError::TruncatedRecord {
            record,
            expected: self.header.data_record_count,
        })
    }

    fn check_complete(&self) -> Result<(), EdfError> {
        let n = self.header.data_record_count;
        let needed = n
            .checked_mul(self.record_len())
            .and_then(|b| b.checked_add(self.header.header_bytes))
            .unwrap_or(usize::MAX);
        if self.bytes.len() < needed {
            let have = (self.bytes.len() - self.header.header_bytes) / self.record_len().max(1);
            return Err(EdfError::TruncatedRecord {
                record: have,
                expected: n,
            });
        }
        Ok(())
    }

    /// All digital samples of one channel, in record order.
    pub fn read_digital(&self, channel_label: &str) -> Result<Vec<i16>, EdfError> {
        let idx = self.signal_index(channel_label)?;
        self.check_complete()?;
        let n = self.header.data_record_count;
        let mut out = Vec::with_capacity(n * self.signals[idx].samples_per_record);
        for r in 0..n {
            let raw = self.record_slice(idx, r)?;
            out.extend(raw.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])));
        }
        Ok(out)
    }

    /// Concatenates every data record of `channel_label` in physical units.
    pub fn read_signal(&self, channel_label: &str) -> Result<Recording, EdfError> {
        let idx = self.signal_index(channel_label)?;
        let spec = &self.signals[idx];
        if self.header.record_duration_s <= 0.0 {
            return Err(EdfError::ZeroRecordDuration(spec.label.clone()));
        }
        if spec.digital_min >= spec.digital_max {
            return Err(EdfError::DegenerateScale {
                label: spec.label.clone(),
            });
        }
        let digital = self.read_digital(channel_label)?;
        let mut clamped = 0usize;
        let mut samples = Vec::with_capacity(digital.len());
        for d in digital {
            let d = i32::from(d);
            let c = d.clamp(spec.digital_min, spec.digital_max);
            if c != d {
                clamped += 1;
            }
            samples.push(digital_to_physical(c, spec)?);
        }
        if clamped > 0 {
            warn!("{}: clamped {clamped} out-of-range samples", spec.label);
        }
        Ok(Recording {
            channel_label: spec.label.clone(),
            sample_rate_hz: spec.samples_per_record as f64 / self.header.record_duration_s,
            samples,
            clamped_samples: clamped,
        })
    }

    /// Decodes every TAL of every annotation signal, sorted by onset.
    pub fn parse_annotations(&self) -> Result<Vec<StageAnnotation>, EdfError> {
        let idxs: Vec<usize> = (0..self.signals.len())
            .filter(|&i| self.signals[i].is_annotation())
            .collect();
        if idxs.is_empty() {
            return Err(EdfError::NotAnnotated);
        }
        self.check_complete()?;
        let mut out = Vec::new();
        for r in 0..self.header.data_record_count {
            for &i in &idxs {
                out.extend(decode_tal_block(self.record_slice(i, r)?)?);
            }
        }
        // stable: simultaneous annotations keep file order
        out.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s));
        Ok(out)
    }
}

/// Shorthand for `EdfFile::parse(bytes)?.read_signal(label)`.
pub fn read_signal(bytes: Vec<u8>, channel_label: &str) -> Result<Recording, EdfError> {
    EdfFile::parse(bytes)?.read_signal(channel_label)
}

/// Shorthand for `EdfFile::parse(bytes)?.parse_annotations()`.
pub fn parse_annotations(bytes: Vec<u8>) -> Result<Vec<StageAnnotation>, EdfError> {
    EdfFile::parse(bytes)?.parse_annotations()
}

#[cfg(test)]
mod tests {
    use super::writer::EdfWriter;
    use super::*;

    fn eeg(spr: usize) -> SignalSpec {
        SignalSpec {
            label: "EEG Fpz-Cz".into(),
            transducer: "Ag-AgCl electrodes".into(),
            physical_dim: "uV".into(),
            physical_min: -192.0,
            physical_max: 192.0,
            digital_min: -2048,
            digital_max: 2047,
            prefiltering: "HP:0.5Hz LP:100Hz".into(),
            samples_per_record: spr,
        }
    }

    #[test]
    fn concatenates_records_in_order() {
        let bytes = EdfWriter::new(1.0)
            .signal(eeg(3), vec![1, 2, 3, 4, 5, 6])
            .to_bytes()
            .unwrap();
        let f = EdfFile::parse(bytes).unwrap();
        assert_eq!(f.header.data_record_count, 2);
        assert_eq!(f.read_digital("EEG Fpz-Cz").unwrap(), vec![1, 2, 3, 4, 5, 6]);
        let rec = f.read_signal("EEG Fpz-Cz").unwrap();
        assert_eq!(rec.samples.len(), 6);
        assert_eq!(rec.sample_rate_hz, 3.0);
        assert!(rec.samples.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn interleaved_signals_are_separated() {
        let mut other = eeg(2);
        other.label = "EOG horizontal".into();
        let bytes = EdfWriter::new(30.0)
            .signal(eeg(3), vec![1, 2, 3, 4, 5, 6])
            .signal(other, vec![-1, -2, -3, -4])
            .to_bytes()
            .unwrap();
        let f = EdfFile::parse(bytes).unwrap();
        assert_eq!(f.read_digital("EOG horizontal").unwrap(), vec![-1, -2, -3, -4]);
        assert_eq!(f.read_digital("EEG Fpz-Cz").unwrap(), vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(f.read_signal("EOG horizontal").unwrap().sample_rate_hz, 2.0 / 30.0);
    }

    #[test]
    fn missing_and_duplicate_channels() {
        let bytes = EdfWriter::new(1.0)
            .signal(eeg(1), vec![0])
            .signal(eeg(1), vec![0])
            .to_bytes()
            .unwrap();
        let f = EdfFile::parse(bytes).unwrap();
        assert!(matches!(f.read_signal("EEG Pz-Oz"), Err(EdfError::ChannelNotFound(_))));
        assert!(matches!(
            f.read_signal("EEG Fpz-Cz"),
            Err(EdfError::AmbiguousChannel { count: 2, .. })
        ));
    }

    #[test]
    fn truncated_record_detected() {
        let mut bytes = EdfWriter::new(1.0)
            .signal(eeg(3), vec![1, 2, 3, 4, 5, 6])
            .to_bytes()
            .unwrap();
        bytes.truncate(bytes.len() - 1);
        let f = EdfFile::parse(bytes).unwrap();
        assert!(matches!(
            f.read_signal("EEG Fpz-Cz"),
            Err(EdfError::TruncatedRecord { record: 1, .. })
        ));
    }

    #[test]
    fn out_of_range_samples_are_clamped_and_counted() {
        let bytes = EdfWriter::new(1.0)
            .signal(eeg(3), vec![-3000, 0, 3000])
            .to_bytes()
            .unwrap();
        let rec = read_signal(bytes, "EEG Fpz-Cz").unwrap();
        assert_eq!(rec.clamped_samples, 2);
        assert_eq!(rec.samples[0], -192.0);
        assert_eq!(rec.samples[2], 192.0);
    }

    #[test]
    fn annotations_sorted_by_onset() {
        let bytes = EdfWriter::new(0.0)
            .annotations(vec![
                StageAnnotation::new(60.0, 30.0, "Sleep stage 1"),
                StageAnnotation::new(0.0, 60.0, "Sleep stage W"),
            ])
            .to_bytes()
            .unwrap();
        let f = EdfFile::parse(bytes).unwrap();
        assert!(f.header.is_edf_plus());
        let a = f.parse_annotations().unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a[0].label_text, "Sleep stage W");
        assert_eq!(a[1].onset_s, 60.0);
        assert!(matches!(
            f.read_signal(ANNOTATIONS_LABEL),
            Err(EdfError::ZeroRecordDuration(_))
        ));
    }

    #[test]
    fn plain_edf_has_no_annotations() {
        let bytes = EdfWriter::new(1.0).signal(eeg(1), vec![0]).to_bytes().unwrap();
        assert!(matches!(parse_annotations(bytes), Err(EdfError::NotAnnotated)));
    }
}
