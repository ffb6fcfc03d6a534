//! Minimal EDF/EDF+ writer.
//!
//! Exists to produce fixtures and synthetic recordings; it writes exactly what
//! the parser reads and nothing more (no EDF+D, no sub-second onsets beyond
//! what `f64` formatting gives).

use super::header::{SignalSpec, ANNOTATIONS_LABEL, FIXED_HEADER_LEN, SIGNAL_HEADER_LEN};
use super::{EdfError, StageAnnotation};

#[derive(Debug, Clone)]
pub struct EdfWriter {
    pub patient_id: String,
    pub recording_id: String,
    pub start_date: String,
    pub start_time: String,
    record_duration_s: f64,
    signals: Vec<(SignalSpec, Vec<i16>)>,
    annotations: Option<Vec<StageAnnotation>>,
}

impl EdfWriter {
    pub fn new(record_duration_s: f64) -> Self {
        Self {
            patient_id: "X X X X".into(),
            recording_id: "Startdate X X X X".into(),
            start_date: "01.01.89".into(),
            start_time: "00.00.00".into(),
            record_duration_s,
            signals: Vec::new(),
            annotations: None,
        }
    }

    /// Adds an ordinary signal. `digital.len()` must be a multiple of
    /// `spec.samples_per_record` and agree with every other signal on the
    /// number of records.
    pub fn signal(mut self, spec: SignalSpec, digital: Vec<i16>) -> Self {
        self.signals.push((spec, digital));
        self
    }

    /// Adds an EDF+ annotation signal holding `annotations`. The file becomes
    /// EDF+C. Without ordinary signals the annotations go into a single record.
    pub fn annotations(mut self, annotations: Vec<StageAnnotation>) -> Self {
        self.annotations = Some(annotations);
        self
    }

    fn record_count(&self) -> Result<usize, EdfError> {
        let mut count = None;
        for (spec, data) in &self.signals {
            if spec.samples_per_record == 0 || data.len() % spec.samples_per_record != 0 {
                return Err(EdfError::Writer(format!(
                    "signal {:?}: {} samples is not a whole number of records",
                    spec.label,
                    data.len()
                )));
            }
            let n = data.len() / spec.samples_per_record;
            match count {
                None => count = Some(n),
                Some(c) if c != n => return Err(EdfError::Writer("signals disagree on record count".into())),
                _ => {}
            }
        }
        Ok(count.unwrap_or(1))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, EdfError> {
        let records = self.record_count()?;

        // TAL blocks per record: the first record carries every annotation
        let annotation_blocks: Option<Vec<Vec<u8>>> = self.annotations.as_ref().map(|list| {
            (0..records)
                .map(|r| {
                    let onset = r as f64 * self.record_duration_s;
                    let mut block = format!("+{}\x14\x14\x00", fmt_num(onset)).into_bytes();
                    if r == 0 {
                        for a in list {
                            block.extend_from_slice(&encode_tal(a));
                        }
                    }
                    block
                })
                .collect()
        });
        let mut specs: Vec<SignalSpec> = self.signals.iter().map(|(s, _)| s.clone()).collect();
        if let Some(blocks) = &annotation_blocks {
            let longest = blocks.iter().map(Vec::len).max().unwrap_or(0);
            specs.push(SignalSpec {
                label: ANNOTATIONS_LABEL.into(),
                transducer: String::new(),
                physical_dim: String::new(),
                physical_min: -1.0,
                physical_max: 1.0,
                digital_min: -32768,
                digital_max: 32767,
                prefiltering: String::new(),
                samples_per_record: longest.div_ceil(2).max(1),
            });
        }

        let ns = specs.len();
        let header_bytes = FIXED_HEADER_LEN + SIGNAL_HEADER_LEN * ns;
        let mut out = Vec::with_capacity(header_bytes);
        push_field(&mut out, "0", 8)?;
        push_field(&mut out, &self.patient_id, 80)?;
        push_field(&mut out, &self.recording_id, 80)?;
        push_field(&mut out, &self.start_date, 8)?;
        push_field(&mut out, &self.start_time, 8)?;
        push_field(&mut out, &header_bytes.to_string(), 8)?;
        push_field(&mut out, if self.annotations.is_some() { "EDF+C" } else { "" }, 44)?;
        push_field(&mut out, &records.to_string(), 8)?;
        push_field(&mut out, &fmt_num(self.record_duration_s), 8)?;
        push_field(&mut out, &ns.to_string(), 4)?;

        for s in &specs {
            push_field(&mut out, &s.label, 16)?;
        }
        for s in &specs {
            push_field(&mut out, &s.transducer, 80)?;
        }
        for s in &specs {
            push_field(&mut out, &s.physical_dim, 8)?;
        }
        for s in &specs {
            push_field(&mut out, &fmt_num(s.physical_min), 8)?;
        }
        for s in &specs {
            push_field(&mut out, &fmt_num(s.physical_max), 8)?;
        }
        for s in &specs {
            push_field(&mut out, &s.digital_min.to_string(), 8)?;
        }
        for s in &specs {
            push_field(&mut out, &s.digital_max.to_string(), 8)?;
        }
        for s in &specs {
            push_field(&mut out, &s.prefiltering, 80)?;
        }
        for s in &specs {
            push_field(&mut out, &s.samples_per_record.to_string(), 8)?;
        }
        for _ in &specs {
            push_field(&mut out, "", 32)?;
        }
        debug_assert_eq!(out.len(), header_bytes);

        for r in 0..records {
            for (spec, data) in &self.signals {
                let n = spec.samples_per_record;
                for &d in &data[r * n..(r + 1) * n] {
                    out.extend_from_slice(&d.to_le_bytes());
                }
            }
            if let (Some(blocks), Some(spec)) = (&annotation_blocks, specs.last()) {
                let mut block = blocks[r].clone();
                block.resize(spec.samples_per_record * 2, 0);
                out.extend_from_slice(&block);
            }
        }
        Ok(out)
    }
}

/// Encodes one annotation as a TAL: `+onset\x15duration\x14text\x14\x00`.
pub fn encode_tal(a: &StageAnnotation) -> Vec<u8> {
    let sign = if a.onset_s < 0.0 { "-" } else { "+" };
    format!(
        "{sign}{}\x15{}\x14{}\x14\x00",
        fmt_num(a.onset_s.abs()),
        fmt_num(a.duration_s),
        a.label_text
    )
    .into_bytes()
}

/// Shortest decimal form that round-trips for the values fixtures use.
fn fmt_num(v: f64) -> String {
    let s = format!("{v}");
    if s.len() <= 8 {
        return s;
    }
    // drop fractional digits until the field fits
    for prec in (0..8).rev() {
        let t = format!("{v:.prec$}");
        if t.len() <= 8 {
            return t;
        }
    }
    s
}

fn push_field(out: &mut Vec<u8>, value: &str, width: usize) -> Result<(), EdfError> {
    if !value.is_ascii() || value.len() > width {
        return Err(EdfError::Writer(format!(
            "field {value:?} does not fit {width} ASCII bytes"
        )));
    }
    out.extend_from_slice(value.as_bytes());
    out.extend(std::iter::repeat_n(b' ', width - value.len()));
    Ok(())
}
