//! Scoring of predicted hypnograms against reference ones.
//!
//! Averages are accumulated as exact rationals and rounded once, so the
//! identities `micro = accuracy` and `weighted recall = accuracy` hold
//! bit-for-bit in the reported `f64` values.

use std::fmt;
use std::io::{Read, Write};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::StageLabel;
use crate::EPOCH_SECONDS;

pub const N_CLASSES: usize = 5;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: {truth} reference labels, {predicted} predictions")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("label {0} out of range 0..4")]
    LabelOutOfRange(u8),
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("malformed CSV: {0}")]
    Malformed(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Rows are the reference stage, columns the predicted stage.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; N_CLASSES]; N_CLASSES],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn diagonal(&self) -> u64 {
        (0..N_CLASSES).map(|c| self.counts[c][c]).sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }

    pub fn add(&mut self, truth: StageLabel, predicted: StageLabel) {
        self.counts[truth as usize][predicted as usize] += 1;
    }

    /// Relabels classes: class `c` becomes `perm[c]` on both axes.
    pub fn permuted(&self, perm: &[usize; N_CLASSES]) -> Self {
        let mut out = Self::default();
        for t in 0..N_CLASSES {
            for p in 0..N_CLASSES {
                out.counts[perm[t]][perm[p]] = self.counts[t][p];
            }
        }
        out
    }

    /// 5x5 CSV with a header row and a header column of stage names.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), MetricsError> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["true\\predicted".to_string()];
        header.extend(StageLabel::ALL.iter().map(|s| s.name().to_string()));
        wr.write_record(&header)?;
        for (s, row) in StageLabel::ALL.iter().zip(&self.counts) {
            let mut rec = vec![s.name().to_string()];
            rec.extend(row.iter().map(u64::to_string));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Counts `(truth, predicted)` pairs given as class codes.
pub fn confusion(truth: &[u8], predicted: &[u8]) -> Result<ConfusionMatrix, MetricsError> {
    if truth.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch {
            truth: truth.len(),
            predicted: predicted.len(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (&t, &p) in truth.iter().zip(predicted) {
        for v in [t, p] {
            if v as usize >= N_CLASSES {
                return Err(MetricsError::LabelOutOfRange(v));
            }
        }
        cm.counts[t as usize][p as usize] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// A zero denominator forced precision or recall to 0.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub classes: Vec<ClassScores>,
    pub micro: AverageScores,
    pub macro_avg: AverageScores,
    pub weighted: AverageScores,
    pub accuracy: f64,
    pub kappa: f64,
}

fn ratio(n: u64, d: u64) -> BigRational {
    if d == 0 {
        BigRational::zero()
    } else {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }
}

fn harmonic(p: &BigRational, r: &BigRational) -> BigRational {
    let s = p + r;
    if s.is_zero() {
        BigRational::zero()
    } else {
        BigRational::from_integer(BigInt::from(2)) * p * r / s
    }
}

fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().expect("bounded ratio")
}

pub fn report(cm: &ConfusionMatrix) -> Result<ClassificationReport, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let mut exact = Vec::with_capacity(N_CLASSES);
    let mut classes = Vec::with_capacity(N_CLASSES);
    for c in 0..N_CLASSES {
        let (d, col, row) = (cm.counts[c][c], cm.col_sum(c), cm.row_sum(c));
        let p = ratio(d, col);
        let r = ratio(d, row);
        let f = harmonic(&p, &r);
        classes.push(ClassScores {
            precision: to_f64(&p),
            recall: to_f64(&r),
            f1: to_f64(&f),
            support: row,
            degenerate: col == 0 || row == 0,
        });
        exact.push((p, r, f, row));
    }

    let n = BigRational::from_integer(BigInt::from(N_CLASSES));
    let t = BigRational::from_integer(BigInt::from(total));
    let (mut mp, mut mr, mut mf) = (BigRational::zero(), BigRational::zero(), BigRational::zero());
    let (mut wp, mut wr, mut wf) = (BigRational::zero(), BigRational::zero(), BigRational::zero());
    for (p, r, f, s) in &exact {
        mp += p;
        mr += r;
        mf += f;
        let w = BigRational::from_integer(BigInt::from(*s));
        wp += &w * p;
        wr += &w * r;
        wf += &w * f;
    }

    // pooled counts: every false positive of one class is a false negative
    // of another, so all three micro scores reduce to diag / total
    let accuracy = ratio(cm.diagonal(), total);
    let acc = to_f64(&accuracy);
    Ok(ClassificationReport {
        classes,
        micro: AverageScores {
            precision: acc,
            recall: acc,
            f1: to_f64(&harmonic(&accuracy, &accuracy)),
            support: total,
        },
        macro_avg: AverageScores {
            precision: to_f64(&(mp / &n)),
            recall: to_f64(&(mr / &n)),
            f1: to_f64(&(mf / &n)),
            support: total,
        },
        weighted: AverageScores {
            precision: to_f64(&(wp / &t)),
            recall: to_f64(&(wr / &t)),
            f1: to_f64(&(wf / &t)),
            support: total,
        },
        accuracy: acc,
        kappa: kappa(cm)?,
    })
}

/// Cohen's kappa from row and column marginals; 0 when chance agreement is 1.
pub fn kappa(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let total = cm.total() as i128;
    if total == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    // kappa = (T*diag - sum r_c c_c) / (T^2 - sum r_c c_c), all integers
    let chance: i128 = (0..N_CLASSES)
        .map(|c| cm.row_sum(c) as i128 * cm.col_sum(c) as i128)
        .sum();
    let den = total * total - chance;
    if den == 0 {
        return Ok(0.0);
    }
    let num = total * cm.diagonal() as i128 - chance;
    Ok(BigRational::new(BigInt::from(num), BigInt::from(den))
        .to_f64()
        .expect("bounded ratio"))
}

impl ClassificationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Text layout of a classification report, four decimal places.
impl fmt::Display for ClassificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>14} {:>10} {:>10} {:>10} {:>10}",
            "", "precision", "recall", "f1-score", "support"
        )?;
        writeln!(f)?;
        for (s, c) in StageLabel::ALL.iter().zip(&self.classes) {
            let mark = if c.degenerate { " *" } else { "" };
            writeln!(
                f,
                "{:>14} {:>10.4} {:>10.4} {:>10.4} {:>10}{mark}",
                s.name(),
                c.precision,
                c.recall,
                c.f1,
                c.support
            )?;
        }
        writeln!(f)?;
        for (name, a) in [
            ("micro avg", &self.micro),
            ("macro avg", &self.macro_avg),
            ("weighted avg", &self.weighted),
        ] {
            writeln!(
                f,
                "{:>14} {:>10.4} {:>10.4} {:>10.4} {:>10}",
                name, a.precision, a.recall, a.f1, a.support
            )?;
        }
        writeln!(f)?;
        writeln!(f, "{:>14} {:>10.4}", "accuracy", self.accuracy)?;
        writeln!(f, "{:>14} {:>10.4}", "kappa", self.kappa)?;
        if self.classes.iter().any(|c| c.degenerate) {
            writeln!(f, "* zero denominator; score reported as 0")?;
        }
        Ok(())
    }
}

/// One scored epoch of a hypnogram. `true_stage` is empty when no reference
/// exists (live sessions).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypnogramRow {
    pub epoch_index: u32,
    pub time_s: f64,
    #[serde(with = "stage_name_opt")]
    pub true_stage: Option<StageLabel>,
    #[serde(with = "stage_name")]
    pub predicted_stage: StageLabel,
    pub confidence: f64,
}

impl HypnogramRow {
    pub fn new(epoch_index: u32, true_stage: Option<StageLabel>, predicted_stage: StageLabel, confidence: f64) -> Self {
        Self {
            epoch_index,
            time_s: epoch_index as f64 * EPOCH_SECONDS,
            true_stage,
            predicted_stage,
            confidence,
        }
    }
}

pub fn stage_from_name(name: &str) -> Option<StageLabel> {
    StageLabel::ALL.iter().copied().find(|s| s.name() == name)
}

mod stage_name {
    use super::*;
    use serde::{de::Error, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: &StageLabel, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(s.name())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<StageLabel, D::Error> {
        let s = String::deserialize(de)?;
        stage_from_name(&s).ok_or_else(|| D::Error::custom(format!("unknown stage {s:?}")))
    }
}

mod stage_name_opt {
    use super::*;
    use serde::{de::Error, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: &Option<StageLabel>, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(s.map_or("", StageLabel::name))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Option<StageLabel>, D::Error> {
        let s = String::deserialize(de)?;
        if s.is_empty() {
            return Ok(None);
        }
        stage_from_name(&s)
            .map(Some)
            .ok_or_else(|| D::Error::custom(format!("unknown stage {s:?}")))
    }
}

/// Builds hypnogram rows from reference labels, predictions and the
/// confidence of each prediction.
pub fn hypnogram_rows(
    truth: &[StageLabel],
    predicted: &[StageLabel],
    confidence: &[f64],
) -> Result<Vec<HypnogramRow>, MetricsError> {
    if truth.len() != predicted.len() || confidence.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch {
            truth: truth.len(),
            predicted: predicted.len().min(confidence.len()),
        });
    }
    Ok(truth
        .iter()
        .zip(predicted)
        .zip(confidence)
        .enumerate()
        .map(|(i, ((&t, &p), &c))| HypnogramRow::new(i as u32, Some(t), p, c))
        .collect())
}

pub fn write_hypnogram<W: Write>(rows: &[HypnogramRow], w: W) -> Result<(), MetricsError> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    if rows.is_empty() {
        wr.write_record(["epoch_index", "time_s", "true_stage", "predicted_stage", "confidence"])?;
    }
    wr.flush()?;
    Ok(())
}

/// Writes `epoch_index,time_s,true_stage,predicted_stage,confidence`.
pub fn hypnogram_export(
    truth: &[StageLabel],
    predicted: &[StageLabel],
    confidence: &[f64],
    path: impl AsRef<std::path::Path>,
) -> Result<(), MetricsError> {
    let rows = hypnogram_rows(truth, predicted, confidence)?;
    write_hypnogram(&rows, std::io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn read_hypnogram<R: Read>(r: R) -> Result<Vec<HypnogramRow>, MetricsError> {
    let mut rd = csv::Reader::from_reader(r);
    let rows = rd.deserialize().collect::<Result<Vec<HypnogramRow>, _>>()?;
    // indices may skip (trimmed or dropped epochs) but never repeat or go back
    for (i, row) in rows.iter().enumerate() {
        if i > 0 && row.epoch_index <= rows[i - 1].epoch_index {
            return Err(MetricsError::Malformed(format!(
                "row {i}: epoch_index {} out of order",
                row.epoch_index
            )));
        }
        if row.time_s != crate::EPOCH_SECONDS * f64::from(row.epoch_index) {
            return Err(MetricsError::Malformed(format!(
                "row {i}: time_s {} for epoch {}",
                row.time_s, row.epoch_index
            )));
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use StageLabel::*;

    fn two_class(a: [[u64; 2]; 2]) -> ConfusionMatrix {
        let mut cm = ConfusionMatrix::default();
        for (row, src) in cm.counts.iter_mut().zip(a) {
            row[..2].copy_from_slice(&src);
        }
        cm
    }

    #[test]
    fn confusion_examples() {
        let l = [0, 1, 2, 3, 4, 2];
        let cm = confusion(&l, &l).unwrap();
        for t in 0..5 {
            for p in 0..5 {
                assert_eq!(cm.counts[t][p] > 0, t == p);
            }
        }
        let one = confusion(&[2], &[4]).unwrap();
        assert_eq!(one.counts[2][4], 1);
        assert_eq!(one.total(), 1);
        assert!(matches!(confusion(&[0], &[]), Err(MetricsError::LengthMismatch { .. })));
        assert!(matches!(confusion(&[5], &[0]), Err(MetricsError::LabelOutOfRange(5))));
    }

    #[test]
    fn toy_two_class_report() {
        let r = report(&two_class([[8, 2], [1, 9]])).unwrap();
        assert!((r.classes[0].precision - 8.0 / 9.0).abs() < 1e-15);
        assert!((r.classes[0].recall - 0.8).abs() < 1e-15);
        assert!((r.classes[0].f1 - 0.8421).abs() < 1e-4);
        assert_eq!(r.accuracy, 0.85);
        // unused classes 2..4 are flagged
        assert!(r.classes[2].degenerate && !r.classes[0].degenerate);
    }

    #[test]
    fn kappa_examples() {
        let mut perfect = ConfusionMatrix::default();
        for c in 0..5 {
            perfect.counts[c][c] = 10 + c as u64;
        }
        assert_eq!(kappa(&perfect).unwrap(), 1.0);
        // constant prediction over balanced binary truth
        assert_eq!(kappa(&two_class([[5, 0], [5, 0]])).unwrap(), 0.0);
        // all mass in one cell: p_e = 1
        assert_eq!(kappa(&two_class([[7, 0], [0, 0]])).unwrap(), 0.0);
        assert!(matches!(
            kappa(&ConfusionMatrix::default()),
            Err(MetricsError::EmptyMatrix)
        ));
    }

    #[test]
    fn empty_report() {
        assert!(matches!(
            report(&ConfusionMatrix::default()),
            Err(MetricsError::EmptyMatrix)
        ));
    }

    #[test]
    fn text_and_json_render() {
        let r = report(&two_class([[8, 2], [1, 9]])).unwrap();
        let text = r.to_string();
        assert!(text.contains("0.8889"));
        assert!(text.contains("weighted avg"));
        let back: ClassificationReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn confusion_csv_layout() {
        let mut buf = Vec::new();
        confusion(&[0, 4], &[0, 2]).unwrap().write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "true\\predicted,Wake,N1,N2,N3,REM");
        assert_eq!(lines[1], "Wake,1,0,0,0,0");
        assert_eq!(lines[5], "REM,0,0,1,0,0");
    }

    #[test]
    fn hypnogram_rows_and_round_trip() {
        let truth = [Wake, N2, Rem];
        let pred = [Wake, N3, Rem];
        let rows = hypnogram_rows(&truth, &pred, &[0.9, 0.5, 0.75]).unwrap();
        let mut buf = Vec::new();
        write_hypnogram(&rows, &mut buf).unwrap();
        let s = String::from_utf8(buf.clone()).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "epoch_index,time_s,true_stage,predicted_stage,confidence");
        assert_eq!(lines[2], "1,30.0,N2,N3,0.5");
        let back = read_hypnogram(&buf[..]).unwrap();
        assert_eq!(back, rows);

        let tenth = HypnogramRow::new(10, None, N1, 1.0);
        assert_eq!(tenth.time_s, 300.0);
        assert!(hypnogram_rows(&truth, &pred[..2], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn live_rows_have_empty_truth() {
        let mut buf = Vec::new();
        write_hypnogram(&[HypnogramRow::new(0, None, Wake, 1.0)], &mut buf).unwrap();
        let s = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(s.lines().nth(1).unwrap(), "0,0.0,,Wake,1.0");
        assert_eq!(read_hypnogram(&buf[..]).unwrap()[0].true_stage, None);
    }

    #[test]
    fn hypnogram_indices_may_skip_but_not_repeat() {
        let rows = [
            HypnogramRow::new(2, None, Wake, 1.0),
            HypnogramRow::new(5, None, N1, 0.5),
        ];
        let mut buf = Vec::new();
        write_hypnogram(&rows, &mut buf).unwrap();
        assert_eq!(read_hypnogram(&buf[..]).unwrap(), rows);
        let mut buf = Vec::new();
        write_hypnogram(&[rows[1].clone(), rows[0].clone()], &mut buf).unwrap();
        assert!(read_hypnogram(&buf[..]).is_err());
        let bad = b"epoch_index,time_s,true_stage,predicted_stage,confidence\n3,60.0,,Wake,1.0\n";
        assert!(read_hypnogram(&bad[..]).is_err());
    }
}
