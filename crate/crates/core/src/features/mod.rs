//! Statistical features of raw EEG epochs and their relevance for the stage.
//!
//! Each epoch gets ten features (moments, order statistics, zero crossings
//! and min-max distance). Feature relevance is measured with a k-NN mutual
//! information estimator and summarized as relative importance averaged
//! over nights.

mod mi;

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

pub use mi::{digamma, mutual_info, MiOptions, MiScaling};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("epoch is empty")]
    EmptyEpoch,
    #[error("non-finite value")]
    NonFinite,
    #[error("min-max window needs at least 2 samples, got {0}")]
    WindowTooShort(usize),
    #[error("{features} feature rows but {labels} labels")]
    LengthMismatch { features: usize, labels: usize },
    #[error("feature rows differ in length")]
    RaggedRows,
    #[error("k must be positive, got {0}")]
    InvalidK(usize),
    #[error("{n} usable samples is too few for k = {k}")]
    TooFewSamples { n: usize, k: usize },
    #[error("no nights given")]
    NoNights,
    #[error("night {0} has no positive score")]
    AllZeroScores(usize),
    #[error("night {night} has {got} scores, expected {expected}")]
    ScoreCount { night: usize, got: usize, expected: usize },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const FEATURE_NAMES: [&str; 10] = [
    "mean",
    "std",
    "min",
    "max",
    "median",
    "skewness",
    "kurtosis",
    "peak_to_peak",
    "zero_crossing_rate",
    "mmd",
];

/// Index of the standard deviation in [`FEATURE_NAMES`].
pub const STD_INDEX: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeatureVector {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub median: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    pub peak_to_peak: f64,
    pub zero_crossing_rate: f64,
    pub mmd: f64,
    /// Zero variance: skewness and kurtosis were set to 0.
    #[serde(skip)]
    pub degenerate: bool,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; 10] {
        [
            self.mean,
            self.std,
            self.min,
            self.max,
            self.median,
            self.skewness,
            self.kurtosis,
            self.peak_to_peak,
            self.zero_crossing_rate,
            self.mmd,
        ]
    }
}

/// Ten statistical features of one epoch sampled at `sample_rate_hz`.
pub fn stat_features(epoch: &[f64], sample_rate_hz: f64) -> Result<FeatureVector, FeatureError> {
    if epoch.is_empty() {
        return Err(FeatureError::EmptyEpoch);
    }
    if epoch.iter().any(|v| !v.is_finite()) {
        return Err(FeatureError::NonFinite);
    }
    let n = epoch.len() as f64;
    let mean = epoch.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in epoch {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let std = m2.sqrt();
    let degenerate = !(m2 > 0.0);
    let (skewness, kurtosis) = if degenerate {
        (0.0, 0.0)
    } else {
        (m3 / (m2 * std), m4 / (m2 * m2))
    };

    let min = epoch.iter().copied().fold(f64::INFINITY, f64::min);
    let max = epoch.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sorted = epoch.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    };

    let crossings = epoch.windows(2).filter(|w| (w[0] - mean) * (w[1] - mean) < 0.0).count();
    let zero_crossing_rate = if epoch.len() > 1 {
        crossings as f64 / (n - 1.0)
    } else {
        0.0
    };

    let window = (sample_rate_hz.round() as usize).max(2).min(epoch.len().max(2));
    let mmd = if epoch.len() >= 2 { mmd(epoch, window)? } else { 0.0 };

    Ok(FeatureVector {
        mean,
        std,
        min,
        max,
        median,
        skewness,
        kurtosis,
        peak_to_peak: max - min,
        zero_crossing_rate,
        mmd,
        degenerate,
    })
}

/// Min-max distance: over consecutive non-overlapping windows of
/// `window_len` samples, the sum of Euclidean distances between each
/// window's first minimum and first maximum, time measured in samples. A
/// trailing partial window is ignored.
pub fn mmd(epoch: &[f64], window_len: usize) -> Result<f64, FeatureError> {
    if window_len < 2 {
        return Err(FeatureError::WindowTooShort(window_len));
    }
    let mut total = 0.0;
    for w in epoch.chunks_exact(window_len) {
        let (mut imin, mut imax) = (0usize, 0usize);
        for (i, &v) in w.iter().enumerate() {
            if v < w[imin] {
                imin = i;
            }
            if v > w[imax] {
                imax = i;
            }
        }
        let dt = imax as f64 - imin as f64;
        let dx = w[imax] - w[imin];
        total += dt.hypot(dx);
    }
    Ok(total)
}

/// [`mmd`] with the window given in seconds.
pub fn mmd_seconds(epoch: &[f64], window_s: f64, sample_rate_hz: f64) -> Result<f64, FeatureError> {
    mmd(epoch, (window_s * sample_rate_hz).round() as usize)
}

/// Average feature relevance across nights.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MiRanking {
    /// Mean MI score per feature, nats.
    pub scores: Vec<f64>,
    /// Mean per-night share of the total score, percent (sums to 100).
    pub relative_importance: Vec<f64>,
}

impl MiRanking {
    /// Feature indices, most important first (stable on ties).
    pub fn order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.relative_importance.len()).collect();
        idx.sort_by(|&a, &b| self.relative_importance[b].total_cmp(&self.relative_importance[a]));
        idx
    }

    pub fn write_csv<W: Write>(&self, names: &[&str], w: W) -> Result<(), FeatureError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["feature", "score_nats", "relative_importance_pct"])?;
        for (i, name) in names.iter().enumerate() {
            out.write_record([
                name.to_string(),
                format!("{:.6}", self.scores[i]),
                format!("{:.4}", self.relative_importance[i]),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Normalizes each night's scores to percentages of their sum and averages
/// the percentages (and raw scores) across nights.
pub fn relative_importance(per_night: &[Vec<f64>]) -> Result<MiRanking, FeatureError> {
    let Some(first) = per_night.first() else {
        return Err(FeatureError::NoNights);
    };
    let d = first.len();
    let mut pct = vec![0.0; d];
    let mut scores = vec![0.0; d];
    for (night, s) in per_night.iter().enumerate() {
        if s.len() != d {
            return Err(FeatureError::ScoreCount {
                night,
                got: s.len(),
                expected: d,
            });
        }
        let total: f64 = s.iter().map(|v| v.max(0.0)).sum();
        if !(total > 0.0) {
            return Err(FeatureError::AllZeroScores(night));
        }
        for j in 0..d {
            pct[j] += 100.0 * s[j].max(0.0) / total;
            scores[j] += s[j].max(0.0);
        }
    }
    let nights = per_night.len() as f64;
    pct.iter_mut().for_each(|v| *v /= nights);
    scores.iter_mut().for_each(|v| *v /= nights);
    Ok(MiRanking {
        scores,
        relative_importance: pct,
    })
}

/// Writes one row per epoch: the ten features then the stage code.
pub fn write_feature_csv<W: Write>(rows: &[(FeatureVector, u8)], w: W) -> Result<(), FeatureError> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<&str> = FEATURE_NAMES.to_vec();
    header.push("label");
    out.write_record(&header)?;
    for (f, label) in rows {
        let mut rec: Vec<String> = f.to_array().iter().map(|v| format!("{v}")).collect();
        rec.push(label.to_string());
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_epoch() {
        let f = stat_features(&[2.5; 3000], 100.0).unwrap();
        assert_eq!(f.mean, 2.5);
        assert_eq!(f.std, 0.0);
        assert_eq!(f.peak_to_peak, 0.0);
        assert_eq!(f.zero_crossing_rate, 0.0);
        assert_eq!(f.skewness, 0.0);
        assert_eq!(f.kurtosis, 0.0);
        assert_eq!(f.mmd, 0.0);
        assert!(f.degenerate);
    }

    #[test]
    fn toy_moments() {
        let f = stat_features(&[2.0, 4.0, 6.0], 100.0).unwrap();
        assert_eq!(f.mean, 4.0);
        assert_eq!(f.median, 4.0);
        assert!((f.std - (8.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((f.std - 1.63299).abs() < 1e-5);
        assert_eq!(f.skewness, 0.0);
        // m4 / m2^2 = (2*16/3) / (8/3)^2 = 1.5
        assert!((f.kurtosis - 1.5).abs() < 1e-12);
    }

    #[test]
    fn even_length_median_and_zcr() {
        let f = stat_features(&[1.0, -1.0, 1.0, -1.0], 100.0).unwrap();
        assert_eq!(f.median, 0.0);
        assert_eq!(f.zero_crossing_rate, 1.0);
    }

    #[test]
    fn negation_flips_skew_only() {
        let x: Vec<f64> = (0..3000).map(|i| ((i * 37 % 101) as f64).powf(1.7) * 0.01).collect();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let a = stat_features(&x, 100.0).unwrap();
        let b = stat_features(&neg, 100.0).unwrap();
        assert!((a.std - b.std).abs() < 1e-12);
        assert!((a.peak_to_peak - b.peak_to_peak).abs() < 1e-12);
        assert!((a.skewness + b.skewness).abs() < 1e-12);
        assert!((a.kurtosis - b.kurtosis).abs() < 1e-9);
    }

    #[test]
    fn mmd_ramp_window() {
        let ramp: Vec<f64> = (0..100).map(f64::from).collect();
        let got = mmd(&ramp, 100).unwrap();
        assert!((got - 99.0 * 2f64.sqrt()).abs() < 1e-9);
        assert!((got - 140.0071).abs() < 1e-4);
        let twice: Vec<f64> = ramp.iter().chain(&ramp).copied().collect();
        assert!((mmd(&twice, 100).unwrap() - 2.0 * got).abs() < 1e-9);
    }

    #[test]
    fn mmd_first_occurrence_tie_break() {
        // min at 0 and 2 -> 0, max at 1 and 3 -> 1
        assert!((mmd(&[0.0, 1.0, 0.0, 1.0], 4).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        assert!(matches!(mmd(&[1.0], 1), Err(FeatureError::WindowTooShort(1))));
        assert!((mmd_seconds(&[0.0, 3.0, 0.0, 0.0], 0.04, 100.0).unwrap() - 10f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn relative_importance_examples() {
        let r = relative_importance(&[vec![1.0, 1.0, 2.0]]).unwrap();
        assert_eq!(r.relative_importance, vec![25.0, 25.0, 50.0]);
        let r2 = relative_importance(&[vec![1.0, 1.0, 2.0], vec![1.0, 1.0, 2.0]]).unwrap();
        assert_eq!(r2.relative_importance, r.relative_importance);
        assert_eq!(r.order(), vec![2, 0, 1]);
        assert!(matches!(
            relative_importance(&[vec![0.0, 0.0]]),
            Err(FeatureError::AllZeroScores(0))
        ));
        assert!(matches!(relative_importance(&[]), Err(FeatureError::NoNights)));
    }

    #[test]
    fn ranking_csv_layout() {
        let r = relative_importance(&[vec![1.0, 3.0]]).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&["a", "b"], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "feature,score_nats,relative_importance_pct\na,1.000000,25.0000\nb,3.000000,75.0000\n"
        );
    }
}
