//! From recordings to labelled 30 s epochs.
//!
//! Hypnogram annotations are mapped onto the five AASM stages, each scored
//! 30 s window of the EEG becomes one [`LabeledEpoch`], long wake stretches at
//! the start and end of the night are trimmed, and the night is Z-normalized.

mod epd;
mod resample;
mod split;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edf::{Recording, StageAnnotation};
use crate::{EPOCH_SAMPLES, MODEL_RATE_HZ};

pub use epd::{decode_epd, encode_epd, read_epd, write_epd, EpdError, EPD_MAGIC};
pub use resample::{lowpass, lowpass_kernel, output_len, resample, FILTER_TAPS};
pub use split::{kfold_split, DatasetSplit, SplitOptions};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("unknown stage label {0:?}")]
    UnknownLabel(String),
    #[error("recording is at {0} Hz; resample to 100 Hz first")]
    RateMismatch(f64),
    #[error("upsampling requested ({src} Hz -> {dst} Hz)")]
    UpsamplingRequested { src: f64, dst: f64 },
    #[error("invalid rates ({src} Hz -> {dst} Hz)")]
    InvalidRate { src: f64, dst: f64 },
    #[error("zero variance: flat signal")]
    ZeroVariance,
    #[error("night has no epochs")]
    EmptyNight,
    #[error("k = {k} exceeds the {subjects} available subjects")]
    TooFewSubjects { k: usize, subjects: usize },
    #[error("invalid fold {fold} for k = {k}")]
    InvalidFold { k: usize, fold: usize },
}

/// AASM five-stage scheme; codes are the class indices used everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StageLabel {
    Wake = 0,
    N1 = 1,
    N2 = 2,
    N3 = 3,
    Rem = 4,
}

impl StageLabel {
    pub const ALL: [StageLabel; 5] = [Self::Wake, Self::N1, Self::N2, Self::N3, Self::Rem];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Wake => "Wake",
            Self::N1 => "N1",
            Self::N2 => "N2",
            Self::N3 => "N3",
            Self::Rem => "REM",
        }
    }
}

impl std::fmt::Display for StageLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Result of mapping a hypnogram string.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MappedStage {
    Stage(StageLabel),
    /// Movement and unscored epochs.
    Excluded,
}

/// Maps Sleep-EDF (R&K) stage strings onto AASM stages; stage 4 merges into N3.
pub fn map_stage_label(text: &str) -> Result<MappedStage, PipelineError> {
    use MappedStage::*;
    Ok(match text.trim() {
        "Sleep stage W" => Stage(StageLabel::Wake),
        "Sleep stage 1" => Stage(StageLabel::N1),
        "Sleep stage 2" => Stage(StageLabel::N2),
        "Sleep stage 3" | "Sleep stage 4" => Stage(StageLabel::N3),
        "Sleep stage R" => Stage(StageLabel::Rem),
        "Movement time" | "Sleep stage ?" => Excluded,
        other => return Err(PipelineError::UnknownLabel(other.to_string())),
    })
}

/// Recording night identifier, e.g. 4001 for Sleep-EDF `SC4001E0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NightId(pub u32);

impl NightId {
    /// Nights of one subject share all digits but the last
    /// (`SC4ssN`: study, subject, night).
    pub fn subject(self) -> u32 {
        self.0 / 10
    }

    /// Parses the four digits after the two-letter prefix of a Sleep-EDF
    /// file name (`SC4001E0-PSG.edf`, `ST7022J0-PSG.edf`).
    pub fn from_sleep_edf_name(name: &str) -> Option<Self> {
        let base = std::path::Path::new(name).file_name()?.to_str()?;
        let digits = base.get(2..6)?;
        if base.get(..2)?.chars().all(|c| c.is_ascii_alphabetic()) && digits.chars().all(|c| c.is_ascii_digit()) {
            digits.parse().ok().map(NightId)
        } else {
            None
        }
    }
}

impl std::fmt::Display for NightId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One 30 s epoch at 100 Hz with its reference stage.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEpoch {
    pub samples: Vec<f64>,
    pub label: StageLabel,
    pub source_night: NightId,
    pub epoch_index: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EpochingWarning {
    /// Annotation duration is not a whole number of 30 s epochs; the
    /// remainder was ignored.
    UnalignedDuration { onset_s: f64, duration_s: f64 },
    /// Annotation runs past the end of the signal; the epochs beyond it were
    /// dropped.
    AnnotationSignalMismatch { onset_s: f64, dropped_epochs: usize },
}

#[derive(Debug, Clone, Default)]
pub struct Epoched {
    pub epochs: Vec<LabeledEpoch>,
    pub excluded: usize,
    pub warnings: Vec<EpochingWarning>,
}

/// Cuts a 100 Hz recording into labelled epochs aligned to annotation onsets.
///
/// Excluded stages and partial trailing windows are dropped.
pub fn epoch_signal(
    rec: &Recording,
    annotations: &[StageAnnotation],
    night: NightId,
) -> Result<Epoched, PipelineError> {
    if (rec.sample_rate_hz - MODEL_RATE_HZ).abs() > 1e-9 {
        return Err(PipelineError::RateMismatch(rec.sample_rate_hz));
    }
    let mut out = Epoched::default();
    for a in annotations {
        let mapped = map_stage_label(&a.label_text)?;
        if !a.is_epoch_aligned() {
            warn!(
                "annotation at {} s lasts {} s, not a multiple of 30 s",
                a.onset_s, a.duration_s
            );
            out.warnings.push(EpochingWarning::UnalignedDuration {
                onset_s: a.onset_s,
                duration_s: a.duration_s,
            });
        }
        let n = (a.duration_s / crate::EPOCH_SECONDS + 1e-9).floor() as usize;
        let first = (a.onset_s * MODEL_RATE_HZ).round() as usize;
        for i in 0..n {
            let start = first + i * EPOCH_SAMPLES;
            if start + EPOCH_SAMPLES > rec.samples.len() {
                let dropped = n - i;
                warn!(
                    "annotation at {} s extends past the signal; dropping {dropped} epochs",
                    a.onset_s
                );
                out.warnings.push(EpochingWarning::AnnotationSignalMismatch {
                    onset_s: a.onset_s,
                    dropped_epochs: dropped,
                });
                break;
            }
            let label = match mapped {
                MappedStage::Stage(l) => l,
                MappedStage::Excluded => {
                    out.excluded += 1;
                    continue;
                }
            };
            out.epochs.push(LabeledEpoch {
                samples: rec.samples[start..start + EPOCH_SAMPLES].to_vec(),
                label,
                source_night: night,
                epoch_index: (start / EPOCH_SAMPLES) as u32,
            });
        }
    }
    Ok(out)
}

/// Default wake margin kept around the sleep period: 30 min of 30 s epochs.
pub const DEFAULT_BOUNDARY_EPOCHS: usize = 60;

/// Keeps at most `boundary_epochs` wake epochs before the first and after the
/// last non-wake epoch. All-wake nights come back unchanged.
pub fn trim_wake(epochs: Vec<LabeledEpoch>, boundary_epochs: usize) -> Vec<LabeledEpoch> {
    let first = epochs.iter().position(|e| e.label != StageLabel::Wake);
    let last = epochs.iter().rposition(|e| e.label != StageLabel::Wake);
    let (Some(first), Some(last)) = (first, last) else {
        if !epochs.is_empty() {
            warn!("night has no sleep epochs; wake trimming skipped");
        }
        return epochs;
    };
    let lo = first.saturating_sub(boundary_epochs);
    let hi = (last + boundary_epochs).min(epochs.len() - 1);
    epochs.into_iter().skip(lo).take(hi - lo + 1).collect()
}

/// Population mean and standard deviation.
pub fn mean_std<'a>(values: impl Iterator<Item = &'a f64> + Clone) -> (f64, f64, usize) {
    let mut n = 0usize;
    let mut sum = 0.0;
    for v in values.clone() {
        sum += v;
        n += 1;
    }
    if n == 0 {
        return (0.0, 0.0, 0);
    }
    let mean = sum / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt(), n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// One mean and standard deviation for the whole night.
    #[default]
    Night,
    /// Each epoch standardized on its own.
    Epoch,
}

/// Z-normalizes in place with population statistics. Returns the night's
/// `(mean, std)` (for [`Normalization::Epoch`], those of the whole night
/// before per-epoch scaling).
pub fn normalize_night(epochs: &mut [LabeledEpoch], mode: Normalization) -> Result<(f64, f64), PipelineError> {
    if epochs.is_empty() {
        return Err(PipelineError::EmptyNight);
    }
    let (mean, std, _) = mean_std(epochs.iter().flat_map(|e| e.samples.iter()));
    if !(std > 0.0) {
        return Err(PipelineError::ZeroVariance);
    }
    match mode {
        Normalization::Night => {
            for e in epochs.iter_mut() {
                e.samples.iter_mut().for_each(|x| *x = (*x - mean) / std);
            }
        }
        Normalization::Epoch => {
            for e in epochs.iter_mut() {
                let (m, s, _) = mean_std(e.samples.iter());
                if !(s > 0.0) {
                    return Err(PipelineError::ZeroVariance);
                }
                e.samples.iter_mut().for_each(|x| *x = (*x - m) / s);
            }
        }
    }
    Ok((mean, std))
}

/// Options for [`prepare_night`].
#[derive(Debug, Clone)]
pub struct PrepOptions {
    pub boundary_epochs: usize,
    pub normalization: Normalization,
    pub anti_alias: bool,
}

impl Default for PrepOptions {
    fn default() -> Self {
        Self {
            boundary_epochs: DEFAULT_BOUNDARY_EPOCHS,
            normalization: Normalization::Night,
            anti_alias: true,
        }
    }
}

/// Resample (if needed), epoch, trim and normalize one night.
pub fn prepare_night(
    rec: &Recording,
    annotations: &[StageAnnotation],
    night: NightId,
    opts: &PrepOptions,
) -> Result<Epoched, PipelineError> {
    let resampled;
    let rec = if (rec.sample_rate_hz - MODEL_RATE_HZ).abs() > 1e-9 {
        resampled = Recording {
            channel_label: rec.channel_label.clone(),
            sample_rate_hz: MODEL_RATE_HZ,
            samples: resample(&rec.samples, rec.sample_rate_hz, MODEL_RATE_HZ, opts.anti_alias)?,
            clamped_samples: rec.clamped_samples,
        };
        &resampled
    } else {
        rec
    };
    let mut ep = epoch_signal(rec, annotations, night)?;
    ep.epochs = trim_wake(std::mem::take(&mut ep.epochs), opts.boundary_epochs);
    normalize_night(&mut ep.epochs, opts.normalization)?;
    Ok(ep)
}

/// Groups epochs by night, keeping first-appearance order of nights.
pub fn group_by_night(epochs: Vec<LabeledEpoch>) -> Vec<(NightId, Vec<LabeledEpoch>)> {
    let mut out: Vec<(NightId, Vec<LabeledEpoch>)> = Vec::new();
    for e in epochs {
        match out.iter_mut().find(|(n, _)| *n == e.source_night) {
            Some((_, v)) => v.push(e),
            None => out.push((e.source_night, vec![e])),
        }
    }
    out
}
