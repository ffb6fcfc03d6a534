//! Synthetic stage-like single-channel EEG.
//!
//! Each stage gets the rhythm it is scored by (alpha for wake, theta for N1,
//! spindles and K-complexes for N2, delta for N3, sawtooth theta for REM) on
//! top of white noise. The signals are crude but separable, which is what
//! fixtures, demos and smoke tests need.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::edf::writer::EdfWriter;
use crate::edf::{EdfError, SignalSpec, StageAnnotation};
use crate::pipeline::{normalize_night, LabeledEpoch, NightId, Normalization, StageLabel};
use crate::{EPOCH_SECONDS, MODEL_RATE_HZ};

/// Channel label written into synthetic PSG files.
pub const SYNTH_CHANNEL: &str = "EEG Fpz-Cz";

/// Physical range (µV) mapped onto the full i16 range.
const PHYS_RANGE_UV: f64 = 500.0;

fn sine(rng: &mut ChaCha8Rng, out: &mut [f64], rate: f64, freq: f64, amp: f64) {
    let f = freq * rng.gen_range(0.9..1.1);
    let phase = rng.gen_range(0.0..2.0 * PI);
    for (i, v) in out.iter_mut().enumerate() {
        *v += amp * (2.0 * PI * f * i as f64 / rate + phase).sin();
    }
}

fn sawtooth(rng: &mut ChaCha8Rng, out: &mut [f64], rate: f64, freq: f64, amp: f64) {
    let f = freq * rng.gen_range(0.9..1.1);
    let phase = rng.gen_range(0.0..1.0);
    for (i, v) in out.iter_mut().enumerate() {
        let x = (f * i as f64 / rate + phase).fract();
        *v += amp * (2.0 * x - 1.0);
    }
}

/// Gaussian-windowed burst of `freq` centred at `centre_s`.
fn burst(out: &mut [f64], rate: f64, centre_s: f64, width_s: f64, freq: f64, amp: f64) {
    for (i, v) in out.iter_mut().enumerate() {
        let t = i as f64 / rate - centre_s;
        *v += amp * (-(t * t) / (2.0 * width_s * width_s)).exp() * (2.0 * PI * freq * t).cos();
    }
}

/// One 30 s epoch of `stage` at `rate_hz`, in µV.
pub fn synth_epoch(stage: StageLabel, rate_hz: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = (EPOCH_SECONDS * rate_hz).round() as usize;
    let mut x: Vec<f64> = (0..n).map(|_| 8.0 * rng.sample::<f64, _>(StandardNormal)).collect();
    match stage {
        StageLabel::Wake => {
            sine(rng, &mut x, rate_hz, 10.0, 20.0);
            sine(rng, &mut x, rate_hz, 22.0, 8.0);
        }
        StageLabel::N1 => {
            sine(rng, &mut x, rate_hz, 6.0, 25.0);
            sine(rng, &mut x, rate_hz, 10.0, 4.0);
        }
        StageLabel::N2 => {
            sine(rng, &mut x, rate_hz, 5.0, 20.0);
            for _ in 0..rng.gen_range(2..=4) {
                let c = rng.gen_range(1.0..EPOCH_SECONDS - 1.0);
                burst(&mut x, rate_hz, c, 0.3, 13.0, 30.0);
            }
            let c = rng.gen_range(2.0..EPOCH_SECONDS - 2.0);
            burst(&mut x, rate_hz, c, 0.25, 0.0, -70.0);
        }
        StageLabel::N3 => {
            sine(rng, &mut x, rate_hz, 1.0, 80.0);
            sine(rng, &mut x, rate_hz, 2.0, 40.0);
        }
        StageLabel::Rem => {
            sawtooth(rng, &mut x, rate_hz, 3.0, 20.0);
            sine(rng, &mut x, rate_hz, 7.0, 12.0);
            sine(rng, &mut x, rate_hz, 20.0, 6.0);
        }
    }
    x
}

/// Cycles W, N1, N2, N3, N2, REM with random run lengths of 2 to 8 epochs.
pub fn synth_hypnogram(n_epochs: usize, seed: u64) -> Vec<StageLabel> {
    use StageLabel::*;
    const CYCLE: [StageLabel; 6] = [Wake, N1, N2, N3, N2, Rem];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_epochs);
    let mut i = 0;
    while out.len() < n_epochs {
        let run = rng.gen_range(2..=8).min(n_epochs - out.len());
        out.extend(std::iter::repeat_n(CYCLE[i % CYCLE.len()], run));
        i += 1;
    }
    out
}

/// A synthetic recording and the stages it was generated from.
#[derive(Debug, Clone)]
pub struct SynthNight {
    pub hypnogram: Vec<StageLabel>,
    pub rate_hz: f64,
    /// µV, quantized to the EDF digital grid so file round-trips are exact.
    pub samples: Vec<f64>,
}

impl SynthNight {
    pub fn generate(hypnogram: Vec<StageLabel>, rate_hz: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut samples = Vec::new();
        for &s in &hypnogram {
            samples.extend(synth_epoch(s, rate_hz, &mut rng));
        }
        let spec = eeg_spec(1);
        for v in samples.iter_mut() {
            *v = spec
                .digital_to_physical(to_digital(*v).into())
                .expect("non-degenerate scale");
        }
        Self {
            hypnogram,
            rate_hz,
            samples,
        }
    }

    pub fn digital(&self) -> Vec<i16> {
        self.samples.iter().map(|&v| to_digital(v)).collect()
    }

    /// Writes `SC<id>E0-PSG.edf` and `SC<id>EC-Hypnogram.edf` into `dir`.
    pub fn write_edf_pair(&self, dir: &Path, night: NightId) -> Result<(PathBuf, PathBuf), EdfError> {
        let spr = (EPOCH_SECONDS * self.rate_hz).round() as usize;
        let psg = EdfWriter::new(EPOCH_SECONDS)
            .signal(eeg_spec(spr), self.digital())
            .to_bytes()?;
        let hyp = EdfWriter::new(0.0)
            .annotations(stage_annotations(&self.hypnogram))
            .to_bytes()?;
        let psg_path = dir.join(format!("SC{:04}E0-PSG.edf", night.0));
        let hyp_path = dir.join(format!("SC{:04}EC-Hypnogram.edf", night.0));
        std::fs::write(&psg_path, psg)?;
        std::fs::write(&hyp_path, hyp)?;
        Ok((psg_path, hyp_path))
    }
}

fn to_digital(uv: f64) -> i16 {
    (uv / PHYS_RANGE_UV * 32767.0).round().clamp(-32767.0, 32767.0) as i16
}

/// Signal header used for synthetic EEG.
pub fn eeg_spec(samples_per_record: usize) -> SignalSpec {
    SignalSpec {
        label: SYNTH_CHANNEL.into(),
        transducer: "Ag-AgCl electrodes".into(),
        physical_dim: "uV".into(),
        physical_min: -PHYS_RANGE_UV,
        physical_max: PHYS_RANGE_UV,
        digital_min: -32767,
        digital_max: 32767,
        prefiltering: "HP:0.5Hz LP:100Hz".into(),
        samples_per_record,
    }
}

/// Sleep-EDF style annotations, one per run of identical stages.
pub fn stage_annotations(hypnogram: &[StageLabel]) -> Vec<StageAnnotation> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=hypnogram.len() {
        if i == hypnogram.len() || hypnogram[i] != hypnogram[start] {
            let text = match hypnogram[start] {
                StageLabel::Wake => "Sleep stage W",
                StageLabel::N1 => "Sleep stage 1",
                StageLabel::N2 => "Sleep stage 2",
                StageLabel::N3 => "Sleep stage 3",
                StageLabel::Rem => "Sleep stage R",
            };
            out.push(StageAnnotation::new(
                start as f64 * EPOCH_SECONDS,
                (i - start) as f64 * EPOCH_SECONDS,
                text,
            ));
            start = i;
        }
    }
    out
}

/// Night-normalized 100 Hz labelled epochs for `hypnogram`.
pub fn labeled_epochs(hypnogram: &[StageLabel], night: NightId, seed: u64) -> Vec<LabeledEpoch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut epochs: Vec<LabeledEpoch> = hypnogram
        .iter()
        .enumerate()
        .map(|(i, &label)| LabeledEpoch {
            samples: synth_epoch(label, MODEL_RATE_HZ, &mut rng),
            label,
            source_night: night,
            epoch_index: i as u32,
        })
        .collect();
    normalize_night(&mut epochs, Normalization::Night).expect("synthetic epochs have variance");
    epochs
}
