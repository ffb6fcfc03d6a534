//! Per-connection state: epoch cutting, calibration and inference.

use std::time::Instant;

use log::{info, warn};

use super::{Hello, StageFrame, StreamError};
use crate::calibrate::{fit_wake_profile, CalibrationProfile};
use crate::net::Model;
use crate::pipeline::{resample, StageLabel};
use crate::{EPOCH_SAMPLES, EPOCH_SECONDS, MODEL_RATE_HZ};

const N_CLASSES: usize = 5;

fn check_model(model: &Model<f32>) -> Result<(), StreamError> {
    let cfg = model.config();
    if cfg.input_len != EPOCH_SAMPLES || cfg.classes != N_CLASSES {
        return Err(StreamError::InvalidHello(format!(
            "model expects {} samples and {} classes per epoch",
            cfg.input_len, cfg.classes
        )));
    }
    Ok(())
}

fn epoch_len(sample_rate_hz: u32) -> Result<usize, StreamError> {
    if (sample_rate_hz as f64) < MODEL_RATE_HZ {
        return Err(StreamError::InvalidHello(format!(
            "sample rate {sample_rate_hz} Hz is below the model rate"
        )));
    }
    Ok((EPOCH_SECONDS as usize) * sample_rate_hz as usize)
}

fn to_model_rate(epoch: &[f64], rate: u32) -> Result<Vec<f64>, StreamError> {
    Ok(resample(epoch, rate as f64, MODEL_RATE_HZ, true)?)
}

fn calibration_frame(epoch_index: u32) -> StageFrame {
    StageFrame {
        epoch_index,
        stage: StageLabel::Wake.code(),
        confidence: 1.0,
        probabilities: [1.0, 0.0, 0.0, 0.0, 0.0],
    }
}

fn stage_frame(epoch_index: u32, probs: &[f32]) -> StageFrame {
    let mut probabilities = [0.0f32; N_CLASSES];
    probabilities.copy_from_slice(probs);
    // first maximum wins ties
    let (stage, confidence) =
        probabilities.iter().enumerate().fold(
            (0, f32::NEG_INFINITY),
            |best, (i, &p)| if p > best.1 { (i, p) } else { best },
        );
    StageFrame {
        epoch_index,
        stage: stage as u8,
        confidence,
        probabilities,
    }
}

fn calibrated_input(profile: Option<&CalibrationProfile>, epoch: &[f64]) -> Vec<f32> {
    match profile {
        Some(p) => epoch.iter().map(|&x| ((x - p.mean) / p.std) as f32).collect(),
        None => epoch.iter().map(|&x| x as f32).collect(),
    }
}

/// A stage frame with the instant its epoch was completed.
#[derive(Debug, Clone, Copy)]
pub struct Emitted {
    pub frame: StageFrame,
    pub cut_at: Instant,
}

/// State of one live session after `HELLO`.
pub struct Session<'m> {
    model: &'m Model<f32>,
    hello: Hello,
    epoch_len: usize,
    buffer: Vec<f64>,
    next_index: u32,
    calib: Vec<Vec<f64>>,
    profile: Option<CalibrationProfile>,
    dropped: Vec<u32>,
}

impl<'m> Session<'m> {
    /// `hello.calib_epochs` must already be resolved (not the server-default
    /// sentinel). Zero calibration epochs feed the model uncalibrated samples.
    pub fn new(model: &'m Model<f32>, hello: Hello) -> Result<Self, StreamError> {
        check_model(model)?;
        let epoch_len = epoch_len(hello.sample_rate_hz)?;
        Ok(Self {
            model,
            hello,
            epoch_len,
            buffer: Vec::with_capacity(epoch_len),
            next_index: 0,
            calib: Vec::new(),
            profile: None,
            dropped: Vec::new(),
        })
    }

    pub fn hello(&self) -> &Hello {
        &self.hello
    }

    pub fn profile(&self) -> Option<&CalibrationProfile> {
        self.profile.as_ref()
    }

    /// Epochs dropped for non-finite samples.
    pub fn dropped(&self) -> &[u32] {
        &self.dropped
    }

    /// Epochs completed so far, dropped ones included.
    pub fn epochs_seen(&self) -> u32 {
        self.next_index
    }

    /// Samples waiting for the current epoch to complete.
    pub fn pending_samples(&self) -> usize {
        self.buffer.len()
    }

    /// Buffers `samples` and returns a frame for every epoch they complete.
    pub fn ingest(&mut self, samples: &[f32]) -> Result<Vec<Emitted>, StreamError> {
        let mut out = Vec::new();
        let mut rest = samples;
        while !rest.is_empty() {
            let take = (self.epoch_len - self.buffer.len()).min(rest.len());
            self.buffer.extend(rest[..take].iter().map(|&x| x as f64));
            rest = &rest[take..];
            if self.buffer.len() == self.epoch_len {
                let cut_at = Instant::now();
                let epoch = std::mem::replace(&mut self.buffer, Vec::with_capacity(self.epoch_len));
                if let Some(frame) = self.finish_epoch(&epoch)? {
                    out.push(Emitted { frame, cut_at });
                }
            }
        }
        Ok(out)
    }

    fn finish_epoch(&mut self, epoch: &[f64]) -> Result<Option<StageFrame>, StreamError> {
        let index = self.next_index;
        self.next_index += 1;
        let calibrating = index < self.hello.calib_epochs as u32;
        if epoch.iter().any(|x| !x.is_finite()) {
            warn!("{}: dropping epoch {index}, non-finite sample", self.hello.device_name);
            self.dropped.push(index);
            if calibrating && index + 1 == self.hello.calib_epochs as u32 {
                self.fit_profile()?;
            }
            return Ok(None);
        }
        let x = to_model_rate(epoch, self.hello.sample_rate_hz)?;
        if calibrating {
            self.calib.push(x);
            if index + 1 == self.hello.calib_epochs as u32 {
                self.fit_profile()?;
            }
            return Ok(Some(calibration_frame(index)));
        }
        let input = calibrated_input(self.profile.as_ref(), &x);
        let probs = self.model.predict(&input, 1, 1)?;
        Ok(Some(stage_frame(index, &probs)))
    }

    fn fit_profile(&mut self) -> Result<(), StreamError> {
        let profile = fit_wake_profile(&self.calib)?;
        info!(
            "{}: wake profile mean {:.4} std {:.4} from {} epochs",
            self.hello.device_name,
            profile.mean,
            profile.std,
            self.calib.len()
        );
        self.profile = Some(profile);
        self.calib = Vec::new();
        Ok(())
    }
}

/// Batch reference of the live path: the same epoch cutting, resampling and
/// calibration, with all post-calibration epochs inferred in one forward pass.
/// A trailing partial epoch is ignored.
pub fn offline_predict(
    model: &Model<f32>,
    samples: &[f32],
    sample_rate_hz: u32,
    calib_epochs: u16,
) -> Result<Vec<StageFrame>, StreamError> {
    check_model(model)?;
    let len = epoch_len(sample_rate_hz)?;
    let epochs: Vec<Vec<f64>> = samples
        .chunks_exact(len)
        .map(|c| c.iter().map(|&x| x as f64).collect())
        .collect();
    let finite = |e: &Vec<f64>| e.iter().all(|x| x.is_finite());
    let n_calib = (calib_epochs as usize).min(epochs.len());
    let mut calib = Vec::new();
    let mut frames = Vec::new();
    for (i, e) in epochs[..n_calib].iter().enumerate() {
        if finite(e) {
            calib.push(to_model_rate(e, sample_rate_hz)?);
            frames.push(calibration_frame(i as u32));
        }
    }
    let profile = if calib_epochs > 0 && epochs.len() >= calib_epochs as usize {
        Some(fit_wake_profile(&calib)?)
    } else {
        None
    };
    let mut indices = Vec::new();
    let mut input = Vec::new();
    for (i, e) in epochs.iter().enumerate().skip(n_calib) {
        if finite(e) {
            indices.push(i as u32);
            input.extend(calibrated_input(profile.as_ref(), &to_model_rate(e, sample_rate_hz)?));
        }
    }
    if !indices.is_empty() {
        let probs = model.predict(&input, indices.len(), 1)?;
        for (&i, p) in indices.iter().zip(probs.chunks_exact(N_CLASSES)) {
            frames.push(stage_frame(i, p));
        }
    }
    Ok(frames)
}
