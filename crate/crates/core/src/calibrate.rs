//! Wake-stage Z-score calibration.
//!
//! A recording from another instrument or subject is brought onto the
//! training scale by subtracting the mean and dividing by the standard
//! deviation measured while the subject is awake.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::mean_std;
use crate::EPOCH_SAMPLES;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("need at least {EPOCH_SAMPLES} samples, got {0}")]
    InsufficientData(usize),
    #[error("non-finite sample")]
    NonFinite,
    #[error("zero variance: flat signal, electrode may be disconnected")]
    ZeroVariance,
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProfileSource {
    WakeEpochs,
    WholeNight,
}

/// Mean and population standard deviation used for Z-scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationProfile {
    pub mean: f64,
    pub std: f64,
    pub n_samples: usize,
    pub source: ProfileSource,
}

impl CalibrationProfile {
    /// Pools every sample of `epochs`.
    pub fn fit<'a, I>(epochs: I, source: ProfileSource) -> Result<Self, CalibrationError>
    where
        I: IntoIterator<Item = &'a [f64]>,
        I::IntoIter: Clone,
    {
        let it = epochs.into_iter();
        let flat = it.flat_map(|e| e.iter());
        if flat.clone().any(|v| !v.is_finite()) {
            return Err(CalibrationError::NonFinite);
        }
        let (mean, std, n) = mean_std(flat);
        if n < EPOCH_SAMPLES {
            return Err(CalibrationError::InsufficientData(n));
        }
        if !(std > 0.0) {
            return Err(CalibrationError::ZeroVariance);
        }
        Ok(Self {
            mean,
            std,
            n_samples: n,
            source,
        })
    }

    fn validate(&self) -> Result<(), CalibrationError> {
        if !(self.std > 0.0 && self.std.is_finite() && self.mean.is_finite()) {
            return Err(CalibrationError::InvalidProfile(format!(
                "mean {} std {}",
                self.mean, self.std
            )));
        }
        if self.n_samples < EPOCH_SAMPLES {
            return Err(CalibrationError::InvalidProfile(format!(
                "n_samples {}",
                self.n_samples
            )));
        }
        Ok(())
    }

    /// `(x - mean) / std` for every sample.
    pub fn apply(&self, epoch: &[f64]) -> Vec<f64> {
        epoch.iter().map(|x| (x - self.mean) / self.std).collect()
    }

    pub fn apply_in_place(&self, epoch: &mut [f64]) {
        epoch.iter_mut().for_each(|x| *x = (*x - self.mean) / self.std);
    }

    /// Undo [`apply`](Self::apply).
    pub fn invert(&self, calibrated: &[f64]) -> Vec<f64> {
        calibrated.iter().map(|z| z * self.std + self.mean).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, CalibrationError> {
        let p: Self = serde_json::from_str(s)?;
        p.validate()?;
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CalibrationError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CalibrationError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Fits a profile on epochs taken while the subject is awake.
pub fn fit_wake_profile(epochs: &[Vec<f64>]) -> Result<CalibrationProfile, CalibrationError> {
    CalibrationProfile::fit(epochs.iter().map(Vec::as_slice), ProfileSource::WakeEpochs)
}
