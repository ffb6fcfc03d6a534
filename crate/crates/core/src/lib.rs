//! Single-channel EEG sleep staging.
//!
//! The crate covers the whole path from a polysomnography recording to a
//! hypnogram:
//!
//! * [`edf`] reads EDF/EDF+ signal and hypnogram files,
//! * [`pipeline`] cuts labelled, normalized 30 s epochs and builds splits,
//! * [`net`] is a small 1-D CNN engine (training and inference),
//! * [`calibrate`] adapts foreign recordings with wake-stage Z-scores,
//! * [`features`] ranks statistical features by mutual information,
//! * [`metrics`] scores predictions,
//! * [`stream`] serves live inference over TCP.

// `!(x > 0.0)` style checks reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibrate;
pub mod edf;
pub mod features;
pub mod metrics;
pub mod net;
pub mod pipeline;
pub mod stream;
pub mod synth;

/// Samples per scoring epoch at the model rate (30 s at 100 Hz).
pub const EPOCH_SAMPLES: usize = 3000;
/// Model input rate.
pub const MODEL_RATE_HZ: f64 = 100.0;
/// Length of one scoring epoch.
pub const EPOCH_SECONDS: f64 = 30.0;
