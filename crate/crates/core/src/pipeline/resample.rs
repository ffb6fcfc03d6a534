//! Rate conversion down to the model rate.
//!
//! Anti-aliasing is a 63-tap Blackman windowed-sinc low-pass with cutoff at
//! 0.45 x the destination rate, applied zero-phase with point-reflected
//! edges; output samples are then read off by linear interpolation.

use super::PipelineError;

pub const FILTER_TAPS: usize = 63;
const CUTOFF_FRACTION: f64 = 0.45;

/// Low-pass kernel with `cutoff` in cycles per input sample, unit DC gain.
pub fn lowpass_kernel(cutoff: f64) -> Vec<f64> {
    let m = (FILTER_TAPS - 1) as f64;
    let mut h: Vec<f64> = (0..FILTER_TAPS)
        .map(|i| {
            let n = i as f64 - m / 2.0;
            let sinc = if n == 0.0 {
                2.0 * cutoff
            } else {
                (2.0 * std::f64::consts::PI * cutoff * n).sin() / (std::f64::consts::PI * n)
            };
            let x = 2.0 * std::f64::consts::PI * i as f64 / m;
            let blackman = 0.42 - 0.5 * x.cos() + 0.08 * (2.0 * x).cos();
            sinc * blackman
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= sum);
    h
}

/// Sample at virtual index `i`, reflecting through the end points
/// (`x[-j] = 2 x[0] - x[j]`), which keeps value and slope continuous.
fn reflected(x: &[f64], i: isize) -> f64 {
    let n = x.len() as isize;
    if i < 0 {
        2.0 * x[0] - x[(-i).min(n - 1) as usize]
    } else if i >= n {
        2.0 * x[(n - 1) as usize] - x[(2 * (n - 1) - i).max(0) as usize]
    } else {
        x[i as usize]
    }
}

pub fn lowpass(x: &[f64], cutoff: f64) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let h = lowpass_kernel(cutoff);
    let half = (FILTER_TAPS / 2) as isize;
    let n = x.len() as isize;
    (0..n)
        .map(|i| {
            h.iter()
                .enumerate()
                .map(|(j, &w)| w * reflected(x, i + j as isize - half))
                .sum()
        })
        .collect()
}

/// Number of output samples for `n` input samples.
pub fn output_len(n: usize, src_rate_hz: f64, dst_rate_hz: f64) -> usize {
    // tolerance absorbs 7680 * 100 / 256 landing a hair under 3000
    (n as f64 * dst_rate_hz / src_rate_hz + 1e-9).floor() as usize
}

/// Converts `samples` from `src_rate_hz` to `dst_rate_hz` (downsampling only).
///
/// Output index `k` is the linear interpolation of the (optionally low-passed)
/// input at time `k / dst_rate_hz`.
pub fn resample(
    samples: &[f64],
    src_rate_hz: f64,
    dst_rate_hz: f64,
    anti_alias: bool,
) -> Result<Vec<f64>, PipelineError> {
    if !(dst_rate_hz > 0.0 && src_rate_hz.is_finite() && dst_rate_hz.is_finite()) {
        return Err(PipelineError::InvalidRate {
            src: src_rate_hz,
            dst: dst_rate_hz,
        });
    }
    if src_rate_hz < dst_rate_hz {
        return Err(PipelineError::UpsamplingRequested {
            src: src_rate_hz,
            dst: dst_rate_hz,
        });
    }
    if src_rate_hz == dst_rate_hz {
        return Ok(samples.to_vec());
    }
    let filtered;
    let x = if anti_alias {
        filtered = lowpass(samples, CUTOFF_FRACTION * dst_rate_hz / src_rate_hz);
        &filtered
    } else {
        samples
    };
    let ratio = src_rate_hz / dst_rate_hz;
    let n_out = output_len(samples.len(), src_rate_hz, dst_rate_hz);
    Ok((0..n_out)
        .map(|k| {
            let pos = k as f64 * ratio;
            let i = pos.floor() as usize;
            let frac = pos - i as f64;
            if i + 1 < x.len() {
                x[i] * (1.0 - frac) + x[i + 1] * frac
            } else {
                x[x.len() - 1]
            }
        })
        .collect())
}
