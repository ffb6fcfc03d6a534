//! Central finite-difference check of the analytic gradients.

use super::{Mode, Model, NetError};

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub h: f64,
    /// Seed of the dropout masks, shared by every evaluation.
    pub seed: u64,
    /// How often `h` is halved when neither side of the stencil is free of
    /// ReLU or max-pool switches. Roundoff in the quotient grows as `1/h`.
    pub kink_retries: usize,
    /// Denominator floor of the relative error. At `h = 1e-4` roundoff puts
    /// about `1e-11` of noise on the quotient, so relative errors of `1e-5`
    /// are only resolvable for gradients above about `1e-6`.
    pub floor: f64,
    /// Check every `stride`-th element of each tensor.
    pub stride: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-4,
            seed: 0,
            kink_retries: 2,
            floor: 1e-6,
            stride: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: (String, usize),
    pub checked: usize,
    /// Elements whose central stencil at the initial `h` crossed a kink.
    pub kinks: usize,
    /// Elements with a kink on both sides at every tried `h`; excluded from
    /// `max_rel_error`.
    pub unresolved: usize,
    pub per_tensor: Vec<(String, f64)>,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let den = analytic.abs().max(numeric.abs()).max(floor);
    if den == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / den
    }
}

/// Compares every analytic gradient of `model` with finite differences in
/// training mode with fixed dropout masks.
///
/// The loss is piecewise smooth. A difference quotient is only used when all
/// its evaluation points share the base point's ReLU and max-pool pattern:
/// the central `(L(w + h) - L(w - h)) / 2h` first, then the second-order
/// one-sided `(-3 L(w) + 4 L(w +- h) - L(w +- 2h)) / +-2h` on a clean side,
/// then the same with `h` halved.
pub fn gradient_check(
    model: &Model<f64>,
    x: &[f64],
    labels: &[u8],
    b: usize,
    l: usize,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, NetError> {
    let mode = Mode::Train { seed: opts.seed };
    let (_, grads, _) = model.loss_and_gradients(x, labels, b, l, opts.seed)?;
    let (l0, base_fp) = model.loss_with_fingerprint(x, labels, b, l, mode)?;
    let mut m = model.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (String::new(), 0),
        checked: 0,
        kinks: 0,
        unresolved: 0,
        per_tensor: Vec::new(),
    };
    let names = model.param_names().to_vec();
    for (p, name) in names.iter().enumerate() {
        let mut tensor_max = 0.0f64;
        for i in (0..grads[p].len()).step_by(opts.stride.max(1)) {
            let orig = m.params()[p].data()[i];
            let mut eval = |delta: f64| -> Result<(f64, bool), NetError> {
                m.params_mut()[p].data_mut()[i] = orig + delta;
                let (loss, fp) = m.loss_with_fingerprint(x, labels, b, l, mode)?;
                m.params_mut()[p].data_mut()[i] = orig;
                Ok((loss, fp == base_fp))
            };
            let mut h = opts.h;
            let mut numeric = None;
            for attempt in 0..=opts.kink_retries {
                let (lp, cp) = eval(h)?;
                let (lm, cm) = eval(-h)?;
                if cp && cm {
                    numeric = Some((lp - lm) / (2.0 * h));
                    break;
                }
                if attempt == 0 {
                    report.kinks += 1;
                }
                if cp {
                    let (lpp, cpp) = eval(2.0 * h)?;
                    if cpp {
                        numeric = Some((-3.0 * l0 + 4.0 * lp - lpp) / (2.0 * h));
                        break;
                    }
                }
                if cm {
                    let (lmm, cmm) = eval(-2.0 * h)?;
                    if cmm {
                        numeric = Some((3.0 * l0 - 4.0 * lm + lmm) / (2.0 * h));
                        break;
                    }
                }
                h *= 0.5;
            }
            report.checked += 1;
            let Some(numeric) = numeric else {
                report.unresolved += 1;
                continue;
            };
            let e = relative_error(grads[p].data()[i], numeric, opts.floor);
            tensor_max = tensor_max.max(e);
            if e > report.max_rel_error {
                report.max_rel_error = e;
                report.worst = (name.clone(), i);
            }
        }
        report.per_tensor.push((name.clone(), tensor_max));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_cases() {
        assert_eq!(relative_error(0.0, 0.0, 0.0), 0.0);
        assert_eq!(relative_error(1.0, 0.5, 1e-6), 0.5);
        assert_eq!(relative_error(-2.0, 2.0, 1e-6), 2.0);
        assert_eq!(relative_error(1e-9, 2e-9, 1e-6), 1e-3);
    }
}
