//! Nearest-neighbour mutual information between a continuous feature and a
//! discrete label (Ross, 2014), the estimator behind scikit-learn's
//! `mutual_info_classif`.
//!
//! For sample `i` of class `c`, `r_i` is the distance to its k-th nearest
//! same-class neighbour and `m_i` the number of samples (any class, `i`
//! included) strictly closer than `r_i`:
//!
//! ```text
//! I = psi(N) - <psi(N_c)> + psi(k) - <psi(m_i)>
//! ```
//!
//! Features are one-dimensional, so neighbour searches run on sorted arrays.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FeatureError;

/// Digamma function. Shifts the argument above 6 with
/// `psi(x) = psi(x + 1) - 1/x`, then uses the asymptotic series.
pub fn digamma(mut x: f64) -> f64 {
    if x.is_nan() || x == f64::NEG_INFINITY {
        return f64::NAN;
    }
    if x <= 0.0 && x.floor() == x {
        return f64::NAN;
    }
    let mut acc = 0.0;
    if x < 0.0 {
        // reflection: psi(1 - x) - psi(x) = pi cot(pi x)
        let pi = std::f64::consts::PI;
        acc -= pi / (pi * x).tan();
        x = 1.0 - x;
    }
    while x < 6.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Bernoulli terms B_2n / (2n x^2n) up to x^-14
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
    acc + x.ln() - 0.5 * inv - series
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiScaling {
    /// Replace values by their average rank scaled to [0, 1].
    #[default]
    Rank,
    /// Divide by the population standard deviation.
    Std,
}

#[derive(Debug, Clone)]
pub struct MiOptions {
    pub k: usize,
    pub seed: u64,
    pub scaling: MiScaling,
}

impl Default for MiOptions {
    fn default() -> Self {
        Self {
            k: 3,
            seed: 0,
            scaling: MiScaling::Rank,
        }
    }
}

const JITTER: f64 = 1e-10;

/// Average ranks (ties share the mean of their positions) scaled to [0, 1].
fn rank_scale(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0;
        for &p in &idx[i..=j] {
            ranks[p] = r;
        }
        i = j + 1;
    }
    let denom = (n.max(2) - 1) as f64;
    ranks.iter_mut().for_each(|r| *r /= denom);
    ranks
}

/// Distance from `sorted[p]` to its k-th nearest neighbour in `sorted`.
fn kth_neighbour_distance(sorted: &[f64], p: usize, k: usize) -> f64 {
    let v = sorted[p];
    let (mut lo, mut hi) = (p, p + 1);
    let mut d = 0.0;
    for _ in 0..k {
        let left = if lo > 0 { Some(v - sorted[lo - 1]) } else { None };
        let right = sorted.get(hi).map(|&x| x - v);
        d = match (left, right) {
            (Some(l), Some(r)) if l <= r => {
                lo -= 1;
                l
            }
            (_, Some(r)) => {
                hi += 1;
                r
            }
            (Some(l), None) => {
                lo -= 1;
                l
            }
            (None, None) => unreachable!("class smaller than k + 1"),
        };
    }
    d
}

/// Mutual information estimate for one (already scaled) feature.
/// `labels` must only contain classes with more than `k` members.
pub(crate) fn mi_single(x: &[f64], labels: &[u8], k: usize) -> f64 {
    let n = x.len();
    let mut all = x.to_vec();
    all.sort_by(f64::total_cmp);

    let mut psi_nc = 0.0;
    let mut psi_m = 0.0;
    let mut classes: Vec<u8> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    for c in classes {
        let mut members: Vec<f64> = x.iter().zip(labels).filter(|(_, &l)| l == c).map(|(&v, _)| v).collect();
        members.sort_by(f64::total_cmp);
        let nc = members.len();
        psi_nc += nc as f64 * digamma(nc as f64);
        for p in 0..nc {
            let r = kth_neighbour_distance(&members, p, k);
            let v = members[p];
            // strictly inside (v - r, v + r); the sample itself always counts
            let lo = all.partition_point(|&a| a <= v - r);
            let hi = all.partition_point(|&a| a < v + r);
            let m = (hi - lo).max(1);
            psi_m += digamma(m as f64);
        }
    }
    let nf = n as f64;
    (digamma(nf) - psi_nc / nf + digamma(k as f64) - psi_m / nf).max(0.0)
}

/// Per-feature mutual information with the labels.
///
/// `features` is row-major, one row per sample. Classes with `k` or fewer
/// members are dropped (with a warning) before estimation. The result is
/// deterministic for a given `seed`.
pub fn mutual_info(features: &[Vec<f64>], labels: &[u8], opts: &MiOptions) -> Result<Vec<f64>, FeatureError> {
    if features.len() != labels.len() {
        return Err(FeatureError::LengthMismatch {
            features: features.len(),
            labels: labels.len(),
        });
    }
    let k = opts.k;
    if k == 0 {
        return Err(FeatureError::InvalidK(k));
    }
    let d = features.first().map_or(0, Vec::len);
    if features.iter().any(|r| r.len() != d) {
        return Err(FeatureError::RaggedRows);
    }

    let mut counts = [0usize; 256];
    for &l in labels {
        counts[l as usize] += 1;
    }
    for (c, &n) in counts.iter().enumerate() {
        if n > 0 && n <= k {
            warn!("class {c} has only {n} samples (k = {k}); dropped from MI estimate");
        }
    }
    let keep: Vec<usize> = (0..labels.len()).filter(|&i| counts[labels[i] as usize] > k).collect();
    let n = keep.len();
    if n <= k + 1 {
        return Err(FeatureError::TooFewSamples { n, k });
    }
    let kept_labels: Vec<u8> = keep.iter().map(|&i| labels[i]).collect();

    let mut scores = Vec::with_capacity(d);
    #[allow(clippy::needless_range_loop)] // j indexes a column of row-major features
    for j in 0..d {
        let col: Vec<f64> = keep.iter().map(|&i| features[i][j]).collect();
        if col.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite);
        }
        if col.iter().all(|&v| v == col[0]) {
            scores.push(0.0);
            continue;
        }
        let mut scaled = match opts.scaling {
            MiScaling::Rank => rank_scale(&col),
            MiScaling::Std => {
                let (_, s, _) = crate::pipeline::mean_std(col.iter());
                col.iter().map(|v| v / s).collect()
            }
        };
        let magnitude = match opts.scaling {
            MiScaling::Rank => 1.0,
            MiScaling::Std => (scaled.iter().map(|v| v.abs()).sum::<f64>() / n as f64).max(1.0),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(j as u64);
        for v in scaled.iter_mut() {
            *v += JITTER * magnitude * rng.gen_range(-0.5..0.5);
        }
        scores.push(mi_single(&scaled, &kept_labels, k));
    }
    Ok(scores)
}
