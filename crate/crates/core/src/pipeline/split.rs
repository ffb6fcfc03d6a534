//! Subject-grouped k-fold splits.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{NightId, PipelineError};

/// Night lists for one fold. Serialized as `{"train":[..],"validation":[..],"test":[..]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<NightId>,
    pub validation: Vec<NightId>,
    pub test: Vec<NightId>,
}

#[derive(Debug, Clone)]
pub struct SplitOptions {
    /// Fraction of the non-test subjects used for validation (at least one
    /// subject whenever two or more remain).
    pub validation_fraction: f64,
}

impl Default for SplitOptions {
    fn default() -> Self {
        // 4 of 37 nights
        Self {
            validation_fraction: 4.0 / 37.0,
        }
    }
}

/// Fold `fold` of a `k`-fold, subject-disjoint split of `night_ids`.
///
/// Subjects are shuffled once with `seed` and dealt round-robin into folds;
/// the validation subjects are drawn from the remaining ones with a
/// fold-dependent stream, so they rotate across folds.
pub fn kfold_split(
    night_ids: &[NightId],
    k: usize,
    fold: usize,
    seed: u64,
    opts: &SplitOptions,
) -> Result<DatasetSplit, PipelineError> {
    if k < 2 || fold >= k {
        return Err(PipelineError::InvalidFold { k, fold });
    }
    let mut by_subject: BTreeMap<u32, Vec<NightId>> = BTreeMap::new();
    for &n in night_ids {
        let nights = by_subject.entry(n.subject()).or_default();
        if !nights.contains(&n) {
            nights.push(n);
        }
    }
    let subjects: Vec<u32> = by_subject.keys().copied().collect();
    if k > subjects.len() {
        return Err(PipelineError::TooFewSubjects {
            k,
            subjects: subjects.len(),
        });
    }
    let mut order = subjects.clone();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    type Ranked = Vec<(usize, u32)>;
    let (test_subjects, mut rest): (Ranked, Ranked) = order.into_iter().enumerate().partition(|(i, _)| i % k == fold);
    rest.shuffle(&mut ChaCha8Rng::seed_from_u64(
        seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(fold as u64 + 1)),
    ));

    let n_val = if rest.len() >= 2 {
        ((opts.validation_fraction * rest.len() as f64).round() as usize).clamp(1, rest.len() - 1)
    } else {
        0
    };
    let collect = |subs: &[(usize, u32)]| -> Vec<NightId> {
        let mut v: Vec<NightId> = subs.iter().flat_map(|(_, s)| by_subject[s].iter().copied()).collect();
        v.sort();
        v
    };
    Ok(DatasetSplit {
        test: collect(&test_subjects),
        validation: collect(&rest[..n_val]),
        train: collect(&rest[n_val..]),
    })
}
