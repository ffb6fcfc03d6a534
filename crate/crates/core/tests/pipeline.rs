use std::collections::HashSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use somno::edf::{Recording, StageAnnotation};
use somno::pipeline::{
    decode_epd, encode_epd, kfold_split, output_len, prepare_night, resample, LabeledEpoch, NightId, Normalization,
    PrepOptions, SplitOptions, StageLabel,
};
use somno::EPOCH_SAMPLES;

const TEXTS: [(&str, Option<StageLabel>); 7] = [
    ("Sleep stage W", Some(StageLabel::Wake)),
    ("Sleep stage 1", Some(StageLabel::N1)),
    ("Sleep stage 2", Some(StageLabel::N2)),
    ("Sleep stage 3", Some(StageLabel::N3)),
    ("Sleep stage 4", Some(StageLabel::N3)),
    ("Sleep stage R", Some(StageLabel::Rem)),
    ("Movement time", None),
];

fn noise(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-50.0..50.0)).collect()
}

/// Stage labels that should survive exclusion and wake trimming.
fn expected_labels(runs: &[(usize, usize)], boundary: usize) -> Vec<StageLabel> {
    let kept: Vec<StageLabel> = runs
        .iter()
        .flat_map(|&(t, n)| std::iter::repeat_n(TEXTS[t].1, n))
        .flatten()
        .collect();
    let sleep: Vec<usize> = (0..kept.len()).filter(|&i| kept[i] != StageLabel::Wake).collect();
    match (sleep.first(), sleep.last()) {
        (Some(&first), Some(&last)) => {
            let lo = first.saturating_sub(boundary);
            let hi = (last + boundary).min(kept.len() - 1);
            kept[lo..=hi].to_vec()
        }
        _ => kept,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn epoch_count_arithmetic(
        runs in prop::collection::vec((0usize..7, 1usize..6), 1..10),
        lead in 0usize..8,
        tail in 0usize..8,
        boundary in 0usize..5,
        rate in prop::sample::select(vec![100u32, 200, 256]),
    ) {
        let mut runs = runs;
        runs.insert(0, (0, lead));
        runs.push((0, tail));
        let total: usize = runs.iter().map(|r| r.1).sum();
        let mut onset = 0.0;
        let annotations: Vec<StageAnnotation> = runs
            .iter()
            .filter(|r| r.1 > 0)
            .map(|&(t, n)| {
                let a = StageAnnotation::new(onset, 30.0 * n as f64, TEXTS[t].0);
                onset += a.duration_s;
                a
            })
            .collect();
        let rec = Recording {
            channel_label: "EEG Fpz-Cz".into(),
            sample_rate_hz: f64::from(rate),
            samples: noise(total * 30 * rate as usize, total as u64),
            clamped_samples: 0,
        };
        let opts = PrepOptions { boundary_epochs: boundary, ..PrepOptions::default() };
        let expected = expected_labels(&runs, boundary);
        match prepare_night(&rec, &annotations, NightId(4001), &opts) {
            Ok(out) => {
                let labels: Vec<StageLabel> = out.epochs.iter().map(|e| e.label).collect();
                prop_assert_eq!(labels, expected);
                let excluded: usize = runs.iter().filter(|r| r.0 == 6).map(|r| r.1).sum();
                prop_assert_eq!(out.excluded, excluded);
                prop_assert!(out.epochs.iter().all(|e| e.samples.len() == EPOCH_SAMPLES));
                let n = (out.epochs.len() * EPOCH_SAMPLES) as f64;
                let mean = out.epochs.iter().flat_map(|e| &e.samples).sum::<f64>() / n;
                let var = out.epochs.iter().flat_map(|e| &e.samples).map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                prop_assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-9);
            }
            Err(e) => prop_assert!(expected.is_empty(), "{e}"),
        }
    }

    #[test]
    fn resample_is_linear(
        n in 1usize..2000,
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        seed in any::<u64>(),
        src in prop::sample::select(vec![128.0, 200.0, 256.0, 500.0]),
        anti_alias in any::<bool>(),
    ) {
        let x = noise(n, seed);
        let y = noise(n, seed ^ 1);
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let rx = resample(&x, src, 100.0, anti_alias).unwrap();
        let ry = resample(&y, src, 100.0, anti_alias).unwrap();
        let rm = resample(&mix, src, 100.0, anti_alias).unwrap();
        prop_assert_eq!(rm.len(), output_len(n, src, 100.0));
        for i in 0..rm.len() {
            prop_assert!((rm[i] - (a * rx[i] + b * ry[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn epd_round_trip(labels in prop::collection::vec(0u8..5, 0..6), night in any::<u32>(), seed in any::<u64>()) {
        let epochs: Vec<LabeledEpoch> = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| LabeledEpoch {
                samples: noise(EPOCH_SAMPLES, seed + i as u64).into_iter().map(|v| f64::from(v as f32)).collect(),
                label: StageLabel::from_code(l).unwrap(),
                source_night: NightId(night),
                epoch_index: i as u32,
            })
            .collect();
        let bytes = encode_epd(&epochs);
        prop_assert_eq!(bytes.len(), 12 + epochs.len() * (5 + 4 * EPOCH_SAMPLES));
        prop_assert_eq!(decode_epd(&bytes).unwrap(), epochs);
    }
}

#[test]
fn resampling_keeps_dc_and_epoch_lengths() {
    assert_eq!(output_len(7680, 256.0, 100.0), EPOCH_SAMPLES);
    assert_eq!(output_len(6000, 200.0, 100.0), EPOCH_SAMPLES);
    let out = resample(&vec![4.5; 7680 * 3], 256.0, 100.0, true).unwrap();
    assert_eq!(out.len(), 3 * EPOCH_SAMPLES);
    // away from the filter's edge transient
    assert!(out[200..out.len() - 200].iter().all(|v| (v - 4.5).abs() < 1e-9));
    assert!(resample(&[1.0; 10], 50.0, 100.0, true).is_err());
}

#[test]
fn per_epoch_normalization() {
    let runs = [(0usize, 2usize), (2, 3), (0, 2)];
    let mut onset = 0.0;
    let annotations: Vec<StageAnnotation> = runs
        .iter()
        .map(|&(t, n)| {
            let a = StageAnnotation::new(onset, 30.0 * n as f64, TEXTS[t].0);
            onset += a.duration_s;
            a
        })
        .collect();
    let mut samples = noise(7 * EPOCH_SAMPLES, 3);
    // a different scale per epoch
    for (i, c) in samples.chunks_mut(EPOCH_SAMPLES).enumerate() {
        c.iter_mut().for_each(|v| *v = *v * (i + 1) as f64 + i as f64);
    }
    let rec = Recording {
        channel_label: "x".into(),
        sample_rate_hz: 100.0,
        samples,
        clamped_samples: 0,
    };
    let opts = PrepOptions {
        normalization: Normalization::Epoch,
        ..PrepOptions::default()
    };
    let out = prepare_night(&rec, &annotations, NightId(1), &opts).unwrap();
    assert_eq!(out.epochs.len(), 7);
    for e in &out.epochs {
        let m = e.samples.iter().sum::<f64>() / EPOCH_SAMPLES as f64;
        let v = e.samples.iter().map(|x| (x - m).powi(2)).sum::<f64>() / EPOCH_SAMPLES as f64;
        assert!(m.abs() < 1e-9 && (v - 1.0).abs() < 1e-9);
    }
}

#[test]
fn kfold_folds_partition_subjects() {
    let ids: Vec<NightId> = (0..13)
        .flat_map(|s| [NightId(4000 + 10 * s + 1), NightId(4000 + 10 * s + 2)])
        .collect();
    let k = 5;
    let mut tested = HashSet::new();
    for fold in 0..k {
        let s = kfold_split(&ids, k, fold, 11, &SplitOptions::default()).unwrap();
        let subjects = |v: &[NightId]| v.iter().map(|n| n.subject()).collect::<HashSet<u32>>();
        let (tr, va, te) = (subjects(&s.train), subjects(&s.validation), subjects(&s.test));
        assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
        assert_eq!(s.train.len() + s.validation.len() + s.test.len(), ids.len());
        assert!(!s.validation.is_empty());
        for n in &s.test {
            assert!(tested.insert(*n), "night {n} tested twice");
        }
    }
    assert_eq!(tested.len(), ids.len());
    assert!(kfold_split(&ids, 14, 0, 0, &SplitOptions::default()).is_err());
    assert!(kfold_split(&ids, 5, 5, 0, &SplitOptions::default()).is_err());
}
