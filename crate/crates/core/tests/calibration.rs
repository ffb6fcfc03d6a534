use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use somno::calibrate::{fit_wake_profile, CalibrationError, CalibrationProfile};
use somno::net::{Model, ModelConfig};
use somno::pipeline::StageLabel;
use somno::synth::synth_epoch;

fn wake(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| synth_epoch(StageLabel::Wake, 100.0, &mut rng)).collect()
}

fn affine(epochs: &[Vec<f64>], gain: f64, offset: f64) -> Vec<Vec<f64>> {
    epochs
        .iter()
        .map(|e| e.iter().map(|x| gain * x + offset).collect())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// A device that differs by gain and offset calibrates to the same input.
    #[test]
    fn calibration_removes_gain_and_offset(gain in 0.01f64..100.0, offset in -500.0f64..500.0, seed in any::<u64>()) {
        let reference = wake(2, seed);
        let foreign = affine(&reference, gain, offset);
        let a = fit_wake_profile(&reference).unwrap();
        let b = fit_wake_profile(&foreign).unwrap();
        prop_assert!((b.mean - (gain * a.mean + offset)).abs() < 1e-9 * (1.0 + b.mean.abs()));
        prop_assert!((b.std / a.std - gain).abs() < 1e-9 * gain);
        for (x, y) in reference.iter().zip(&foreign) {
            for (p, q) in a.apply(x).iter().zip(&b.apply(y)) {
                prop_assert!((p - q).abs() < 1e-7);
            }
            let back = b.invert(&b.apply(y));
            prop_assert!(back.iter().zip(y).all(|(u, v)| (u - v).abs() < 1e-9 * (1.0 + v.abs())));
        }
    }
}

#[test]
fn calibrated_predictions_ignore_device_gain() {
    let model = Model::<f32>::new(ModelConfig::default(), 2).unwrap();
    let calib = wake(2, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let epoch = synth_epoch(StageLabel::N2, 100.0, &mut rng);
    let run = |gain: f64, offset: f64| {
        let profile = fit_wake_profile(&affine(&calib, gain, offset)).unwrap();
        let x: Vec<f32> = profile
            .apply(&affine(std::slice::from_ref(&epoch), gain, offset)[0])
            .iter()
            .map(|&v| v as f32)
            .collect();
        model.predict(&x, 1, 1).unwrap()
    };
    let base = run(1.0, 0.0);
    for (g, o) in [(0.2, 40.0), (7.5, -300.0)] {
        let other = run(g, o);
        for (p, q) in base.iter().zip(&other) {
            assert!((p - q).abs() < 1e-5, "gain {g}: {p} vs {q}");
        }
    }
}

#[test]
fn profile_file_round_trip_and_rejections() {
    let p = fit_wake_profile(&wake(1, 3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("profile.json");
    p.save(&path).unwrap();
    assert_eq!(CalibrationProfile::load(&path).unwrap(), p);

    let bad = p.to_json().replace(&format!("\"std\": {}", p.std), "\"std\": 0.0");
    assert_ne!(bad, p.to_json());
    assert!(matches!(
        CalibrationProfile::from_json(&bad),
        Err(CalibrationError::InvalidProfile(_))
    ));
    assert!(matches!(
        fit_wake_profile(&[]),
        Err(CalibrationError::InsufficientData(0))
    ));
    assert!(matches!(
        fit_wake_profile(&[vec![2.0; 3000]]),
        Err(CalibrationError::ZeroVariance)
    ));
}
