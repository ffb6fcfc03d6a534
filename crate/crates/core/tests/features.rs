use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use somno::features::{mutual_info, relative_importance, stat_features, FeatureError, MiOptions};

fn noise(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn moments_follow_affine_maps(gain in 0.1f64..50.0, offset in -100.0f64..100.0, seed in any::<u64>()) {
        let x = noise(3000, seed);
        let y: Vec<f64> = x.iter().map(|v| gain * v + offset).collect();
        let a = stat_features(&x, 100.0).unwrap();
        let b = stat_features(&y, 100.0).unwrap();
        let tol = 1e-9 * (1.0 + offset.abs() + gain);
        prop_assert!((b.mean - (gain * a.mean + offset)).abs() < tol);
        prop_assert!((b.std - gain * a.std).abs() < tol);
        prop_assert!((b.min - (gain * a.min + offset)).abs() < tol);
        prop_assert!((b.median - (gain * a.median + offset)).abs() < tol);
        prop_assert!((b.peak_to_peak - gain * a.peak_to_peak).abs() < tol);
        prop_assert!((b.skewness - a.skewness).abs() < 1e-6);
        prop_assert!((b.kurtosis - a.kurtosis).abs() < 1e-6);
    }

    /// With rank scaling the estimate only sees the order of each feature.
    #[test]
    fn mi_ignores_monotone_transforms(seed in any::<u64>(), n in 40usize..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<u8> = (0..n).map(|_| rng.gen_range(0..5)).collect();
        let x: Vec<Vec<f64>> = y.iter().map(|&l| vec![f64::from(l) + rng.gen_range(-2.0..2.0), rng.gen()]).collect();
        let warped: Vec<Vec<f64>> = x.iter().map(|r| vec![r[0].powi(3) + 10.0, (5.0 * r[1]).exp()]).collect();
        let opts = MiOptions { seed, ..MiOptions::default() };
        prop_assert_eq!(mutual_info(&x, &y, &opts).unwrap(), mutual_info(&warped, &y, &opts).unwrap());
    }
}

#[test]
fn relative_importance_is_a_percentage_split() {
    let r = relative_importance(&[vec![1.0, 3.0, 0.0], vec![2.0, 2.0, 0.0]]).unwrap();
    let total: f64 = r.relative_importance.iter().sum();
    assert!((total - 100.0).abs() < 1e-9);
    // 25% and 50% average to 37.5 for the first feature
    assert!((r.relative_importance[0] - 37.5).abs() < 1e-9);
    assert_eq!(r.order()[0], 1);
    assert!(matches!(relative_importance(&[]), Err(FeatureError::NoNights)));
    assert!(matches!(
        relative_importance(&[vec![0.0, 0.0]]),
        Err(FeatureError::AllZeroScores(0))
    ));
}

#[test]
fn invalid_inputs() {
    assert!(matches!(stat_features(&[], 100.0), Err(FeatureError::EmptyEpoch)));
    assert!(matches!(
        stat_features(&[1.0, f64::NAN], 100.0),
        Err(FeatureError::NonFinite)
    ));
    let x = vec![vec![0.0]; 3];
    assert!(matches!(
        mutual_info(&x, &[0, 1], &MiOptions::default()),
        Err(FeatureError::LengthMismatch { .. })
    ));
    assert!(matches!(
        mutual_info(
            &x,
            &[0, 1, 2],
            &MiOptions {
                k: 0,
                ..MiOptions::default()
            }
        ),
        Err(FeatureError::InvalidK(0))
    ));
}
