// Oracles index the matrix the way the formulas are written.
#![allow(clippy::needless_range_loop)]

use proptest::prelude::*;

use somno::metrics::{confusion, kappa, read_hypnogram, report, write_hypnogram, ConfusionMatrix, HypnogramRow};
use somno::pipeline::StageLabel;

fn matrix() -> impl Strategy<Value = ConfusionMatrix> {
    // zeros are common so empty rows and columns get exercised
    let cell = prop_oneof![3 => Just(0u64), 7 => 0u64..500];
    prop::array::uniform5(prop::array::uniform5(cell))
        .prop_filter("non-empty", |c| c.iter().flatten().sum::<u64>() > 0)
        .prop_map(|counts| ConfusionMatrix { counts })
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

proptest! {
    #[test]
    fn report_matches_float_oracle(cm in matrix()) {
        let r = report(&cm).unwrap();
        let c = &cm.counts;
        let total: u64 = c.iter().flatten().sum();
        let mut macro_f1 = 0.0;
        let mut weighted_recall = 0.0;
        for k in 0..5 {
            let row: u64 = c[k].iter().sum();
            let col: u64 = (0..5).map(|t| c[t][k]).sum();
            let p = if col == 0 { 0.0 } else { c[k][k] as f64 / col as f64 };
            let rc = if row == 0 { 0.0 } else { c[k][k] as f64 / row as f64 };
            let f = if p + rc == 0.0 { 0.0 } else { 2.0 * p * rc / (p + rc) };
            prop_assert!(close(r.classes[k].precision, p) && close(r.classes[k].recall, rc) && close(r.classes[k].f1, f));
            prop_assert_eq!(r.classes[k].support, row);
            prop_assert_eq!(r.classes[k].degenerate, row == 0 || col == 0);
            macro_f1 += f / 5.0;
            weighted_recall += rc * row as f64 / total as f64;
        }
        prop_assert!(close(r.macro_avg.f1, macro_f1));
        prop_assert!(close(r.weighted.recall, weighted_recall));

        // exact identities
        let acc = cm.diagonal() as f64 / total as f64;
        prop_assert_eq!(r.accuracy, acc);
        prop_assert_eq!(r.micro.precision, acc);
        prop_assert_eq!(r.micro.recall, acc);
        prop_assert_eq!(r.micro.f1, acc);
        prop_assert_eq!(r.weighted.recall, acc);

        let chance: f64 = (0..5).map(|k| cm.row_sum(k) as f64 * cm.col_sum(k) as f64).sum::<f64>() / (total as f64).powi(2);
        let expected = if chance == 1.0 { 0.0 } else { (acc - chance) / (1.0 - chance) };
        prop_assert!((kappa(&cm).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn class_relabelling_permutes_scores(cm in matrix(), perm in Just([0usize, 1, 2, 3, 4]).prop_shuffle()) {
        let a = report(&cm).unwrap();
        let b = report(&cm.permuted(&perm)).unwrap();
        for k in 0..5 {
            prop_assert_eq!(&a.classes[k], &b.classes[perm[k]]);
        }
        prop_assert_eq!(a.accuracy, b.accuracy);
        prop_assert_eq!(a.kappa, b.kappa);
        prop_assert!(close(a.macro_avg.f1, b.macro_avg.f1));
    }

    #[test]
    fn confusion_counts_pairs(pairs in prop::collection::vec((0u8..5, 0u8..5), 1..300)) {
        let (t, p): (Vec<u8>, Vec<u8>) = pairs.iter().copied().unzip();
        let cm = confusion(&t, &p).unwrap();
        prop_assert_eq!(cm.total(), pairs.len() as u64);
        for (a, b) in pairs {
            prop_assert!(cm.counts[a as usize][b as usize] > 0);
        }
    }
}

#[test]
fn degenerate_inputs() {
    assert!(report(&ConfusionMatrix::default()).is_err());
    assert!(confusion(&[0, 1], &[0]).is_err());
    assert!(confusion(&[5], &[0]).is_err());
    // a single predicted class: chance agreement equals accuracy
    let cm = confusion(&[2, 2, 2], &[2, 2, 2]).unwrap();
    assert_eq!(kappa(&cm).unwrap(), 0.0);
    assert_eq!(report(&cm).unwrap().accuracy, 1.0);
}

#[test]
fn hypnogram_csv_round_trip() {
    let rows: Vec<HypnogramRow> = (0..12u32)
        .map(|i| {
            let truth = if i % 4 == 0 {
                None
            } else {
                StageLabel::from_code((i % 5) as u8)
            };
            HypnogramRow::new(
                i,
                truth,
                StageLabel::from_code((i * 3 % 5) as u8).unwrap(),
                0.25 + f64::from(i) / 32.0,
            )
        })
        .collect();
    let mut buf = Vec::new();
    write_hypnogram(&rows, &mut buf).unwrap();
    assert_eq!(read_hypnogram(&buf[..]).unwrap(), rows);
}
