use imold_core::metrics::{accuracy, average_precision, average_precision_single, mae, roc_auc};
use imold_core::Error;
use proptest::prelude::*;

/// Pairwise definition: P(score_pos > score_neg) + ½ P(equal).
fn auc_oracle(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

#[test]
fn auc_examples() {
    assert_eq!(roc_auc(&[0.2, 0.8], &[false, true]).unwrap(), 1.0);
    assert_eq!(roc_auc(&[0.8, 0.2], &[false, true]).unwrap(), 0.0);
    assert_eq!(roc_auc(&[0.3; 4], &[false, true, true, false]).unwrap(), 0.5);
    assert!(matches!(roc_auc(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedMetric(_))));
}

#[test]
fn ap_examples() {
    let labels = [true, false, false, false];
    assert_eq!(average_precision_single(&[0.9, 0.1, 0.2, 0.3], &labels), Some(1.0));
    assert_eq!(average_precision_single(&[0.0, 0.1, 0.2, 0.3], &labels), Some(0.25));
    let ap = average_precision_single(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap();
    assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    assert_eq!(average_precision_single(&[0.5, 0.4], &[false, false]), None);
}

#[test]
fn multitask_ap_averages_defined_tasks() {
    // task 0: perfect; task 1: positive last of two observed; task 2: no positives
    let scores = [0.9, 0.1, 0.5, 0.2, 0.8, 0.5, 0.1, 0.0, 0.5];
    let labels = [1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let mask = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 1.0];
    let (per_task, mean) = average_precision(&scores, &labels, &mask, 3).unwrap();
    assert_eq!(per_task, vec![Some(1.0), Some(0.5), None]);
    assert!((mean - 0.75).abs() < 1e-15);
}

#[test]
fn mae_and_accuracy_examples() {
    assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
    assert_eq!(mae(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), 1.0);
    assert_eq!(accuracy(&[-1.0, 2.0, 0.5], &[false, true, false]).unwrap(), 2.0 / 3.0);
}

fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(prop_oneof![-3.0..3.0f64, Just(0.0), Just(1.0)], n),
            prop::collection::vec(any::<bool>(), n),
        )
    })
    .prop_filter("both classes", |(_, l)| l.iter().any(|&b| b) && l.iter().any(|&b| !b))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn auc_matches_pairwise_definition((s, l) in scored_labels()) {
        prop_assert!((roc_auc(&s, &l).unwrap() - auc_oracle(&s, &l)).abs() < 1e-12);
    }

    #[test]
    fn auc_is_invariant_under_monotone_maps((s, l) in scored_labels(), a in 0.1..5.0f64, b in -3.0..3.0f64) {
        let base = roc_auc(&s, &l).unwrap();
        let affine: Vec<f64> = s.iter().map(|x| a * x + b).collect();
        let cubed: Vec<f64> = s.iter().map(|x| x * x * x + x).collect();
        let squashed: Vec<f64> = s.iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect();
        for t in [affine, cubed, squashed] {
            prop_assert!((roc_auc(&t, &l).unwrap() - base).abs() < 1e-12);
        }
    }

    #[test]
    fn auc_of_negation_is_complement((s, l) in scored_labels()) {
        let neg: Vec<f64> = s.iter().map(|x| -x).collect();
        prop_assert!((roc_auc(&s, &l).unwrap() + roc_auc(&neg, &l).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shifting_predictions_moves_mae_by_at_most_the_shift(
        p in prop::collection::vec(-5.0..5.0f64, 1..30),
        c in -2.0..2.0f64,
    ) {
        let t: Vec<f64> = p.iter().map(|x| x.sin()).collect();
        let shifted: Vec<f64> = p.iter().map(|x| x + c).collect();
        let delta = (mae(&shifted, &t).unwrap() - mae(&p, &t).unwrap()).abs();
        prop_assert!(delta <= c.abs() + 1e-12);
    }
}
