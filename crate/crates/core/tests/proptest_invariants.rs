//! Property tests over arbitrary inputs.

use proptest::prelude::*;

use mscan_core::autodiff::{Primitive, Tape, Tensor};
use mscan_core::data::{chronological_split, InteractionRecord};
use mscan_core::eval::auc;

fn brute_force_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(&s, _)| s).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut total = 0.0;
    for &p in &pos {
        for &n in &neg {
            total += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
        }
    }
    Some(total / (pos.len() * neg.len()) as f64)
}

proptest! {
    #[test]
    fn softmax_normalizes_and_ignores_shifts(
        xs in prop::collection::vec(-40.0f64..40.0, 1..12),
        shift in -200.0f64..200.0,
    ) {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(xs.clone()));
        let shifted: Vec<f64> = xs.iter().map(|v| v + shift).collect();
        let b = tape.constant(Tensor::vector(shifted));
        let ya = tape.apply(Primitive::Softmax { axis: 0 }, &[a]).unwrap();
        let yb = tape.apply(Primitive::Softmax { axis: 0 }, &[b]).unwrap();
        let sum: f64 = tape.value(ya).data().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
        prop_assert!(tape.value(ya).data().iter().all(|&v| v >= 0.0));
        for (p, q) in tape.value(ya).data().iter().zip(tape.value(yb).data()) {
            prop_assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn split_holds_out_the_ceil_fraction_of_latest_records(
        stamps in prop::collection::vec(0i64..50, 1..80),
    ) {
        let records: Vec<InteractionRecord> = stamps
            .iter()
            .enumerate()
            .map(|(i, &ts)| InteractionRecord {
                user_id: 0,
                item_id: i as u32,
                scenario_id: 0,
                timestamp: ts,
                click: true,
                interest: None,
            })
            .collect();
        let n = records.len();
        let (train, test) = chronological_split(records, 0.4).unwrap();
        prop_assert_eq!(test.len(), (0.4 * n as f64).ceil() as usize);
        prop_assert_eq!(train.len() + test.len(), n);
        let max_train = train.iter().map(|r| r.timestamp).max();
        let min_test = test.iter().map(|r| r.timestamp).min().unwrap();
        if let Some(max_train) = max_train {
            prop_assert!(max_train <= min_test);
        }
    }

    #[test]
    fn rank_sum_auc_equals_pair_counting(
        pairs in prop::collection::vec((0u8..6, any::<bool>()), 2..120),
    ) {
        // Small score grid forces ties.
        let scores: Vec<f64> = pairs.iter().map(|(s, _)| *s as f64 / 3.0).collect();
        let labels: Vec<bool> = pairs.iter().map(|(_, l)| *l).collect();
        match brute_force_auc(&scores, &labels) {
            None => prop_assert!(auc(&scores, &labels).is_err()),
            Some(expected) => {
                let got = auc(&scores, &labels).unwrap();
                prop_assert!((got - expected).abs() < 1e-12);
            }
        }
    }
}
