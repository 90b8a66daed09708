//! Property tests for the library invariants.

use proptest::prelude::*;

use har_core::dataset::TimeSeriesRecording;
use har_core::eval::{confusion, metrics, Averaging};
use har_core::preprocess::{one_hot, segment, split};
use har_core::tensor::{maxpool1d, maxpool1d_backward, softmax, NumericArray};

fn finite_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, len..=len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn softmax_is_a_shift_invariant_distribution(
        values in prop::collection::vec(-100.0f64..100.0, 1..24),
        shift in -500.0f64..500.0,
    ) {
        let p = softmax(&NumericArray::vector(&values)).unwrap();
        let sum: f64 = p.data().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
        prop_assert!(p.data().iter().all(|&v| (0.0..=1.0).contains(&v)));

        let shifted: Vec<f64> = values.iter().map(|v| v + shift).collect();
        let q = softmax(&NumericArray::vector(&shifted)).unwrap();
        for (a, b) in p.data().iter().zip(q.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        // the prediction argmax is therefore shift-invariant too
        let arg = |v: &[f64]| v.iter().enumerate().fold(0, |best, (i, &x)| {
            if x > v[best] { i } else { best }
        });
        prop_assert_eq!(arg(p.data()), arg(q.data()));
    }

    #[test]
    fn segmentation_stays_in_bounds(
        t in 1usize..400,
        window in 1usize..80,
        stride in 1usize..40,
    ) {
        let rec = TimeSeriesRecording {
            samples: NumericArray::from_vec(&[t, 1], (0..t).map(|i| i as f64).collect()).unwrap(),
            subject: String::new(),
            activity: String::new(),
            source_path: std::path::PathBuf::new(),
        };
        let windows = segment(&rec, window, stride, 0).unwrap();
        let expect = if t >= window { (t - window) / stride + 1 } else { 0 };
        prop_assert_eq!(windows.len(), expect);
        for (i, w) in windows.iter().enumerate() {
            // first entry reveals the start offset; the last must be in range
            let start = w.data.data()[0] as usize;
            prop_assert_eq!(start, i * stride);
            prop_assert!(start + window <= t);
        }
    }

    #[test]
    fn split_partitions_exactly(n in 1usize..500, seed in any::<u64>()) {
        let (train, test) = split(n, 0.7, seed).unwrap();
        let mut seen = vec![false; n];
        for &i in train.iter().chain(&test) {
            prop_assert!(!seen[i]);
            seen[i] = true;
        }
        prop_assert!(seen.iter().all(|&s| s));
        prop_assert_eq!(train.len(), (0.7 * n as f64).round() as usize);
    }

    #[test]
    fn one_hot_is_a_unit_indicator(k in 1usize..60, label_raw in any::<usize>()) {
        let label = label_raw % k;
        let target = one_hot(label, k).unwrap();
        let sum: f64 = target.values().data().iter().sum();
        prop_assert_eq!(sum, 1.0);
        prop_assert!(target.values().data().iter().all(|&v| v == 0.0 || v == 1.0));
        prop_assert_eq!(target.label(), label);
    }

    #[test]
    fn maxpool_backward_conserves_mass(
        values in finite_vec(48),
        window in 1usize..8,
        stride in 1usize..5,
    ) {
        let input = NumericArray::from_vec(&[2, 24], values).unwrap();
        let (out, argmax) = maxpool1d(&input, window, stride).unwrap();
        let upstream_data: Vec<f64> = (0..out.len()).map(|i| (i as f64 * 0.7).sin()).collect();
        let upstream = NumericArray::from_vec(out.shape(), upstream_data).unwrap();
        let grad = maxpool1d_backward(24, &argmax, &upstream).unwrap();
        let up_sum: f64 = upstream.data().iter().sum();
        let grad_sum: f64 = grad.data().iter().sum();
        prop_assert!((up_sum - grad_sum).abs() < 1e-9);
    }

    #[test]
    fn confusion_row_and_column_totals(
        labels in prop::collection::vec((0usize..6, 0usize..6), 1..200),
    ) {
        let preds: Vec<usize> = labels.iter().map(|(p, _)| *p).collect();
        let trues: Vec<usize> = labels.iter().map(|(_, t)| *t).collect();
        let names = (0..6).map(|i| format!("c{i}")).collect();
        let cm = confusion(&preds, &trues, names).unwrap();
        let rows: u64 = (0..6).map(|i| cm.row_sum(i)).sum();
        let cols: u64 = (0..6).map(|i| cm.col_sum(i)).sum();
        prop_assert_eq!(rows, labels.len() as u64);
        prop_assert_eq!(cols, labels.len() as u64);
        prop_assert_eq!(cm.total(), labels.len() as u64);

        let m = metrics(&cm, Averaging::Micro).unwrap();
        prop_assert_eq!(m.precision, cm.accuracy());
        prop_assert_eq!(m.recall, cm.accuracy());
    }
}
