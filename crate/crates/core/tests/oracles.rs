mod common;

use common::*;
use cytobench::classifiers::*;
use cytobench::data::{BinaryLabel, Dataset};
use cytobench::metrics::{compute_metrics, confusion, Metric};
use cytobench::nn::{conv2d_forward, Conv2d, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_dataset(rng: &mut ChaCha8Rng, n: usize, d: usize, integer: bool) -> Dataset<f64> {
    let mut labels = random_labels(rng, n, 0.5);
    labels[0] = BinaryLabel::Normal;
    labels[1] = BinaryLabel::Abnormal;
    let features = (0..n)
        .map(|i| {
            let shift = if labels[i].is_positive() { 0.8 } else { 0.0 };
            (0..d)
                .map(|_| {
                    if integer {
                        rng.random_range(0..4) as f64
                    } else {
                        rng.random::<f64>() * 2.0 - 1.0 + shift
                    }
                })
                .collect()
        })
        .collect();
    Dataset::new(features, labels).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_match_per_sample_counting(seed in any::<u64>(), n in 1usize..2000, bias in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = random_labels(&mut rng, n, bias);
        let pred = random_labels(&mut rng, n, 1.0 - bias);
        let cm = confusion(&pred, &truth).unwrap();
        prop_assert_eq!(cm, brute_confusion(&pred, &truth));
        let report = compute_metrics(&cm).unwrap();
        for m in Metric::ALL {
            prop_assert_eq!(report.rate(m), brute_rate(&cm, m));
        }
    }

    #[test]
    fn knn_matches_exhaustive_scan(
        seed in any::<u64>(),
        k in 1usize..12,
        p in prop::sample::select(vec![1.0, 1.5, 2.0, 3.0]),
        integer in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = random_dataset(&mut rng, 40, 3, integer);
        let model = KnnModel::fit(&data, &KnnParams { k, p }).unwrap();
        for _ in 0..20 {
            let x: Vec<f64> = (0..3)
                .map(|_| if integer { rng.random_range(0..4) as f64 } else { rng.random::<f64>() * 2.0 - 0.6 })
                .collect();
            // ties in Σ|d|^p stay ties after the root only for p ∈ {1, 2}
            if integer && p != 1.0 && p != 2.0 {
                continue;
            }
            prop_assert_eq!(model.predict(&x), knn_scan(&data.features, &data.labels, k, p, &x));
        }
    }

    #[test]
    fn best_split_matches_enumeration(seed in any::<u64>(), n in 2usize..40, integer in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = random_dataset(&mut rng, n, 4, integer);
        let rows: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.8)).collect();
        let features: Vec<usize> = vec![3, 0, 2];
        prop_assert_eq!(best_split(&data, &rows, &features), split_scan(&data, &rows, &features));
    }

    #[test]
    fn gnb_posterior_matches_density_formula(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = random_dataset(&mut rng, 30, 4, false);
        let model = fit_gnb(&data, &GnbParams::default()).unwrap();
        for _ in 0..10 {
            let x: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * 2.0 - 0.6).collect();
            let ours = model.posterior(&x);
            let reference = gnb_posterior(&data, &x, 1e-9);
            prop_assert!((ours[0] - reference[0]).abs() < 1e-9 && (ours[1] - reference[1]).abs() < 1e-9,
                "{:?} vs {:?}", ours, reference);
        }
    }

    #[test]
    fn conv_matches_naive_loops(seed in any::<u64>(), h in 1usize..8, w in 1usize..8, cin in 1usize..4, cout in 1usize..4, k in prop::sample::select(vec![1usize, 3, 5])) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect::<Vec<_>>();
        let input = Tensor::from_vec(&[h, w, cin], draw(h * w * cin)).unwrap();
        let conv = Conv2d { kernel: k, in_channels: cin, out_channels: cout, weights: draw(k * k * cin * cout), bias: draw(cout) };
        let ours = conv2d_forward(&input, &conv).unwrap();
        prop_assert_eq!(ours.shape(), &[h, w, cout][..]);
        for (a, b) in ours.data().iter().zip(conv_naive(&input, &conv)) {
            prop_assert!((a - b).abs() <= 1e-12, "{} vs {}", a, b);
        }
    }
}

#[test]
fn svm_agrees_with_dense_dual_on_tiny_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut compared = 0;
    for trial in 0..200 {
        let n = 2 + trial % 3;
        let data = loop {
            let d = random_dataset(&mut rng, n, 2, false);
            if d.label_counts().iter().all(|&c| c > 0) {
                break d;
            }
        };
        let c = [0.1, 1.0, 10.0][trial % 3];
        let gamma = 0.7;
        let params = SvmParams { c, gamma: Some(gamma), tol: 1e-8, max_passes: 10_000, kernel: KernelChoice::Rbf };
        let fit = fit_svm(&data, &params).unwrap();
        let model = fit.model.clone();
        let gram: Vec<Vec<f64>> = data
            .features
            .iter()
            .map(|a| data.features.iter().map(|b| rbf(a, b, gamma)).collect())
            .collect();
        let y: Vec<f64> = data.labels.iter().map(|l| if l.is_positive() { 1.0 } else { -1.0 }).collect();
        let dual = svm_dual(&gram, &y, c);
        for _ in 0..25 {
            let x = [rng.random::<f64>() * 3.0 - 1.0, rng.random::<f64>() * 3.0 - 1.0];
            let s: f64 = (0..n).map(|i| dual.alpha[i] * y[i] * rbf(&data.features[i], &x, gamma)).sum();
            let (lo, hi) = (s + dual.b_low, s + dual.b_high);
            // only points whose side is fixed by the exact solution
            if lo.abs() < 1e-4 || hi.abs() < 1e-4 || (lo > 0.0) != (hi > 0.0) {
                continue;
            }
            let expected = if lo > 0.0 { BinaryLabel::Abnormal } else { BinaryLabel::Normal };
            assert_eq!(model.predict(&x), expected, "trial {trial}: decision {} vs [{lo}, {hi}]", model.decision(&x));
            compared += 1;
        }
    }
    assert!(compared > 2000, "only {compared} points compared");
}

#[test]
fn knn_scan_ties_break_by_index() {
    let data = Dataset::new(
        vec![vec![1.0], vec![-1.0], vec![1.0]],
        vec![BinaryLabel::Normal, BinaryLabel::Abnormal, BinaryLabel::Abnormal],
    )
    .unwrap();
    let model = KnnModel::fit(&data, &KnnParams { k: 1, p: 2.0 }).unwrap();
    assert_eq!(model.neighbours(&[0.0]), vec![0]);
    assert_eq!(model.predict(&[0.0]), knn_scan(&data.features, &data.labels, 1, 2.0, &[0.0]));
}
