use cytobench::data::synth_images;
use cytobench::nn::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn batch(shape: &[usize], n: usize, seed: u64) -> (Tensor<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut full = vec![n];
    full.extend_from_slice(shape);
    let len = full.iter().product();
    let x = Tensor::from_vec(&full, (0..len).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).unwrap();
    let y = (0..n).map(|i| (i % 2) as f64).collect();
    (x, y)
}

fn check(net: &Network<f64>, n: usize, mode: Mode) -> GradCheck {
    let (x, y) = batch(net.input_shape(), n, 5);
    grad_check(net, &x, &y, 1e-5, mode).unwrap()
}

#[test]
fn conv_layer_gradients() {
    let net = NetworkBuilder::new(&[5, 5, 2])
        .conv(3, 3)
        .flatten()
        .dense(1)
        .sigmoid_output()
        .build::<f64>(1)
        .unwrap();
    let r = check(&net, 3, Mode::Eval);
    assert!(r.max_relative_error < 1e-6, "{r:?}");
    assert_eq!(r.checked, net.n_params());
}

#[test]
fn relu_and_pool_gradients() {
    let net = NetworkBuilder::new(&[6, 6, 2])
        .conv(3, 2)
        .relu()
        .max_pool()
        .flatten()
        .dense(4)
        .relu()
        .dense(1)
        .sigmoid_output()
        .build::<f64>(2)
        .unwrap();
    let r = check(&net, 4, Mode::Eval);
    assert!(r.max_relative_error < 1e-5, "{r:?}");
}

#[test]
fn dropout_gradients_with_fixed_masks() {
    let net = NetworkBuilder::new(&[4, 4, 1])
        .conv(3, 4)
        .relu()
        .dropout(0.4)
        .flatten()
        .dense(6)
        .relu()
        .dropout(0.4)
        .dense(1)
        .sigmoid_output()
        .build::<f64>(3)
        .unwrap();
    let r = check(&net, 4, Mode::Train { seed: 17 });
    assert!(r.max_relative_error < 1e-5, "{r:?}");
}

#[test]
fn default_architecture_at_reduced_size() {
    let cfg = CnnConfig {
        input_shape: [16, 16, 2],
        filters: vec![2, 2, 3, 3],
        dense_units: 6,
        ..CnnConfig::default()
    };
    let net = cfg.build::<f64>().unwrap();
    assert_eq!(net.shapes().last().unwrap(), &vec![1]);
    for mode in [Mode::Eval, Mode::Train { seed: 4 }] {
        let r = check(&net, 3, mode);
        assert!(r.max_relative_error < 1e-4, "{mode:?}: {r:?}");
    }
}

#[test]
fn reduced_check_passes() {
    let r = reduced_grad_check(0).unwrap();
    assert!(r.max_relative_error < 1e-4, "{r:?}");
}

#[test]
fn training_is_deterministic_for_a_seed() {
    let cfg = CnnConfig {
        input_shape: [8, 8, 3],
        filters: vec![2, 2],
        dense_units: 4,
        epochs: 3,
        batch_size: 8,
        ..CnnConfig::default()
    };
    let images = synth_images::<f64>(12, 8, 3).unwrap();
    let a = train_split(&cfg, &images).unwrap();
    let b = train_split(&cfg, &images).unwrap();
    assert_eq!(a.network, b.network);
    assert_eq!(a.history.train_losses(), b.history.train_losses());
    assert_eq!(a.split, b.split);
}

#[test]
fn saved_weights_predict_identically() {
    let cfg = CnnConfig {
        input_shape: [8, 8, 3],
        filters: vec![2],
        dense_units: 3,
        ..CnnConfig::default()
    };
    let net = cfg.build::<f64>().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.bin");
    save_weights(&net, &path).unwrap();
    let back: Network<f64> = load_weights(&path).unwrap();
    let (x, _) = batch(&[8, 8, 3], 4, 9);
    assert_eq!(net.predict_proba(&x).unwrap(), back.predict_proba(&x).unwrap());
}
