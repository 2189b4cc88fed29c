//! A small CPU tensor engine and the convolutional image classifier.
//!
//! Networks are plain layer stacks ending in one sigmoid unit and trained
//! with mean binary cross-entropy. [`Network::forward`] returns a
//! [`ForwardTrace`] which is the only way into [`Network::backward`]; a trace
//! taken before the parameters changed is rejected.
//!
//! Convolutions run as im2col plus matrix products, parallel over the
//! samples of a batch. Per-sample gradient partials are summed in sample
//! order so results do not depend on the number of worker threads.

mod io;
mod layers;
mod network;
mod tensor;
mod train;

use crate::data::DataError;
use crate::metrics::MetricsError;

pub use io::{load_weights, read_weights, save_weights, write_weights, WEIGHTS_MAGIC, WEIGHTS_VERSION};
pub use layers::{conv2d_forward, dropout, dropout_mask, maxpool_forward, Conv2d, Dense, Layer};
pub use network::{grad_check, loss_bce, ForwardTrace, GradCheck, Gradients, Mode, Network, NetworkBuilder};
pub use tensor::Tensor;
pub use train::{
    evaluate_images, predict_images, stack_images, to_label, train, train_split, Adam, CnnConfig,
    EpochRecord, TrainHistory, TrainRun,
};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("trace does not belong to the current parameters; run forward again")]
    StaleTrace,
    #[error("non-finite activation after layer {layer}")]
    NonFinite { layer: usize },
    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("weight file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Gradient check of the reduced network used by the CLI and the
/// acceptance tests: two 3×3 convolutions and one dense layer on 8×8
/// inputs, four samples, fixed seeds.
pub fn reduced_grad_check(seed: u64) -> Result<GradCheck, NnError> {
    use rand::{Rng, SeedableRng};
    let net = NetworkBuilder::new(&[8, 8, 2])
        .conv(3, 3)
        .relu()
        .max_pool()
        .conv(3, 4)
        .relu()
        .max_pool()
        .flatten()
        .dense(1)
        .sigmoid_output()
        .build::<f64>(seed)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x9c);
    let x: Vec<f64> = (0..4 * 8 * 8 * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x = Tensor::from_vec(&[4, 8, 8, 2], x)?;
    grad_check(&net, &x, &[1.0, 0.0, 0.0, 1.0], 1e-5, Mode::Eval)
}
