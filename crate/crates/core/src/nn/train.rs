use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{loss_bce, Gradients, Mode, Network, NetworkBuilder};
use super::tensor::Tensor;
use super::NnError;
use crate::classifiers::mix_seed;
use crate::data::{stratified_split, BinaryLabel, ImageSample, SplitIndices, SplitSpec};
use crate::metrics::{self, MetricsReport};
use crate::Real;

/// Architecture and training settings for the image classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CnnConfig {
    /// `(height, width, channels)`.
    pub input_shape: [usize; 3],
    /// Output channels of each convolution block; its length is the number
    /// of convolution layers.
    pub filters: Vec<usize>,
    pub kernel: usize,
    /// Pooling window and stride. Only 2 is supported.
    pub pool: usize,
    pub dense_units: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub test_fraction: f64,
    pub validation_fraction: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            input_shape: [64, 64, 3],
            filters: vec![32, 32, 64, 64],
            kernel: 3,
            pool: 2,
            dense_units: 256,
            dropout: 0.4,
            epochs: 50,
            test_fraction: 0.15,
            validation_fraction: 0.15,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl CnnConfig {
    pub fn conv_layers(&self) -> usize {
        self.filters.len()
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: String| Err(NnError::InvalidConfig(m));
        if self.input_shape.contains(&0) {
            return bad(format!("input shape {:?} has a zero dimension", self.input_shape));
        }
        if self.filters.is_empty() || self.filters.contains(&0) {
            return bad("filters must be non-empty and positive".into());
        }
        if self.pool != 2 {
            return bad(format!("only 2x2 pooling is supported, got {}", self.pool));
        }
        let div = 1usize << self.filters.len();
        if !self.input_shape[0].is_multiple_of(div) || !self.input_shape[1].is_multiple_of(div) {
            return bad(format!(
                "input {}x{} is not divisible by {div} ({} pooling stages)",
                self.input_shape[0],
                self.input_shape[1],
                self.filters.len()
            ));
        }
        if self.kernel.is_multiple_of(2) {
            return bad(format!("kernel must be odd, got {}", self.kernel));
        }
        if self.dense_units == 0 || self.batch_size == 0 {
            return bad("dense_units and batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        self.split_spec().validate()?;
        Ok(())
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            test_fraction: self.test_fraction,
            validation_fraction: self.validation_fraction,
            seed: self.seed,
            stratified: true,
        }
    }

    /// conv → ReLU → pool per filter entry, then flatten, dropout, a ReLU
    /// dense layer and the sigmoid unit.
    pub fn build<F: Real>(&self) -> Result<Network<F>, NnError> {
        self.validate()?;
        let mut b = NetworkBuilder::new(&self.input_shape);
        for &f in &self.filters {
            b = b.conv(self.kernel, f).relu().max_pool();
        }
        b.flatten()
            .dropout(self.dropout)
            .dense(self.dense_units)
            .relu()
            .dense(1)
            .sigmoid_output()
            .build(self.seed)
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub lr: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    t: i32,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr: F::lit(lr),
            beta1: F::lit(0.9),
            beta2: F::lit(0.999),
            eps: F::lit(1e-8),
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, net: &mut Network<F>, grads: &Gradients<F>) -> Result<(), NnError> {
        let mut params = net.params_mut();
        if params.len() != grads.tensors.len()
            || params.iter().zip(&grads.tensors).any(|(p, g)| p.len() != g.len())
        {
            return Err(NnError::Shape("gradients do not match parameters".into()));
        }
        if self.m.is_empty() {
            self.m = grads.tensors.iter().map(|g| vec![F::zero(); g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c1 = F::one() - self.beta1.powi(self.t);
        let c2 = F::one() - self.beta2.powi(self.t);
        for (i, p) in params.iter_mut().enumerate() {
            for (j, w) in p.iter_mut().enumerate() {
                let g = grads.tensors[i][j];
                let m = &mut self.m[i][j];
                let v = &mut self.v[i][j];
                *m = self.beta1 * *m + (F::one() - self.beta1) * g;
                *v = self.beta2 * *v + (F::one() - self.beta2) * g * g;
                *w -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub seconds: f64,
}

/// One record per completed epoch. Training figures are running averages
/// over the epoch's mini-batches (dropout active); validation figures come
/// from an eval-mode pass after the epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were kept.
    pub best_epoch: Option<usize>,
}

impl TrainHistory {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), NnError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "epoch",
            "train_loss",
            "train_accuracy",
            "val_loss",
            "val_accuracy",
            "seconds",
        ])?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.epochs {
            w.write_record([
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.train_accuracy.to_string(),
                opt(r.val_loss),
                opt(r.val_accuracy),
                format!("{:.3}", r.seconds),
            ])?;
        }
        w.flush().map_err(NnError::Io)?;
        Ok(())
    }

    /// Training losses only, for reproducibility comparisons.
    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|r| r.train_loss).collect()
    }
}

/// Stacks images into a `(n, h, w, c)` batch.
pub fn stack_images<F: Real>(images: &[&ImageSample<F>]) -> Result<Tensor<F>, NnError> {
    let first = images
        .first()
        .ok_or_else(|| NnError::Shape("empty batch".into()))?
        .pixels
        .shape()
        .to_vec();
    let mut data = Vec::with_capacity(images.len() * first.iter().product::<usize>());
    for im in images {
        if im.pixels.shape() != first.as_slice() {
            return Err(NnError::Shape(format!(
                "image shape {:?} differs from {first:?}",
                im.pixels.shape()
            )));
        }
        data.extend_from_slice(im.pixels.data());
    }
    let mut shape = vec![images.len()];
    shape.extend(first);
    Tensor::from_vec(&shape, data)
}

/// Threshold at 0.5; ties go to abnormal.
pub fn to_label<F: Real>(p: F) -> BinaryLabel {
    BinaryLabel::from_positive(p >= F::lit(0.5))
}

/// Eval-mode probabilities for a set of images, `batch_size` at a time.
pub fn predict_images<F: Real>(
    net: &Network<F>,
    images: &[ImageSample<F>],
    batch_size: usize,
) -> Result<Vec<F>, NnError> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch_size.max(1)) {
        let refs: Vec<&ImageSample<F>> = chunk.iter().collect();
        out.extend(net.predict_proba(&stack_images(&refs)?)?);
    }
    Ok(out)
}

/// Loss and metrics of `net` on `images`, eval mode.
pub fn evaluate_images<F: Real>(
    net: &Network<F>,
    images: &[ImageSample<F>],
    batch_size: usize,
) -> Result<(F, MetricsReport), NnError> {
    let p = predict_images(net, images, batch_size)?;
    let y: Vec<F> = images.iter().map(|im| im.label.target()).collect();
    let loss = loss_bce(&p, &y)?;
    let predicted: Vec<BinaryLabel> = p.into_iter().map(to_label).collect();
    let truth: Vec<BinaryLabel> = images.iter().map(|im| im.label).collect();
    Ok((loss, metrics::evaluate(&predicted, &truth)?))
}

fn accuracy(report: &MetricsReport) -> f64 {
    report.accuracy().unwrap_or(0.0)
}

/// Mini-batch Adam on `train`, keeping the weights of the epoch with the
/// best validation accuracy (the final weights when `validation` is empty).
pub fn train<F: Real>(
    config: &CnnConfig,
    train: &[ImageSample<F>],
    validation: &[ImageSample<F>],
) -> Result<(Network<F>, TrainHistory), NnError> {
    let mut net = config.build::<F>()?;
    if train.is_empty() {
        return Err(NnError::InvalidConfig("empty training set".into()));
    }
    let mut adam = Adam::new(config.learning_rate);
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, Network<F>)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0u64;
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, epoch as u64));
        order.shuffle(&mut rng);
        let mut loss_sum = F::zero();
        let mut predicted = Vec::with_capacity(train.len());
        let mut truth = Vec::with_capacity(train.len());
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let images: Vec<&ImageSample<F>> = chunk.iter().map(|&i| &train[i]).collect();
            let x = stack_images(&images)?;
            let y: Vec<F> = images.iter().map(|im| im.label.target()).collect();
            let seed = mix_seed(config.seed ^ 0xD20F_0D20, step);
            step += 1;
            let trace = net.forward(&x, Mode::Train { seed })?;
            let loss = loss_bce(&trace.output, &y)?;
            if !loss.is_finite() {
                return Err(NnError::NonFiniteLoss { epoch, batch: b });
            }
            loss_sum += loss * F::from_usize_lossy(chunk.len());
            predicted.extend(trace.output.iter().map(|&p| to_label(p)));
            truth.extend(images.iter().map(|im| im.label));
            let grads = net.backward(&trace, &y)?;
            adam.step(&mut net, &grads)?;
        }
        let train_report = metrics::evaluate(&predicted, &truth)?;
        let (val_loss, val_accuracy) = if validation.is_empty() {
            (None, None)
        } else {
            let (l, r) = evaluate_images(&net, validation, config.batch_size)?;
            (Some(l.as_f64()), Some(accuracy(&r)))
        };
        let record = EpochRecord {
            epoch,
            train_loss: (loss_sum / F::from_usize_lossy(train.len())).as_f64(),
            train_accuracy: accuracy(&train_report),
            val_loss,
            val_accuracy,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.4} acc {:.4} val_loss {:?} val_acc {:?} ({:.1}s)",
            record.train_loss,
            record.train_accuracy,
            record.val_loss,
            record.val_accuracy,
            record.seconds
        );
        if let Some(acc) = val_accuracy {
            if best.as_ref().is_none_or(|(b, _)| acc > *b) {
                best = Some((acc, net.clone()));
                history.best_epoch = Some(epoch);
            }
        }
        history.epochs.push(record);
    }
    match best {
        Some((_, kept)) => Ok((kept, history)),
        None => {
            history.best_epoch = history.epochs.last().map(|r| r.epoch);
            Ok((net, history))
        }
    }
}

/// A trained network together with the split it was trained on.
#[derive(Debug, Clone)]
pub struct TrainRun<F> {
    pub network: Network<F>,
    pub history: TrainHistory,
    pub split: SplitIndices,
}

/// Splits `data` per the config fractions and trains on the train part.
pub fn train_split<F: Real>(config: &CnnConfig, data: &[ImageSample<F>]) -> Result<TrainRun<F>, NnError> {
    config.validate()?;
    let labels: Vec<BinaryLabel> = data.iter().map(|s| s.label).collect();
    let split = stratified_split(&labels, &config.split_spec())?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| data[i].clone()).collect::<Vec<_>>();
    let (network, history) = train(config, &pick(&split.train), &pick(&split.validation))?;
    Ok(TrainRun {
        network,
        history,
        split,
    })
}
