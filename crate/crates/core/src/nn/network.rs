use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{backward_layer, forward_layer, Aux, Conv2d, Dense, Layer};
use super::tensor::Tensor;
use super::NnError;
use crate::classifiers::mix_seed;
use crate::Real;

static NEXT_GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    NEXT_GENERATION.fetch_add(1, Ordering::Relaxed)
}

/// Whether dropout is active. Training mode draws its masks from `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { seed: u64 },
}

/// A feed-forward stack ending in a single sigmoid unit.
#[derive(Debug, Clone)]
pub struct Network<F> {
    input_shape: Vec<usize>,
    layers: Vec<Layer<F>>,
    shapes: Vec<Vec<usize>>,
    // Changes whenever parameters may have changed; traces record it.
    generation: u64,
}

impl<F: Real> PartialEq for Network<F> {
    fn eq(&self, other: &Self) -> bool {
        self.input_shape == other.input_shape && self.layers == other.layers
    }
}

/// Everything backward needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<F> {
    generation: u64,
    batch: usize,
    inputs: Vec<Vec<F>>,
    aux: Vec<Aux<F>>,
    /// Sigmoid outputs, one per sample.
    pub output: Vec<F>,
}

/// Parameter gradients in [`Network::params`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    pub tensors: Vec<Vec<F>>,
}

impl<F: Real> Network<F> {
    /// Checks every layer against the shape flowing into it.
    pub fn new(input_shape: &[usize], layers: Vec<Layer<F>>) -> Result<Self, NnError> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(NnError::Shape(format!("bad input shape {input_shape:?}")));
        }
        let mut shapes = Vec::with_capacity(layers.len());
        let mut shape = input_shape.to_vec();
        for (i, layer) in layers.iter().enumerate() {
            if matches!(layer, Layer::SigmoidOutput) && i + 1 != layers.len() {
                return Err(NnError::Shape("sigmoid output must be the last layer".into()));
            }
            shape = layer.output_shape(&shape)?;
            log::debug!("layer {i} {:<8} -> {shape:?}", layer.name());
            shapes.push(shape.clone());
        }
        if !matches!(layers.last(), Some(Layer::SigmoidOutput)) {
            return Err(NnError::Shape("network must end in a sigmoid output".into()));
        }
        Ok(Network {
            input_shape: input_shape.to_vec(),
            layers,
            shapes,
            generation: next_generation(),
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer<F>] {
        &self.layers
    }

    /// Per-sample output shape of every layer.
    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn params(&self) -> Vec<&[F]> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    /// Mutable parameter views. Invalidates outstanding traces.
    pub fn params_mut(&mut self) -> Vec<&mut [F]> {
        self.generation = next_generation();
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn run(&self, batch: &Tensor<F>, mode: Mode, keep: bool) -> Result<ForwardTrace<F>, NnError> {
        let shape = batch.shape();
        if shape.len() != self.input_shape.len() + 1 || shape[1..] != self.input_shape[..] {
            return Err(NnError::Shape(format!(
                "batch shape {shape:?} does not match input {:?}",
                self.input_shape
            )));
        }
        let n = shape[0];
        let mut x = batch.data().to_vec();
        let mut inputs = Vec::new();
        let mut auxes = Vec::new();
        let mut in_shape = self.input_shape.as_slice();
        for (i, layer) in self.layers.iter().enumerate() {
            let out_len = self.shapes[i].iter().product();
            let seed = match mode {
                Mode::Train { seed } => Some(mix_seed(seed, i as u64)),
                Mode::Eval => None,
            };
            let (y, aux) = forward_layer(layer, &x, n, in_shape, out_len, seed);
            if cfg!(debug_assertions) && y.iter().any(|v| !v.is_finite()) {
                return Err(NnError::NonFinite { layer: i });
            }
            if keep {
                inputs.push(std::mem::replace(&mut x, y));
                auxes.push(aux);
            } else {
                x = y;
            }
            in_shape = &self.shapes[i];
        }
        Ok(ForwardTrace {
            generation: self.generation,
            batch: n,
            inputs,
            aux: auxes,
            output: x,
        })
    }

    /// Runs a `(batch, input...)` tensor and keeps what backward needs.
    pub fn forward(&self, batch: &Tensor<F>, mode: Mode) -> Result<ForwardTrace<F>, NnError> {
        self.run(batch, mode, true)
    }

    /// Eval-mode probabilities without keeping intermediate activations.
    pub fn predict_proba(&self, batch: &Tensor<F>) -> Result<Vec<F>, NnError> {
        Ok(self.run(batch, Mode::Eval, false)?.output)
    }

    /// Gradients of the mean binary cross-entropy against `targets`.
    ///
    /// The sigmoid and the loss are differentiated together, so the logit
    /// gradient is `(p − y) / batch`.
    pub fn backward(&self, trace: &ForwardTrace<F>, targets: &[F]) -> Result<Gradients<F>, NnError> {
        if trace.generation != self.generation || trace.inputs.len() != self.layers.len() {
            return Err(NnError::StaleTrace);
        }
        if targets.len() != trace.batch {
            return Err(NnError::Shape(format!(
                "{} targets for a batch of {}",
                targets.len(),
                trace.batch
            )));
        }
        let scale = F::one() / F::from_usize_lossy(trace.batch);
        let mut delta: Vec<F> = trace
            .output
            .iter()
            .zip(targets)
            .map(|(&p, &y)| (p - y) * scale)
            .collect();
        let mut per_layer: Vec<Vec<Vec<F>>> = vec![Vec::new(); self.layers.len()];
        for i in (0..self.layers.len() - 1).rev() {
            let in_shape = if i == 0 {
                &self.input_shape
            } else {
                &self.shapes[i - 1]
            };
            let (grads, dx) = backward_layer(
                &self.layers[i],
                &trace.inputs[i],
                &trace.aux[i],
                &delta,
                trace.batch,
                in_shape,
                i > 0,
            );
            per_layer[i] = grads;
            if let Some(dx) = dx {
                delta = dx;
            }
        }
        Ok(Gradients {
            tensors: per_layer.into_iter().flatten().collect(),
        })
    }
}

/// Mean binary cross-entropy with `p` clamped to `[1e-12, 1 − 1e-12]`.
pub fn loss_bce<F: Real>(p: &[F], y: &[F]) -> Result<F, NnError> {
    if p.len() != y.len() || p.is_empty() {
        return Err(NnError::Shape(format!(
            "loss over {} predictions and {} targets",
            p.len(),
            y.len()
        )));
    }
    let lo = F::lit(1e-12);
    let hi = F::one() - lo;
    let total: F = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = p.max(lo).min(hi);
            -(y * p.ln() + (F::one() - y) * (F::one() - p).ln())
        })
        .sum();
    Ok(total / F::from_usize_lossy(p.len()))
}

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    /// `(tensor, element)` of the worst parameter.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Compares backward against central differences for every parameter.
///
/// Relative error is `|g_a − g_n| / max(|g_a|, |g_n|, 1e-8)`. A training
/// mode seed fixes the dropout masks so both sides see the same function.
pub fn grad_check<F: Real>(
    network: &Network<F>,
    input: &Tensor<F>,
    targets: &[F],
    eps: f64,
    mode: Mode,
) -> Result<GradCheck, NnError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(NnError::InvalidConfig(format!("eps must be positive, got {eps}")));
    }
    let trace = network.forward(input, mode)?;
    let analytic = network.backward(&trace, targets)?;
    let mut probe = network.clone();
    let h = F::lit(eps);
    let mut report = GradCheck {
        max_relative_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let loss_at = |net: &Network<F>| -> Result<F, NnError> {
        loss_bce(&net.run(input, mode, false)?.output, targets)
    };
    for (t, grad) in analytic.tensors.iter().enumerate() {
        for (e, &ga) in grad.iter().enumerate() {
            let original = probe.params()[t][e];
            set_param(&mut probe, t, e, original + h);
            let up = loss_at(&probe)?;
            set_param(&mut probe, t, e, original - h);
            let down = loss_at(&probe)?;
            set_param(&mut probe, t, e, original);
            let gn = ((up - down) / (F::lit(2.0) * h)).as_f64();
            let ga = ga.as_f64();
            let rel = (ga - gn).abs() / ga.abs().max(gn.abs()).max(1e-8);
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = (t, e);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

fn set_param<F: Real>(net: &mut Network<F>, tensor: usize, element: usize, value: F) {
    net.layers
        .iter_mut()
        .flat_map(Layer::params_mut)
        .nth(tensor)
        .expect("tensor index")[element] = value;
}

enum Pending {
    Conv { kernel: usize, out: usize },
    Dense { out: usize },
    Plain(Layer<f64>),
}

/// Builds a network layer by layer and initializes it from a seed:
/// He-uniform for convolution and hidden dense layers, Glorot-uniform for
/// the dense layer feeding the sigmoid, zero biases.
pub struct NetworkBuilder {
    input_shape: Vec<usize>,
    pending: Vec<Pending>,
}

impl NetworkBuilder {
    pub fn new(input_shape: &[usize]) -> Self {
        NetworkBuilder {
            input_shape: input_shape.to_vec(),
            pending: Vec::new(),
        }
    }

    pub fn conv(mut self, kernel: usize, out_channels: usize) -> Self {
        self.pending.push(Pending::Conv {
            kernel,
            out: out_channels,
        });
        self
    }

    pub fn dense(mut self, outputs: usize) -> Self {
        self.pending.push(Pending::Dense { out: outputs });
        self
    }

    pub fn relu(mut self) -> Self {
        self.pending.push(Pending::Plain(Layer::Relu));
        self
    }

    pub fn max_pool(mut self) -> Self {
        self.pending.push(Pending::Plain(Layer::MaxPool));
        self
    }

    pub fn dropout(mut self, rate: f64) -> Self {
        self.pending.push(Pending::Plain(Layer::Dropout { rate }));
        self
    }

    pub fn flatten(mut self) -> Self {
        self.pending.push(Pending::Plain(Layer::Flatten));
        self
    }

    pub fn sigmoid_output(mut self) -> Self {
        self.pending.push(Pending::Plain(Layer::SigmoidOutput));
        self
    }

    pub fn build<F: Real>(self, seed: u64) -> Result<Network<F>, NnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last_dense = self
            .pending
            .iter()
            .rposition(|p| matches!(p, Pending::Dense { .. }));
        let mut shape = self.input_shape.clone();
        let mut layers = Vec::with_capacity(self.pending.len());
        for (i, p) in self.pending.into_iter().enumerate() {
            let layer = match p {
                Pending::Conv { kernel, out } => {
                    let cin = *shape.last().unwrap_or(&0);
                    let fan_in = kernel * kernel * cin;
                    Layer::Conv2d(Conv2d {
                        kernel,
                        in_channels: cin,
                        out_channels: out,
                        weights: uniform(&mut rng, fan_in * out, (6.0 / fan_in.max(1) as f64).sqrt()),
                        bias: vec![F::zero(); out],
                    })
                }
                Pending::Dense { out } => {
                    let fan_in = shape.iter().product::<usize>();
                    let limit = if Some(i) == last_dense {
                        (6.0 / (fan_in + out).max(1) as f64).sqrt()
                    } else {
                        (6.0 / fan_in.max(1) as f64).sqrt()
                    };
                    Layer::Dense(Dense {
                        inputs: if shape.len() == 1 { fan_in } else { 0 },
                        outputs: out,
                        weights: uniform(&mut rng, fan_in * out, limit),
                        bias: vec![F::zero(); out],
                    })
                }
                Pending::Plain(l) => match l {
                    Layer::Relu => Layer::Relu,
                    Layer::MaxPool => Layer::MaxPool,
                    Layer::Dropout { rate } => Layer::Dropout { rate },
                    Layer::Flatten => Layer::Flatten,
                    _ => Layer::SigmoidOutput,
                },
            };
            shape = layer.output_shape(&shape)?;
            layers.push(layer);
        }
        Network::new(&self.input_shape, layers)
    }
}

fn uniform<F: Real>(rng: &mut ChaCha8Rng, n: usize, limit: f64) -> Vec<F> {
    (0..n).map(|_| F::lit(rng.random_range(-limit..=limit))).collect()
}
