//! Layer kernels. Activations are stored channels-last: a sample of shape
//! `(h, w, c)` is the row-major buffer indexed `(y * w + x) * c + ch`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::tensor::{gemm_a_bt, gemm_acc, gemm_at_b_acc, Tensor};
use super::NnError;
use crate::Real;

/// Per-sample kernel, bias and input gradients of a convolution.
type ConvPartial<F> = (Vec<F>, Vec<F>, Option<Vec<F>>);

/// Square convolution, stride 1, same padding.
///
/// `weights` is laid out `(k, k, in_channels, out_channels)`, which is also
/// the `(k·k·in) × out` matrix multiplied against the im2col buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<F> {
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub weights: Vec<F>,
    pub bias: Vec<F>,
}

/// Fully connected layer; `weights` is `inputs × outputs`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<F> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<F>,
    pub bias: Vec<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<F> {
    Conv2d(Conv2d<F>),
    Relu,
    /// 2×2 window, stride 2.
    MaxPool,
    Dropout { rate: f64 },
    Flatten,
    Dense(Dense<F>),
    SigmoidOutput,
}

impl<F: Real> Layer<F> {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::Relu => "relu",
            Layer::MaxPool => "maxpool",
            Layer::Dropout { .. } => "dropout",
            Layer::Flatten => "flatten",
            Layer::Dense(_) => "dense",
            Layer::SigmoidOutput => "sigmoid",
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        let bad = |msg: String| Err(NnError::Shape(format!("{}: {msg}", self.name())));
        match self {
            Layer::Conv2d(c) => {
                if input.len() != 3 || input[2] != c.in_channels {
                    return bad(format!("expected (h, w, {}), got {input:?}", c.in_channels));
                }
                if c.kernel % 2 == 0 || c.kernel == 0 {
                    return bad(format!("kernel size must be odd, got {}", c.kernel));
                }
                if c.weights.len() != c.kernel * c.kernel * c.in_channels * c.out_channels
                    || c.bias.len() != c.out_channels
                {
                    return bad("parameter lengths disagree with declared channels".into());
                }
                Ok(vec![input[0], input[1], c.out_channels])
            }
            Layer::MaxPool => {
                if input.len() != 3 || !input[0].is_multiple_of(2) || !input[1].is_multiple_of(2) || input[0] == 0 {
                    return bad(format!("needs even spatial dims, got {input:?}"));
                }
                Ok(vec![input[0] / 2, input[1] / 2, input[2]])
            }
            Layer::Dropout { rate } => {
                if !(0.0..1.0).contains(rate) {
                    return bad(format!("rate must lie in [0, 1), got {rate}"));
                }
                Ok(input.to_vec())
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::Dense(d) => {
                if input != [d.inputs] {
                    return bad(format!("expected ({},), got {input:?}", d.inputs));
                }
                if d.weights.len() != d.inputs * d.outputs || d.bias.len() != d.outputs {
                    return bad("parameter lengths disagree with declared sizes".into());
                }
                Ok(vec![d.outputs])
            }
            Layer::SigmoidOutput => {
                if input != [1] {
                    return bad(format!("expected a single logit, got {input:?}"));
                }
                Ok(vec![1])
            }
        }
    }

    pub(crate) fn params(&self) -> Vec<&[F]> {
        match self {
            Layer::Conv2d(c) => vec![&c.weights, &c.bias],
            Layer::Dense(d) => vec![&d.weights, &d.bias],
            _ => Vec::new(),
        }
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut [F]> {
        match self {
            Layer::Conv2d(c) => vec![&mut c.weights, &mut c.bias],
            Layer::Dense(d) => vec![&mut d.weights, &mut d.bias],
            _ => Vec::new(),
        }
    }
}

/// Fills `cols` (`h·w × k·k·c`) with zero-padded patches of one sample.
fn im2col<F: Real>(x: &[F], h: usize, w: usize, c: usize, k: usize, cols: &mut [F]) {
    let pad = k / 2;
    let row = k * k * c;
    for y in 0..h {
        for xx in 0..w {
            let base = (y * w + xx) * row;
            for dy in 0..k {
                let sy = (y + dy).wrapping_sub(pad);
                for dx in 0..k {
                    let sx = (xx + dx).wrapping_sub(pad);
                    let dst = &mut cols[base + (dy * k + dx) * c..base + (dy * k + dx + 1) * c];
                    if sy < h && sx < w {
                        dst.copy_from_slice(&x[(sy * w + sx) * c..(sy * w + sx + 1) * c]);
                    } else {
                        dst.fill(F::zero());
                    }
                }
            }
        }
    }
}

/// Scatter-adds patch gradients back onto the sample gradient.
fn col2im<F: Real>(cols: &[F], h: usize, w: usize, c: usize, k: usize, dx: &mut [F]) {
    let pad = k / 2;
    let row = k * k * c;
    for y in 0..h {
        for xx in 0..w {
            let base = (y * w + xx) * row;
            for dy in 0..k {
                let sy = (y + dy).wrapping_sub(pad);
                if sy >= h {
                    continue;
                }
                for dxk in 0..k {
                    let sx = (xx + dxk).wrapping_sub(pad);
                    if sx >= w {
                        continue;
                    }
                    let src = &cols[base + (dy * k + dxk) * c..base + (dy * k + dxk + 1) * c];
                    for (d, &s) in dx[(sy * w + sx) * c..(sy * w + sx + 1) * c].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
}

fn conv_sample<F: Real>(conv: &Conv2d<F>, x: &[F], h: usize, w: usize, out: &mut [F]) {
    let (k, cin, cout) = (conv.kernel, conv.in_channels, conv.out_channels);
    let mut cols = vec![F::zero(); h * w * k * k * cin];
    im2col(x, h, w, cin, k, &mut cols);
    for px in out.chunks_mut(cout) {
        px.copy_from_slice(&conv.bias);
    }
    gemm_acc(&cols, &conv.weights, out, h * w, k * k * cin, cout);
}

/// Convolves a single `(h, w, in)` image.
pub fn conv2d_forward<F: Real>(input: &Tensor<F>, conv: &Conv2d<F>) -> Result<Tensor<F>, NnError> {
    let layer = Layer::Conv2d(conv.clone());
    let out_shape = layer.output_shape(input.shape())?;
    let mut out = vec![F::zero(); out_shape.iter().product()];
    conv_sample(conv, input.data(), out_shape[0], out_shape[1], &mut out);
    Tensor::from_vec(&out_shape, out)
}

/// 2×2 max pooling of one `(h, w, c)` image; also returns, for each output,
/// the flat input index that won (first maximum on ties).
pub fn maxpool_forward<F: Real>(input: &Tensor<F>) -> Result<(Tensor<F>, Vec<usize>), NnError> {
    let out_shape = Layer::<F>::MaxPool.output_shape(input.shape())?;
    let (h, w, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let n = out_shape.iter().product();
    let mut out = vec![F::zero(); n];
    let mut arg = vec![0; n];
    pool_sample(input.data(), h, w, c, &mut out, &mut arg);
    Ok((Tensor::from_vec(&out_shape, out)?, arg))
}

fn pool_sample<F: Real>(x: &[F], h: usize, w: usize, c: usize, out: &mut [F], arg: &mut [usize]) {
    let (oh, ow) = (h / 2, w / 2);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best = (2 * oy * w + 2 * ox) * c + ch;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = ((2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                let o = (oy * ow + ox) * c + ch;
                out[o] = x[best];
                arg[o] = best;
            }
        }
    }
}

/// Inverted dropout mask: each entry is `0` with probability `rate`,
/// otherwise `1 / (1 − rate)`.
pub fn dropout_mask<F: Real>(len: usize, rate: f64, seed: u64) -> Vec<F> {
    if rate == 0.0 {
        return vec![F::one(); len];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = F::lit(1.0 / (1.0 - rate));
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { F::zero() } else { keep })
        .collect()
}

/// Applies dropout in training mode (`seed` given) or passes through.
pub fn dropout<F: Real>(input: &Tensor<F>, rate: f64, seed: Option<u64>) -> Tensor<F> {
    match seed {
        None => input.clone(),
        Some(s) => {
            let mask = dropout_mask::<F>(input.len(), rate, s);
            let data = input.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
            Tensor::from_vec(input.shape(), data).expect("same length")
        }
    }
}

/// What a layer remembers from the forward pass besides its input.
#[derive(Debug, Clone)]
pub(crate) enum Aux<F> {
    None,
    Argmax(Vec<usize>),
    Mask(Vec<F>),
}

/// Batched forward of one layer. `x` holds `batch` samples of `in_shape`.
pub(crate) fn forward_layer<F: Real>(
    layer: &Layer<F>,
    x: &[F],
    batch: usize,
    in_shape: &[usize],
    out_len: usize,
    dropout_seed: Option<u64>,
) -> (Vec<F>, Aux<F>) {
    let in_len = x.len() / batch.max(1);
    let mut out = vec![F::zero(); out_len * batch];
    let aux = match layer {
        Layer::Conv2d(c) => {
            let (h, w) = (in_shape[0], in_shape[1]);
            out.par_chunks_mut(out_len)
                .zip(x.par_chunks(in_len))
                .for_each(|(o, xs)| conv_sample(c, xs, h, w, o));
            Aux::None
        }
        Layer::Relu => {
            for (o, &v) in out.iter_mut().zip(x) {
                *o = v.max(F::zero());
            }
            Aux::None
        }
        Layer::MaxPool => {
            let (h, w, c) = (in_shape[0], in_shape[1], in_shape[2]);
            let mut arg = vec![0; out.len()];
            for ((o, a), xs) in out
                .chunks_mut(out_len)
                .zip(arg.chunks_mut(out_len))
                .zip(x.chunks(in_len))
            {
                pool_sample(xs, h, w, c, o, a);
            }
            Aux::Argmax(arg)
        }
        Layer::Dropout { rate } => match dropout_seed {
            Some(seed) => {
                let mask = dropout_mask::<F>(x.len(), *rate, seed);
                for ((o, &v), &m) in out.iter_mut().zip(x).zip(&mask) {
                    *o = v * m;
                }
                Aux::Mask(mask)
            }
            None => {
                out.copy_from_slice(x);
                Aux::None
            }
        },
        Layer::Flatten => {
            out.copy_from_slice(x);
            Aux::None
        }
        Layer::Dense(d) => {
            for o in out.chunks_mut(d.outputs) {
                o.copy_from_slice(&d.bias);
            }
            gemm_acc(x, &d.weights, &mut out, batch, d.inputs, d.outputs);
            Aux::None
        }
        Layer::SigmoidOutput => {
            for (o, &v) in out.iter_mut().zip(x) {
                *o = crate::classifiers::sigmoid(v);
            }
            Aux::None
        }
    };
    (out, aux)
}

/// Batched backward of one hidden layer (not the sigmoid head).
///
/// Returns the parameter gradients (empty for parameter-free layers) and,
/// when `need_input_grad`, the gradient with respect to `x`.
pub(crate) fn backward_layer<F: Real>(
    layer: &Layer<F>,
    x: &[F],
    aux: &Aux<F>,
    dout: &[F],
    batch: usize,
    in_shape: &[usize],
    need_input_grad: bool,
) -> (Vec<Vec<F>>, Option<Vec<F>>) {
    let in_len = x.len() / batch.max(1);
    match layer {
        Layer::Conv2d(c) => {
            let (h, w) = (in_shape[0], in_shape[1]);
            let (k, cin, cout) = (c.kernel, c.in_channels, c.out_channels);
            let out_len = h * w * cout;
            let row = k * k * cin;
            // Per-sample partials reduced in sample order, so the result
            // does not depend on how rayon schedules the samples.
            let partials: Vec<ConvPartial<F>> = x
                .par_chunks(in_len)
                .zip(dout.par_chunks(out_len))
                .map(|(xs, ds)| {
                    let mut cols = vec![F::zero(); h * w * row];
                    im2col(xs, h, w, cin, k, &mut cols);
                    let mut dw = vec![F::zero(); row * cout];
                    gemm_at_b_acc(&cols, ds, &mut dw, h * w, row, cout);
                    let mut db = vec![F::zero(); cout];
                    for px in ds.chunks(cout) {
                        for (b, &g) in db.iter_mut().zip(px) {
                            *b += g;
                        }
                    }
                    let dx = need_input_grad.then(|| {
                        gemm_a_bt(ds, &c.weights, &mut cols, h * w, cout, row);
                        let mut dx = vec![F::zero(); in_len];
                        col2im(&cols, h, w, cin, k, &mut dx);
                        dx
                    });
                    (dw, db, dx)
                })
                .collect();
            let mut dw = vec![F::zero(); row * cout];
            let mut db = vec![F::zero(); cout];
            let mut dx = need_input_grad.then(|| Vec::with_capacity(x.len()));
            for (pw, pb, px) in partials {
                dw.iter_mut().zip(&pw).for_each(|(a, &b)| *a += b);
                db.iter_mut().zip(&pb).for_each(|(a, &b)| *a += b);
                if let (Some(all), Some(p)) = (dx.as_mut(), px) {
                    all.extend(p);
                }
            }
            (vec![dw, db], dx)
        }
        Layer::Relu => {
            let dx = x
                .iter()
                .zip(dout)
                .map(|(&v, &g)| if v > F::zero() { g } else { F::zero() })
                .collect();
            (Vec::new(), Some(dx))
        }
        Layer::MaxPool => {
            let Aux::Argmax(arg) = aux else {
                unreachable!("maxpool trace carries argmax")
            };
            let out_len = dout.len() / batch.max(1);
            let mut dx = vec![F::zero(); x.len()];
            for (b, (ds, args)) in dout.chunks(out_len).zip(arg.chunks(out_len)).enumerate() {
                let dxs = &mut dx[b * in_len..(b + 1) * in_len];
                for (&g, &i) in ds.iter().zip(args) {
                    dxs[i] += g;
                }
            }
            (Vec::new(), Some(dx))
        }
        Layer::Dropout { .. } => {
            let dx = match aux {
                Aux::Mask(mask) => dout.iter().zip(mask).map(|(&g, &m)| g * m).collect(),
                _ => dout.to_vec(),
            };
            (Vec::new(), Some(dx))
        }
        Layer::Flatten => (Vec::new(), Some(dout.to_vec())),
        Layer::Dense(d) => {
            let mut dw = vec![F::zero(); d.inputs * d.outputs];
            gemm_at_b_acc(x, dout, &mut dw, batch, d.inputs, d.outputs);
            let mut db = vec![F::zero(); d.outputs];
            for row in dout.chunks(d.outputs) {
                db.iter_mut().zip(row).for_each(|(a, &g)| *a += g);
            }
            let dx = need_input_grad.then(|| {
                let mut dx = vec![F::zero(); x.len()];
                gemm_a_bt(dout, &d.weights, &mut dx, batch, d.outputs, d.inputs);
                dx
            });
            (vec![dw, db], dx)
        }
        Layer::SigmoidOutput => unreachable!("the sigmoid head is folded into the loss gradient"),
    }
}
