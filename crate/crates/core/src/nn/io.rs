//! Binary weight container.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! magic    b"CYNNWGT\0"
//! version  1
//! input    rank, then each dimension
//! layers   count, then per layer a one-byte tag and its header:
//!            1 conv2d   kernel, in_channels, out_channels
//!            2 relu
//!            3 maxpool
//!            4 dropout  rate as f64
//!            5 flatten
//!            6 dense    inputs, outputs
//!            7 sigmoid
//! params   every parameter tensor in layer order (weights then bias),
//!          as little-endian f64
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::layers::{Conv2d, Dense, Layer};
use super::network::Network;
use super::NnError;
use crate::Real;

pub const WEIGHTS_MAGIC: &[u8; 8] = b"CYNNWGT\0";
pub const WEIGHTS_VERSION: u32 = 1;

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<(), NnError> {
    let v = u32::try_from(v).map_err(|_| NnError::Format(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<usize, NnError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_f64<R: Read>(r: &mut R) -> Result<f64, NnError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn write_weights<F: Real, W: Write>(net: &Network<F>, mut w: W) -> Result<(), NnError> {
    w.write_all(WEIGHTS_MAGIC)?;
    put_u32(&mut w, WEIGHTS_VERSION as usize)?;
    put_u32(&mut w, net.input_shape().len())?;
    for &d in net.input_shape() {
        put_u32(&mut w, d)?;
    }
    put_u32(&mut w, net.layers().len())?;
    for layer in net.layers() {
        match layer {
            Layer::Conv2d(c) => {
                w.write_all(&[1])?;
                put_u32(&mut w, c.kernel)?;
                put_u32(&mut w, c.in_channels)?;
                put_u32(&mut w, c.out_channels)?;
            }
            Layer::Relu => w.write_all(&[2])?,
            Layer::MaxPool => w.write_all(&[3])?,
            Layer::Dropout { rate } => {
                w.write_all(&[4])?;
                w.write_all(&rate.to_le_bytes())?;
            }
            Layer::Flatten => w.write_all(&[5])?,
            Layer::Dense(d) => {
                w.write_all(&[6])?;
                put_u32(&mut w, d.inputs)?;
                put_u32(&mut w, d.outputs)?;
            }
            Layer::SigmoidOutput => w.write_all(&[7])?,
        }
    }
    for p in net.params() {
        for &v in p {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_weights<F: Real, R: Read>(mut r: R) -> Result<Network<F>, NnError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != WEIGHTS_MAGIC {
        return Err(NnError::Format("not a weight file (bad magic)".into()));
    }
    let version = get_u32(&mut r)?;
    if version != WEIGHTS_VERSION as usize {
        return Err(NnError::Format(format!("unsupported weight file version {version}")));
    }
    let rank = get_u32(&mut r)?;
    if rank > 8 {
        return Err(NnError::Format(format!("implausible input rank {rank}")));
    }
    let input: Vec<usize> = (0..rank).map(|_| get_u32(&mut r)).collect::<Result<_, _>>()?;
    let n_layers = get_u32(&mut r)?;
    let mut layers = Vec::new();
    for _ in 0..n_layers {
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let layer = match tag[0] {
            1 => {
                let (kernel, cin, cout) = (get_u32(&mut r)?, get_u32(&mut r)?, get_u32(&mut r)?);
                Layer::Conv2d(Conv2d {
                    kernel,
                    in_channels: cin,
                    out_channels: cout,
                    weights: Vec::new(),
                    bias: Vec::new(),
                })
            }
            2 => Layer::Relu,
            3 => Layer::MaxPool,
            4 => Layer::Dropout { rate: get_f64(&mut r)? },
            5 => Layer::Flatten,
            6 => {
                let (inputs, outputs) = (get_u32(&mut r)?, get_u32(&mut r)?);
                Layer::Dense(Dense {
                    inputs,
                    outputs,
                    weights: Vec::new(),
                    bias: Vec::new(),
                })
            }
            7 => Layer::SigmoidOutput,
            t => return Err(NnError::Format(format!("unknown layer tag {t}"))),
        };
        layers.push(layer);
    }
    let mut read_vec = |n: usize| -> Result<Vec<F>, NnError> {
        (0..n).map(|_| get_f64(&mut r).map(F::lit)).collect()
    };
    for layer in &mut layers {
        match layer {
            Layer::Conv2d(c) => {
                c.weights = read_vec(c.kernel * c.kernel * c.in_channels * c.out_channels)?;
                c.bias = read_vec(c.out_channels)?;
            }
            Layer::Dense(d) => {
                d.weights = read_vec(d.inputs * d.outputs)?;
                d.bias = read_vec(d.outputs)?;
            }
            _ => {}
        }
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(NnError::Format("trailing bytes after parameters".into()));
    }
    Network::new(&input, layers)
}

pub fn save_weights<F: Real>(net: &Network<F>, path: &Path) -> Result<(), NnError> {
    write_weights(net, BufWriter::new(File::create(path)?))
}

pub fn load_weights<F: Real>(path: &Path) -> Result<Network<F>, NnError> {
    read_weights(BufReader::new(File::open(path)?))
}
