//! Seeded synthetic datasets used as test oracles and demo inputs.

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{BinaryLabel, CellClass, DataError, FeatureTable, ImageSample, Sample};
use crate::nn::Tensor;
use crate::Real;

/// Two unit-variance Gaussian clusters: normal centred at the origin,
/// abnormal at `separation` in every coordinate. Rows alternate
/// normal/abnormal.
pub fn synth_blobs<F: Real>(
    n_per_class: usize,
    dims: usize,
    separation: f64,
    seed: u64,
) -> Result<FeatureTable<F>, DataError> {
    if dims < 1 {
        return Err(DataError::InvalidArgument("dims must be at least 1".into()));
    }
    if n_per_class < 1 {
        return Err(DataError::InvalidArgument(
            "n_per_class must be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(2 * n_per_class);
    for _ in 0..n_per_class {
        for label in BinaryLabel::BOTH {
            let centre = if label.is_positive() { separation } else { 0.0 };
            let features = (0..dims)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    F::lit(centre + z)
                })
                .collect();
            rows.push(Sample {
                features,
                cell_class: None,
                label,
            });
        }
    }
    let names = (0..dims).map(|j| format!("x{j}")).collect();
    FeatureTable::new(names, rows)
}

/// Cartoon cell images: a dark nucleus inside a lighter cytoplasm disc on a
/// noisy background. Abnormal cells get a markedly larger nucleus.
pub fn synth_images<F: Real>(
    n_per_class: usize,
    size: usize,
    seed: u64,
) -> Result<Vec<ImageSample<F>>, DataError> {
    if size < 4 {
        return Err(DataError::InvalidArgument("image size must be >= 4".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * n_per_class);
    let s = size as f64;
    for _ in 0..n_per_class {
        for label in BinaryLabel::BOTH {
            let nucleus_r = if label.is_positive() {
                rng.random_range(0.18..0.26) * s
            } else {
                rng.random_range(0.07..0.12) * s
            };
            let cyto_r = rng.random_range(0.34..0.44) * s;
            let cx = s / 2.0 + rng.random_range(-0.08..0.08) * s;
            let cy = s / 2.0 + rng.random_range(-0.08..0.08) * s;
            let mut data = Vec::with_capacity(size * size * 3);
            for y in 0..size {
                for x in 0..size {
                    let d = ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)).sqrt();
                    let base = if d < nucleus_r {
                        [0.28, 0.20, 0.45]
                    } else if d < cyto_r {
                        [0.62, 0.55, 0.75]
                    } else {
                        [0.85, 0.72, 0.78]
                    };
                    for c in base {
                        let noise: f64 = StandardNormal.sample(&mut rng);
                        data.push(F::lit((c + 0.04 * noise).clamp(0.0, 1.0)));
                    }
                }
            }
            out.push(ImageSample {
                pixels: Tensor::from_vec(&[size, size, 3], data).expect("shape"),
                cell_class: None,
                label,
            });
        }
    }
    Ok(out)
}

/// Writes samples as PNGs under `<root>/<class-dir>/NNNN.png`. Samples
/// without a Herlev class go to `normal_intermediate` or
/// `severe_dysplastic` by label.
pub fn write_image_tree<F: Real>(
    samples: &[ImageSample<F>],
    root: impl AsRef<Path>,
) -> Result<(), DataError> {
    let root = root.as_ref();
    for (i, s) in samples.iter().enumerate() {
        let class = s.cell_class.unwrap_or(match s.label {
            BinaryLabel::Normal => CellClass::IntermediateSquamous,
            BinaryLabel::Abnormal => CellClass::SevereDysplasia,
        });
        let dir = root.join(class.dir_name());
        std::fs::create_dir_all(&dir).map_err(|source| DataError::Io {
            path: dir.clone(),
            source,
        })?;
        let shape = s.pixels.shape();
        let (h, w) = (shape[0], shape[1]);
        let mut img = RgbImage::new(w as u32, h as u32);
        for y in 0..h {
            for x in 0..w {
                let px = |c: usize| {
                    (s.pixels.at(&[y, x, c]).as_f64() * 255.0)
                        .round()
                        .clamp(0.0, 255.0) as u8
                };
                img.put_pixel(x as u32, y as u32, Rgb([px(0), px(1), px(2)]));
            }
        }
        let path = dir.join(format!("{i:04}.png"));
        img.save(&path).map_err(|e| DataError::Image {
            path,
            message: e.to_string(),
        })?;
    }
    Ok(())
}
