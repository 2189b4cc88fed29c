use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::RgbImage;

use super::{CellClass, DataError, ImageSample};
use crate::nn::Tensor;
use crate::Real;

/// Recognized image file extensions (case-insensitive).
pub const IMAGE_EXTENSIONS: [&str; 4] = ["bmp", "png", "jpg", "jpeg"];

/// Decodes one image, resizes it bilinearly to `(height, width)` and scales
/// channels to `[0, 1]`. The label comes from the parent directory name.
pub fn load_image<F: Real>(
    path: impl AsRef<Path>,
    target: (usize, usize),
) -> Result<ImageSample<F>, DataError> {
    let path = path.as_ref();
    let dir = path
        .parent()
        .and_then(Path::file_name)
        .and_then(|s| s.to_str())
        .unwrap_or_default();
    let class: CellClass = dir
        .parse()
        .map_err(|_| DataError::UnknownClassDir(dir.to_string()))?;
    let pixels = decode(path, target)?;
    Ok(ImageSample {
        pixels,
        cell_class: Some(class),
        label: class.binary(),
    })
}

fn decode<F: Real>(path: &Path, target: (usize, usize)) -> Result<Tensor<F>, DataError> {
    let img = image::ImageReader::open(path)
        .map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?
        .with_guessed_format()
        .map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?
        .decode()
        .map_err(|e| DataError::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    Ok(rgb_to_tensor(&img.to_rgb8(), target))
}

/// Bilinear resize (skipped when the size already matches) followed by
/// `/255` scaling into an `(h, w, 3)` tensor.
pub(crate) fn rgb_to_tensor<F: Real>(img: &RgbImage, (h, w): (usize, usize)) -> Tensor<F> {
    let resized;
    let src = if img.dimensions() == (w as u32, h as u32) {
        img
    } else {
        resized = image::imageops::resize(img, w as u32, h as u32, FilterType::Triangle);
        &resized
    };
    let scale = F::lit(255.0);
    let data = src
        .as_raw()
        .iter()
        .map(|&b| F::from_u8(b).expect("u8 fits") / scale)
        .collect();
    Tensor::from_vec(&[h, w, 3], data).expect("rgb buffer matches shape")
}

/// Loads `<root>/<class-dir>/*.{bmp,png,jpg}` in sorted order.
///
/// Class directories may use canonical class names or the Herlev
/// distribution names. Files whose stem ends in `-d` (the segmentation
/// masks shipped next to each Herlev image) are skipped.
pub fn load_image_dir<F: Real>(
    root: impl AsRef<Path>,
    target: (usize, usize),
) -> Result<Vec<ImageSample<F>>, DataError> {
    let root = root.as_ref();
    let mut dirs = read_dir_sorted(root)?;
    dirs.retain(|p| p.is_dir());
    let mut out = Vec::new();
    for dir in dirs {
        let name = dir.file_name().and_then(|s| s.to_str()).unwrap_or_default();
        if name.parse::<CellClass>().is_err() {
            return Err(DataError::UnknownClassDir(name.to_string()));
        }
        for file in read_dir_sorted(&dir)? {
            if is_image(&file) {
                out.push(load_image(&file, target)?);
            }
        }
    }
    if out.is_empty() {
        return Err(DataError::Empty);
    }
    Ok(out)
}

fn is_image(path: &Path) -> bool {
    let ext_ok = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false);
    let mask = path
        .file_stem()
        .and_then(|s| s.to_str())
        .is_some_and(|s| s.ends_with("-d"));
    path.is_file() && ext_ok && !mask
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>, DataError> {
    let io_err = |source| DataError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut entries = std::fs::read_dir(dir)
        .map_err(io_err)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(io_err)?;
    entries.sort();
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::BinaryLabel;
    use image::Rgb;

    fn write(dir: &Path, class: &str, name: &str, img: &RgbImage) -> PathBuf {
        let d = dir.join(class);
        std::fs::create_dir_all(&d).unwrap();
        let p = d.join(name);
        img.save(&p).unwrap();
        p
    }

    #[test]
    fn resize_shape_and_constant_gray() {
        let tmp = tempfile::tempdir().unwrap();
        let gray = RgbImage::from_pixel(100, 80, Rgb([128, 128, 128]));
        let p = write(tmp.path(), "severe_dysplastic", "a.png", &gray);
        let s: ImageSample<f64> = load_image(&p, (64, 64)).unwrap();
        assert_eq!(s.pixels.shape(), &[64, 64, 3]);
        assert_eq!(s.label, BinaryLabel::Abnormal);
        for &v in s.pixels.data() {
            assert!((v - 128.0 / 255.0).abs() < 1e-12);
        }
    }

    #[test]
    fn native_size_is_preserved() {
        let tmp = tempfile::tempdir().unwrap();
        let img = RgbImage::from_fn(64, 64, |x, y| Rgb([x as u8, y as u8, (x * y % 256) as u8]));
        let p = write(tmp.path(), "normal_columnar", "b.bmp", &img);
        let s: ImageSample<f32> = load_image(&p, (64, 64)).unwrap();
        assert_eq!(s.label, BinaryLabel::Normal);
        assert_eq!(s.pixels.at(&[5, 7, 0]), 7.0 / 255.0);
        assert_eq!(s.pixels.at(&[5, 7, 1]), 5.0 / 255.0);
        assert_eq!(s.pixels.at(&[5, 7, 2]), 35.0 / 255.0);
    }

    #[test]
    fn errors_on_bad_file_and_unknown_class() {
        let tmp = tempfile::tempdir().unwrap();
        let d = tmp.path().join("carcinoma_in_situ");
        std::fs::create_dir_all(&d).unwrap();
        std::fs::write(d.join("broken.png"), b"not an image").unwrap();
        assert!(matches!(
            load_image::<f64>(d.join("broken.png"), (8, 8)),
            Err(DataError::Image { .. })
        ));
        let img = RgbImage::from_pixel(4, 4, Rgb([0, 0, 0]));
        let p = write(tmp.path(), "koilocytes", "c.png", &img);
        assert!(matches!(
            load_image::<f64>(&p, (8, 8)),
            Err(DataError::UnknownClassDir(_))
        ));
    }

    #[test]
    fn directory_tree_skips_masks() {
        let tmp = tempfile::tempdir().unwrap();
        let img = RgbImage::from_pixel(10, 10, Rgb([10, 20, 30]));
        write(tmp.path(), "normal_superficiel", "157181569-157181599-001.BMP", &img);
        write(tmp.path(), "normal_superficiel", "157181569-157181599-001-d.bmp", &img);
        write(tmp.path(), "mild dysplasia", "x.png", &img);
        let all: Vec<ImageSample<f64>> = load_image_dir(tmp.path(), (16, 16)).unwrap();
        assert_eq!(all.len(), 2);
        assert_eq!(all[0].label, BinaryLabel::Abnormal);
        assert_eq!(all[1].label, BinaryLabel::Normal);
    }
}
