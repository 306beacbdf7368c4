//! 8-bit RGB images as `(1, h, w, 3)` tensors in `[0, 1]`.

use std::path::Path;

use image::{DynamicImage, ImageReader, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn image_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_owned(),
        message: message.into(),
    }
}

/// Reads an 8-bit PNG or PNM image. Grayscale is expanded to RGB and alpha is
/// dropped; 16-bit and floating-point images are rejected.
pub fn read_image(path: &Path) -> Result<Tensor<f32>> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let img = reader
        .decode()
        .map_err(|e| image_error(path, e.to_string()))?;
    let rgb = match img {
        DynamicImage::ImageRgb8(rgb) => rgb,
        DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageRgba8(_) => img.to_rgb8(),
        other => {
            return Err(image_error(
                path,
                format!(
                    "unsupported pixel format {:?}; only 8-bit images are accepted",
                    other.color()
                ),
            ))
        }
    };
    Ok(from_rgb8(&rgb))
}

pub fn from_rgb8(img: &RgbImage) -> Tensor<f32> {
    let (w, h) = img.dimensions();
    let data = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
    Tensor::new([1, h as usize, w as usize, 3], data).expect("rgb buffer matches its dimensions")
}

/// Clamps to `[0, 1]` and rounds to 8 bits (half away from zero).
pub fn to_rgb8(t: &Tensor<f32>) -> Result<RgbImage> {
    let [n, h, w, c] = t.shape();
    if n != 1 || c != 3 {
        return Err(Error::InvalidInput(format!(
            "expected a (1, h, w, 3) image, got {:?}",
            t.shape()
        )));
    }
    let data = t
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    Ok(RgbImage::from_raw(w as u32, h as u32, data).expect("buffer matches dimensions"))
}

/// Writes a PNG or PPM chosen by the file extension.
pub fn write_image(t: &Tensor<f32>, path: &Path) -> Result<()> {
    let img = to_rgb8(t)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save(path).map_err(|e| image_error(path, e.to_string()))
}
