//! Image ingestion and emission.
//!
//! Inputs are PNG or binary PNM (PPM/PGM). Every loaded image is scaled to
//! `[0, 1]`, bilinearly resized to the network size and has its per-channel
//! mean removed.

use std::path::Path;

use image::{DynamicImage, ImageFormat};

use crate::error::{MdcaError, Result};
use crate::tensor::ImageTensor;

/// Name of the only supported preprocessing pipeline, echoed into configs.
pub const PREPROCESS: &str = "mean_subtract";

fn decode_error(path: &Path, e: impl std::fmt::Display) -> MdcaError {
    MdcaError::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Decodes a PNG/PNM file to `[0, 1]` samples with `channels` channels
/// (1 = luminance, 3 = RGB). No resizing or mean removal.
pub fn decode_image(path: &Path, channels: usize) -> Result<ImageTensor> {
    let reader = image::io::Reader::open(path)?
        .with_guessed_format()
        .map_err(|e| decode_error(path, e))?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Pnm) => {}
        _ => return Err(MdcaError::UnsupportedFormat(path.to_path_buf())),
    }
    let img = reader.decode().map_err(|e| decode_error(path, e))?;
    if img.width() == 0 || img.height() == 0 {
        return Err(decode_error(path, "zero-size image"));
    }
    dynamic_to_tensor(&img, channels).map_err(|e| decode_error(path, e))
}

fn dynamic_to_tensor(img: &DynamicImage, channels: usize) -> Result<ImageTensor> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = match channels {
        1 => img.to_luma32f().into_raw(),
        3 => img.to_rgb32f().into_raw(),
        c => {
            return Err(MdcaError::InvalidConfig(format!(
                "images can be loaded with 1 or 3 channels, not {c}"
            )))
        }
    };
    ImageTensor::new(h, w, channels, data)
}

/// Bilinear resampling with pixel centres at half-integer coordinates and
/// edge clamping.
pub fn resize_bilinear(x: &ImageTensor, height: usize, width: usize) -> ImageTensor {
    if x.height() == height && x.width() == width {
        return x.clone();
    }
    let sy = x.height() as f64 / height as f64;
    let sx = x.width() as f64 / width as f64;
    let axis = |dst: usize, scale: f64, len: usize| {
        let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(len - 1);
        (lo, hi, src - lo as f64)
    };
    ImageTensor::from_fn(height, width, x.channels(), |i, j, c| {
        let (y0, y1, fy) = axis(i, sy, x.height());
        let (x0, x1, fx) = axis(j, sx, x.width());
        let top = x.get(y0, x0, c) as f64 * (1.0 - fx) + x.get(y0, x1, c) as f64 * fx;
        let bottom = x.get(y1, x0, c) as f64 * (1.0 - fx) + x.get(y1, x1, c) as f64 * fx;
        (top * (1.0 - fy) + bottom * fy) as f32
    })
}

/// Removes the mean of each channel.
pub fn subtract_channel_mean(x: &ImageTensor) -> ImageTensor {
    let n = (x.height() * x.width()) as f64;
    let means: Vec<f32> = x.channel_sums().iter().map(|s| (s / n) as f32).collect();
    let c = x.channels();
    let mut out = x.clone();
    for (k, v) in out.data_mut().iter_mut().enumerate() {
        *v -= means[k % c];
    }
    out
}

/// Decode, resize to `height x width`, and remove the per-channel mean.
pub fn load_image(path: impl AsRef<Path>, height: usize, width: usize, channels: usize) -> Result<ImageTensor> {
    let raw = decode_image(path.as_ref(), channels)?;
    Ok(subtract_channel_mean(&resize_bilinear(&raw, height, width)))
}

/// Maps a tensor to 8-bit samples by min–max stretching; constant tensors
/// become mid-gray.
fn to_u8(x: &ImageTensor) -> Vec<u8> {
    let (lo, hi) = x
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    x.data()
        .iter()
        .map(|&v| {
            if range > 0.0 {
                (((v - lo) / range) * 255.0).round() as u8
            } else {
                128
            }
        })
        .collect()
}

/// Writes a tensor for viewing: contrast-stretched PNG (or PNM, by
/// extension). Tensors with other than 1 or 3 channels are averaged to gray.
pub fn save_image(path: impl AsRef<Path>, x: &ImageTensor) -> Result<()> {
    let path = path.as_ref();
    let gray;
    let view = match x.channels() {
        1 | 3 => x,
        c => {
            gray = ImageTensor::from_fn(x.height(), x.width(), 1, |i, j, _| {
                x.pixel(i, j).iter().sum::<f32>() / c as f32
            });
            &gray
        }
    };
    save_raw(path, view, to_u8(view))
}

/// Writes samples already in `[0, 1]` without stretching.
pub fn save_unit_image(path: impl AsRef<Path>, x: &ImageTensor) -> Result<()> {
    let bytes = x
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    save_raw(path.as_ref(), x, bytes)
}

fn save_raw(path: &Path, x: &ImageTensor, bytes: Vec<u8>) -> Result<()> {
    let (w, h) = (x.width() as u32, x.height() as u32);
    let img = match x.channels() {
        1 => DynamicImage::ImageLuma8(
            image::GrayImage::from_raw(w, h, bytes).expect("buffer sized from tensor"),
        ),
        3 => DynamicImage::ImageRgb8(
            image::RgbImage::from_raw(w, h, bytes).expect("buffer sized from tensor"),
        ),
        c => {
            return Err(MdcaError::InvalidConfig(format!(
                "cannot write a {c}-channel image"
            )))
        }
    };
    img.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => MdcaError::Io(io),
        other => decode_error(path, other),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mid_gray_becomes_zero() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("gray.png");
        image::GrayImage::from_pixel(5, 7, image::Luma([128u8]))
            .save(&p)
            .unwrap();
        let x = load_image(&p, 8, 8, 3).unwrap();
        assert_eq!(x.shape(), crate::tensor::Shape::new(8, 8, 3));
        assert!(x.data().iter().all(|&v| v.abs() < 1e-6));
    }

    #[test]
    fn bilinear_upscale_matches_hand_computation() {
        // corners 0, 1 / 2, 3; source coordinates for 4 outputs are
        // -0.25 -> 0, 0.25, 0.75, 1.25 -> 1
        let x = ImageTensor::new(2, 2, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let y = resize_bilinear(&x, 4, 4);
        let axis = [0.0f64, 0.25, 0.75, 1.0];
        for i in 0..4 {
            for j in 0..4 {
                let expected = axis[i] * 2.0 + axis[j];
                assert!((y.get(i, j, 0) as f64 - expected).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn truncated_file_is_decode_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.png");
        image::GrayImage::from_pixel(16, 16, image::Luma([10u8]))
            .save(&p)
            .unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_image(&p, 8, 8, 1), Err(MdcaError::Decode { .. })));
    }

    #[test]
    fn unsupported_format_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bmp");
        std::fs::write(&p, b"BM not really a bitmap").unwrap();
        assert!(load_image(&p, 8, 8, 1).is_err());
        let q = dir.path().join("x.txt");
        std::fs::write(&q, b"hello").unwrap();
        assert!(matches!(
            load_image(&q, 8, 8, 1),
            Err(MdcaError::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn pgm_and_png_agree() {
        let dir = tempfile::tempdir().unwrap();
        let img = image::GrayImage::from_fn(6, 4, |x, y| image::Luma([(x * 40 + y * 7) as u8]));
        let png = dir.path().join("a.png");
        let pgm = dir.path().join("a.pgm");
        img.save(&png).unwrap();
        img.save(&pgm).unwrap();
        assert_eq!(load_image(&png, 4, 6, 1).unwrap(), load_image(&pgm, 4, 6, 1).unwrap());
    }

    #[test]
    fn unit_image_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("u.png");
        let x = ImageTensor::from_fn(4, 4, 1, |i, j, _| (i * 4 + j) as f32 * 17.0 / 255.0);
        save_unit_image(&p, &x).unwrap();
        let back = decode_image(&p, 1).unwrap();
        for (a, b) in back.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1.0 / 255.0);
        }
    }
}
