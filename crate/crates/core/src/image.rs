//! [`ImageTensor`]: the floating-point channels-first image every pipeline
//! works on.

use crate::error::{Error, Result};
use ndarray::{Array2, Array3};
use std::path::Path;

/// A floating-point image, `channels x height x width`. Benchmark images
/// live in `[0,1]`; augmented images are unclamped until export.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor(pub Array3<f64>);

/// ITU-R BT.601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

impl ImageTensor {
    pub fn new(data: Array3<f64>) -> Self {
        ImageTensor(data)
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        ImageTensor(Array3::zeros((channels, height, width)))
    }

    pub fn channels(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    /// Weighted luminance plane. Identity for single-channel input.
    pub fn luminance(&self) -> Result<Array2<f64>> {
        match self.channels() {
            1 => Ok(self.0.index_axis(ndarray::Axis(0), 0).to_owned()),
            3 => {
                let (h, w) = (self.height(), self.width());
                let mut out = Array2::zeros((h, w));
                for (c, &wc) in LUMA.iter().enumerate() {
                    out.scaled_add(wc, &self.0.index_axis(ndarray::Axis(0), c));
                }
                Ok(out)
            }
            c => Err(Error::InvalidInput(format!(
                "luminance needs 1 or 3 channels, got {c}"
            ))),
        }
    }

    pub fn clamp01(&self) -> Self {
        ImageTensor(self.0.mapv(|v| v.clamp(0.0, 1.0)))
    }

    /// Quantizes to interleaved RGB8 (or replicates a single channel).
    pub fn to_rgb8(&self) -> Result<image::RgbImage> {
        let (h, w) = (self.height(), self.width());
        let mut img = image::RgbImage::new(w as u32, h as u32);
        for y in 0..h {
            for x in 0..w {
                let px = |c: usize| -> u8 {
                    (self.0[[c, y, x]].clamp(0.0, 1.0) * 255.0).round() as u8
                };
                let rgb = match self.channels() {
                    1 => [px(0), px(0), px(0)],
                    3 => [px(0), px(1), px(2)],
                    c => {
                        return Err(Error::InvalidInput(format!(
                            "cannot export {c}-channel image"
                        )))
                    }
                };
                img.put_pixel(x as u32, y as u32, image::Rgb(rgb));
            }
        }
        Ok(img)
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut data = Array3::zeros((3, h, w));
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                data[[c, y as usize, x as usize]] = f64::from(p.0[c]) / 255.0;
            }
        }
        ImageTensor(data)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let img = self.to_rgb8()?;
        img.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        Ok(Self::from_rgb8(&img))
    }
}

/// Mean squared error between two equally shaped images.
pub fn mse(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    if a.0.shape() != b.0.shape() {
        return Err(Error::InvalidInput("shape mismatch in mse".into()));
    }
    let n = a.0.len() as f64;
    let sum: f64 = a
        .0
        .iter()
        .zip(b.0.iter())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum();
    Ok(sum / n)
}

/// Peak signal-to-noise ratio in dB for unit-range images.
/// Returns infinity for identical inputs.
pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / m).log10())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb8_round_trip_is_lossless_on_quantized_values() {
        let mut t = ImageTensor::zeros(3, 4, 4);
        for (i, v) in t.0.iter_mut().enumerate() {
            *v = (i % 256) as f64 / 255.0;
        }
        let back = ImageTensor::from_rgb8(&t.to_rgb8().unwrap());
        for (a, b) in t.0.iter().zip(back.0.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn psnr_of_identical_images_is_infinite() {
        let t = ImageTensor::zeros(3, 8, 8);
        assert!(psnr(&t, &t).unwrap().is_infinite());
    }

    #[test]
    fn luminance_rejects_two_channel_input() {
        let t = ImageTensor::zeros(2, 4, 4);
        assert!(t.luminance().is_err());
    }
}
