//! The robustness perturbation suite: blur, JPEG, lighting, noise, and
//! crop-plus-resize.

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::util::rng_from;
use ndarray::{Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbKind {
    /// Gaussian blur; strength is sigma in [0, 5].
    Blur,
    /// JPEG round trip; strength is quality in [1, 100].
    Jpeg,
    /// Additive brightness shift; strength in [-0.5, 0.5].
    Lighting,
    /// Additive Gaussian noise; strength is sigma in [0, 1].
    Noise,
    /// Centered crop of the given fraction in (0, 1], resized back.
    CropResize,
}

impl PerturbKind {
    pub fn tag(&self) -> &'static str {
        match self {
            PerturbKind::Blur => "blur",
            PerturbKind::Jpeg => "jpeg",
            PerturbKind::Lighting => "lighting",
            PerturbKind::Noise => "noise",
            PerturbKind::CropResize => "crop_resize",
        }
    }
}

impl FromStr for PerturbKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blur" => Ok(PerturbKind::Blur),
            "jpeg" => Ok(PerturbKind::Jpeg),
            "lighting" => Ok(PerturbKind::Lighting),
            "noise" => Ok(PerturbKind::Noise),
            "crop_resize" => Ok(PerturbKind::CropResize),
            other => Err(Error::InvalidParameter(format!("unknown perturbation kind {other}"))),
        }
    }
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * n - 2 - i;
    }
    i.clamp(0, n - 1) as usize
}

fn gaussian_blur(x: &Array3<f64>, sigma: f64) -> Array3<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for d in -radius..=radius {
        kernel.push((-(d * d) as f64 / (2.0 * sigma * sigma)).exp());
    }
    let sum: f64 = kernel.iter().sum();
    for k in kernel.iter_mut() {
        *k /= sum;
    }
    let (c, h, w) = x.dim();
    let mut tmp = Array3::zeros((c, h, w));
    for ci in 0..c {
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for (ki, kv) in kernel.iter().enumerate() {
                    let jj = reflect(j as isize + ki as isize - radius, w);
                    acc += kv * x[[ci, i, jj]];
                }
                tmp[[ci, i, j]] = acc;
            }
        }
    }
    let mut out = Array3::zeros((c, h, w));
    for ci in 0..c {
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for (ki, kv) in kernel.iter().enumerate() {
                    let ii = reflect(i as isize + ki as isize - radius, h);
                    acc += kv * tmp[[ci, ii, j]];
                }
                out[[ci, i, j]] = acc;
            }
        }
    }
    out
}

fn jpeg_round_trip(x: &ImageTensor, quality: u8) -> Result<ImageTensor> {
    let rgb = x.to_rgb8()?;
    let mut buf = Vec::new();
    {
        let encoder = image::codecs::jpeg::JpegEncoder::new_with_quality(&mut buf, quality);
        rgb.write_with_encoder(encoder)?;
    }
    let decoded = image::load_from_memory_with_format(&buf, image::ImageFormat::Jpeg)?.to_rgb8();
    Ok(ImageTensor::from_rgb8(&decoded))
}

/// Bilinear resize with corner alignment; same-size input comes back
/// bit-exact.
fn resize_bilinear(x: &Array2<f64>, out_n: usize) -> Array2<f64> {
    let in_n = x.nrows();
    if in_n == out_n {
        return x.clone();
    }
    let scale = if out_n > 1 {
        (in_n - 1) as f64 / (out_n - 1) as f64
    } else {
        0.0
    };
    Array2::from_shape_fn((out_n, out_n), |(i, j)| {
        let fi = i as f64 * scale;
        let fj = j as f64 * scale;
        let i0 = fi.floor() as usize;
        let j0 = fj.floor() as usize;
        let i1 = (i0 + 1).min(in_n - 1);
        let j1 = (j0 + 1).min(in_n - 1);
        let di = fi - i0 as f64;
        let dj = fj - j0 as f64;
        x[[i0, j0]] * (1.0 - di) * (1.0 - dj)
            + x[[i1, j0]] * di * (1.0 - dj)
            + x[[i0, j1]] * (1.0 - di) * dj
            + x[[i1, j1]] * di * dj
    })
}

fn crop_resize(x: &ImageTensor, fraction: f64) -> ImageTensor {
    let (c, h, w) = x.0.dim();
    debug_assert_eq!(h, w);
    let side = ((h as f64 * fraction).round() as usize).clamp(2, h);
    let off = (h - side) / 2;
    let mut out = Array3::zeros((c, h, w));
    for ci in 0..c {
        let crop = Array2::from_shape_fn((side, side), |(i, j)| x.0[[ci, off + i, off + j]]);
        out.index_axis_mut(ndarray::Axis(0), ci)
            .assign(&resize_bilinear(&crop, h));
    }
    ImageTensor(out)
}

/// Applies one perturbation. Deterministic given `(x, kind, strength,
/// seed)`; the seed only matters for noise. Output stays in `[0,1]`.
pub fn perturb(x: &ImageTensor, kind: PerturbKind, strength: f64, seed: u64) -> Result<ImageTensor> {
    match kind {
        PerturbKind::Blur => {
            if !(0.0..=5.0).contains(&strength) {
                return Err(Error::InvalidParameter(format!("blur sigma {strength} outside [0,5]")));
            }
            if strength == 0.0 {
                return Ok(x.clone());
            }
            Ok(ImageTensor(gaussian_blur(&x.0, strength)).clamp01())
        }
        PerturbKind::Jpeg => {
            let q = strength.round();
            if !(1.0..=100.0).contains(&q) {
                return Err(Error::InvalidParameter(format!("jpeg quality {strength} outside [1,100]")));
            }
            jpeg_round_trip(x, q as u8)
        }
        PerturbKind::Lighting => {
            if !(-0.5..=0.5).contains(&strength) {
                return Err(Error::InvalidParameter(format!(
                    "lighting shift {strength} outside [-0.5,0.5]"
                )));
            }
            Ok(ImageTensor(x.0.mapv(|v| (v + strength).clamp(0.0, 1.0))))
        }
        PerturbKind::Noise => {
            if !(0.0..=1.0).contains(&strength) {
                return Err(Error::InvalidParameter(format!("noise sigma {strength} outside [0,1]")));
            }
            if strength == 0.0 {
                return Ok(x.clone());
            }
            let mut rng = rng_from(seed, &[b"perturb-noise"]);
            let mut out = x.0.clone();
            for v in out.iter_mut() {
                // Box-Muller
                let u1: f64 = rng.random_range(f64::EPSILON..1.0);
                let u2: f64 = rng.random_range(0.0..1.0);
                let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
                *v = (*v + strength * z).clamp(0.0, 1.0);
            }
            Ok(ImageTensor(out))
        }
        PerturbKind::CropResize => {
            if !(strength > 0.0 && strength <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "crop fraction {strength} outside (0,1]"
                )));
            }
            Ok(crop_resize(x, strength).clamp01())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::domains::{synth_base_corpus, Domain};
    use crate::image::psnr;

    #[test]
    fn zero_noise_is_identity() {
        let img = &synth_base_corpus(Domain::Plasma, 16, 1, 1).unwrap()[0];
        assert_eq!(perturb(img, PerturbKind::Noise, 0.0, 7).unwrap(), *img);
    }

    #[test]
    fn full_crop_is_identity_up_to_resampling() {
        let img = &synth_base_corpus(Domain::Shapes, 16, 1, 2).unwrap()[0];
        let out = perturb(img, PerturbKind::CropResize, 1.0, 0).unwrap();
        for (a, b) in img.0.iter().zip(out.0.iter()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn jpeg_quality_100_keeps_psnr_above_40db() {
        let img = &synth_base_corpus(Domain::Plasma, 32, 1, 3).unwrap()[0];
        let out = perturb(img, PerturbKind::Jpeg, 100.0, 0).unwrap();
        assert!(psnr(img, &out).unwrap() > 40.0);
    }

    #[test]
    fn strength_ranges_are_enforced() {
        let img = &synth_base_corpus(Domain::Plasma, 8, 1, 4).unwrap()[0];
        assert!(perturb(img, PerturbKind::Blur, -0.1, 0).is_err());
        assert!(perturb(img, PerturbKind::Jpeg, 0.0, 0).is_err());
        assert!(perturb(img, PerturbKind::Lighting, 0.9, 0).is_err());
        assert!(perturb(img, PerturbKind::Noise, 2.0, 0).is_err());
        assert!(perturb(img, PerturbKind::CropResize, 0.0, 0).is_err());
    }

    #[test]
    fn noise_is_seed_deterministic() {
        let img = &synth_base_corpus(Domain::Waves, 16, 1, 5).unwrap()[0];
        let a = perturb(img, PerturbKind::Noise, 0.05, 11).unwrap();
        let b = perturb(img, PerturbKind::Noise, 0.05, 11).unwrap();
        let c = perturb(img, PerturbKind::Noise, 0.05, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
