//! Procedural base corpora. Each domain tag produces images with its own
//! texture and spectrum statistics, standing in for distinct source
//! datasets. Everything derives from the per-image seed, so generation is
//! order-independent.

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::util::{maybe_par_map, rng_from};
use ndarray::{Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Base-corpus families with distinct texture statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    /// Smooth low-frequency cosine fields.
    Plasma,
    /// Gradient backgrounds with hard-edged geometric shapes.
    Shapes,
    /// Blocky tiles of near-constant colour.
    Mosaic,
    /// Superposed mid-frequency gratings.
    Waves,
}

impl Domain {
    pub const ALL: [Domain; 4] = [Domain::Plasma, Domain::Shapes, Domain::Mosaic, Domain::Waves];

    pub fn tag(&self) -> &'static str {
        match self {
            Domain::Plasma => "plasma",
            Domain::Shapes => "shapes",
            Domain::Mosaic => "mosaic",
            Domain::Waves => "waves",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plasma" => Ok(Domain::Plasma),
            "shapes" => Ok(Domain::Shapes),
            "mosaic" => Ok(Domain::Mosaic),
            "waves" => Ok(Domain::Waves),
            other => Err(Error::InvalidParameter(format!("unknown domain tag {other}"))),
        }
    }
}

fn base_field_plasma(n: usize, rng: &mut ChaCha20Rng) -> Array2<f64> {
    let mut field = Array2::zeros((n, n));
    let components = 6;
    for _ in 0..components {
        let fx: f64 = rng.random_range(0.5..3.5);
        let fy: f64 = rng.random_range(0.5..3.5);
        let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let amp: f64 = rng.random_range(0.3..1.0);
        for i in 0..n {
            for j in 0..n {
                let arg = std::f64::consts::TAU
                    * (fx * i as f64 / n as f64 + fy * j as f64 / n as f64)
                    + phase;
                field[[i, j]] += amp * arg.sin();
            }
        }
    }
    field
}

fn base_field_shapes(n: usize, rng: &mut ChaCha20Rng) -> Array2<f64> {
    // gradient background
    let gx: f64 = rng.random_range(-1.0..1.0);
    let gy: f64 = rng.random_range(-1.0..1.0);
    let mut field = Array2::from_shape_fn((n, n), |(i, j)| {
        gx * i as f64 / n as f64 + gy * j as f64 / n as f64
    });
    let shapes = rng.random_range(3..7);
    for _ in 0..shapes {
        let cx: f64 = rng.random_range(0.0..n as f64);
        let cy: f64 = rng.random_range(0.0..n as f64);
        let r: f64 = rng.random_range(n as f64 * 0.08..n as f64 * 0.3);
        let level: f64 = rng.random_range(-1.5..1.5);
        let rect = rng.random_range(0..2) == 0;
        for i in 0..n {
            for j in 0..n {
                let inside = if rect {
                    (i as f64 - cx).abs() < r && (j as f64 - cy).abs() < r
                } else {
                    (i as f64 - cx).powi(2) + (j as f64 - cy).powi(2) < r * r
                };
                if inside {
                    field[[i, j]] = level;
                }
            }
        }
    }
    field
}

fn base_field_mosaic(n: usize, rng: &mut ChaCha20Rng) -> Array2<f64> {
    let tile = *[4usize, 8]
        .get(rng.random_range(0..2usize))
        .unwrap()
        .min(&n.max(2));
    let tiles = n.div_ceil(tile);
    let mut levels = Array2::zeros((tiles, tiles));
    for v in levels.iter_mut() {
        *v = rng.random_range(-1.5..1.5);
    }
    Array2::from_shape_fn((n, n), |(i, j)| levels[[i / tile, j / tile]])
}

fn base_field_waves(n: usize, rng: &mut ChaCha20Rng) -> Array2<f64> {
    let mut field = Array2::zeros((n, n));
    for _ in 0..4 {
        let fx: f64 = rng.random_range(4.0..10.0);
        let fy: f64 = rng.random_range(4.0..10.0);
        let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let amp: f64 = rng.random_range(0.3..0.8);
        for i in 0..n {
            for j in 0..n {
                let arg = std::f64::consts::TAU
                    * (fx * i as f64 / n as f64 + fy * j as f64 / n as f64)
                    + phase;
                field[[i, j]] += amp * arg.cos();
            }
        }
    }
    field
}

/// One procedural image, deterministic from the RNG stream.
pub fn synth_base_image(domain: Domain, size: usize, rng: &mut ChaCha20Rng) -> ImageTensor {
    let field = match domain {
        Domain::Plasma => base_field_plasma(size, rng),
        Domain::Shapes => base_field_shapes(size, rng),
        Domain::Mosaic => base_field_mosaic(size, rng),
        Domain::Waves => base_field_waves(size, rng),
    };
    // squash to (0.08, 0.92) and colourize with a gentle per-image tint
    let lo = field.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = field.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-9);
    let tint: Vec<f64> = (0..3).map(|_| rng.random_range(0.75..1.0)).collect();
    let offset: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..0.1)).collect();
    let mut img = Array3::zeros((3, size, size));
    for c in 0..3 {
        for i in 0..size {
            for j in 0..size {
                let v = 0.08 + 0.84 * (field[[i, j]] - lo) / span;
                img[[c, i, j]] = (v * tint[c] + offset[c]).clamp(0.0, 1.0);
            }
        }
    }
    ImageTensor(img)
}

/// A deterministic corpus of `count` images. Image `i` derives its stream
/// from `(seed, domain, i)` alone, so parallel generation is
/// order-independent.
pub fn synth_base_corpus(domain: Domain, size: usize, count: usize, seed: u64) -> Result<Vec<ImageTensor>> {
    if count == 0 {
        return Err(Error::InvalidParameter("corpus count must be >= 1".into()));
    }
    let indices: Vec<usize> = (0..count).collect();
    Ok(maybe_par_map(&indices, |&i| {
        let mut rng = rng_from(seed, &[domain.tag().as_bytes(), &(i as u64).to_le_bytes()]);
        synth_base_image(domain, size, &mut rng)
    }))
}
