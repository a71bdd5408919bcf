//! Trace stamps: fixed seeded residual networks that imprint a
//! model-specific, visually imperceptible trace on base images. The
//! desk-scale stand-in for a generative model class.

use super::domains::Domain;
use crate::image::ImageTensor;
use crate::models::AugArchitecture;
use crate::nn::{tanh_forward, Conv2d};
use crate::util::rng_from;
use ndarray::Array3;
use serde::{Deserialize, Serialize};

pub const DEFAULT_AMPLITUDE: f64 = 0.02;

/// Identity of a synthetic source model. The residual network is a pure
/// function of `(seed, architecture_tag)`; `base_domain` only selects the
/// carrier corpus and `amplitude` scales the residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStamp {
    pub seed: u64,
    pub architecture_tag: AugArchitecture,
    pub amplitude: f64,
    pub base_domain: Domain,
}

impl TraceStamp {
    pub fn new(seed: u64, architecture_tag: AugArchitecture, base_domain: Domain) -> Self {
        TraceStamp { seed, architecture_tag, amplitude: DEFAULT_AMPLITUDE, base_domain }
    }

    /// The (seed, arch, domain) triple that must be unique per model.
    pub fn identity(&self) -> (u64, String, Domain) {
        (self.seed, self.architecture_tag.tag(), self.base_domain)
    }

    /// Builds the residual network. Output is tanh-bounded in (-1, 1).
    pub fn network(&self) -> StampNetwork {
        let tag = self.architecture_tag.tag();
        let mut rng = rng_from(self.seed, &[b"trace-stamp", tag.as_bytes()]);
        const HIDDEN: usize = 32;
        let convs = match self.architecture_tag {
            AugArchitecture::Conv { layers, kernel } => {
                let pad = (kernel - 1) / 2;
                let mut widths = Vec::with_capacity(layers + 1);
                widths.push(3);
                for _ in 1..layers {
                    widths.push(HIDDEN);
                }
                widths.push(3);
                (0..layers)
                    .map(|i| Conv2d::new(widths[i], widths[i + 1], kernel, 1, pad, 4.0, &mut rng))
                    .collect()
            }
            AugArchitecture::UpDown => vec![
                Conv2d::new(3, HIDDEN, 3, 1, 1, 4.0, &mut rng),
                Conv2d::new(HIDDEN, 3, 3, 1, 1, 4.0, &mut rng),
            ],
        };
        StampNetwork { arch: self.architecture_tag, convs }
    }
}

/// The fixed residual generator `g` of a stamp.
#[derive(Debug, Clone, PartialEq)]
pub struct StampNetwork {
    arch: AugArchitecture,
    convs: Vec<Conv2d>,
}

impl StampNetwork {
    /// `g(x)` with every entry in (-1, 1).
    pub fn residual(&self, x: &Array3<f64>) -> Array3<f64> {
        let mut a = x.clone();
        match self.arch {
            AugArchitecture::Conv { .. } => {
                for (i, conv) in self.convs.iter().enumerate() {
                    let z = conv.forward(&a);
                    a = if i + 1 < self.convs.len() { tanh_forward(&z) } else { z };
                }
            }
            AugArchitecture::UpDown => {
                let pooled = crate::nn::avg_pool2_forward(&a);
                let z0 = tanh_forward(&self.convs[0].forward(&pooled));
                let up = crate::nn::upsample2_forward(&z0);
                a = self.convs[1].forward(&up);
            }
        }
        tanh_forward(&a)
    }
}

/// `clip(x + amplitude * g(x))`. With the bounded residual, the mean
/// absolute change never exceeds the amplitude.
pub fn apply_trace(stamp: &TraceStamp, x: &ImageTensor) -> ImageTensor {
    if stamp.amplitude == 0.0 {
        return x.clone();
    }
    let g = stamp.network().residual(&x.0);
    let mut out = x.0.clone();
    out.zip_mut_with(&g, |o, &r| *o = (*o + stamp.amplitude * r).clamp(0.0, 1.0));
    ImageTensor(out)
}

/// Reusable variant for stamping a whole corpus without rebuilding the
/// network per image.
pub fn apply_trace_with(network: &StampNetwork, amplitude: f64, x: &ImageTensor) -> ImageTensor {
    if amplitude == 0.0 {
        return x.clone();
    }
    let g = network.residual(&x.0);
    let mut out = x.0.clone();
    out.zip_mut_with(&g, |o, &r| *o = (*o + amplitude * r).clamp(0.0, 1.0));
    ImageTensor(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::domains::{synth_base_corpus, Domain};
    use crate::image::psnr;

    fn stamp(seed: u64) -> TraceStamp {
        TraceStamp::new(seed, AugArchitecture::default(), Domain::Plasma)
    }

    #[test]
    fn zero_amplitude_is_identity() {
        let img = &synth_base_corpus(Domain::Plasma, 16, 1, 3).unwrap()[0];
        let mut s = stamp(1);
        s.amplitude = 0.0;
        assert_eq!(apply_trace(&s, img), *img);
    }

    #[test]
    fn stamping_is_deterministic() {
        let img = &synth_base_corpus(Domain::Shapes, 16, 1, 5).unwrap()[0];
        let s = stamp(9);
        assert_eq!(apply_trace(&s, img), apply_trace(&s, img));
    }

    #[test]
    fn stamp_network_depends_on_seed_and_arch_only() {
        let a = TraceStamp::new(4, AugArchitecture::default(), Domain::Plasma);
        let b = TraceStamp::new(4, AugArchitecture::default(), Domain::Mosaic);
        assert_eq!(a.network(), b.network());
        let c = TraceStamp::new(5, AugArchitecture::default(), Domain::Plasma);
        assert_ne!(a.network(), c.network());
    }

    #[test]
    fn mean_change_bounded_by_amplitude_and_psnr_over_30db() {
        let imgs = synth_base_corpus(Domain::Plasma, 32, 4, 11).unwrap();
        let s = stamp(13);
        for img in &imgs {
            let y = apply_trace(&s, img);
            let mean_abs: f64 = img
                .0
                .iter()
                .zip(y.0.iter())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / img.0.len() as f64;
            assert!(mean_abs <= s.amplitude + 1e-12);
            assert!(psnr(img, &y).unwrap() >= 30.0);
        }
    }
}
