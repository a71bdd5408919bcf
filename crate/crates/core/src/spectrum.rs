//! Frequency-domain analysis: 2D power spectra, azimuthal integration
//! profiles, and the DCT feature transform used as the task model's
//! front end.
//!
//! All functions here are pure and safe to call from many threads.

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use ndarray::{Array2, Array3};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::{Arc, Mutex, OnceLock};

/// 1D azimuthal integration of a 2D power spectrum: `values[r]` is the
/// mean power over pixels whose rounded radius from the grid center is
/// `r`, for `r < floor(N/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumProfile {
    values: Vec<f64>,
    normalized: bool,
}

impl SpectrumProfile {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn normalized(&self) -> bool {
        self.normalized
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Builds a profile from raw bin means. Callers must pass means that
    /// already satisfy the documented invariants; this checks them.
    pub fn from_values(values: Vec<f64>, normalized: bool) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(
                "profile values must be finite and non-negative".into(),
            ));
        }
        if normalized && values.first() != Some(&1.0) {
            return Err(Error::InvalidInput(
                "normalized profile must start at exactly 1".into(),
            ));
        }
        Ok(SpectrumProfile { values, normalized })
    }

    /// One row per bin: `index,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,value\n");
        for (i, v) in self.values.iter().enumerate() {
            let _ = writeln!(out, "{i},{v}");
        }
        out
    }

    /// Mean of several equally long profiles with the same flag.
    pub fn mean_of(profiles: &[SpectrumProfile]) -> Result<SpectrumProfile> {
        let first = profiles
            .first()
            .ok_or_else(|| Error::InvalidInput("empty profile set".into()))?;
        let n = first.len();
        let flag = first.normalized;
        let mut acc = vec![0.0; n];
        for p in profiles {
            if p.len() != n || p.normalized != flag {
                return Err(Error::InvalidInput("profile mean over mismatched profiles".into()));
            }
            for (a, v) in acc.iter_mut().zip(&p.values) {
                *a += v;
            }
        }
        let count = profiles.len() as f64;
        for a in acc.iter_mut() {
            *a /= count;
        }
        Ok(SpectrumProfile {
            values: acc,
            normalized: flag,
        })
    }
}

/// Orthonormal 2D DCT-II coefficients of an image, after elementwise
/// `log(|c| + eps)` compression.
#[derive(Debug, Clone)]
pub struct FrequencyFeatureMap {
    pub coefficients: Array3<f64>,
    /// The log-compression epsilon that produced `coefficients`.
    pub scale: f64,
}

fn check_square_finite(grid: &Array2<f64>) -> Result<usize> {
    let (h, w) = grid.dim();
    if h != w {
        return Err(Error::InvalidInput(format!(
            "expected square grid, got {h}x{w}"
        )));
    }
    if h < 2 {
        return Err(Error::InvalidInput("grid side must be at least 2".into()));
    }
    if grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite grid entry".into()));
    }
    Ok(h)
}

fn fft2(grid: &Array2<f64>) -> Array2<Complex<f64>> {
    let n = grid.nrows();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    // rows
    let mut data: Vec<Complex<f64>> = grid.iter().map(|&v| Complex::new(v, 0.0)).collect();
    for row in data.chunks_mut(n) {
        fft.process(row);
    }
    // columns, via transpose
    let mut col = vec![Complex::new(0.0, 0.0); n];
    let mut out = Array2::from_elem((n, n), Complex::new(0.0, 0.0));
    for j in 0..n {
        for i in 0..n {
            col[i] = data[i * n + j];
        }
        fft.process(&mut col);
        for i in 0..n {
            out[[i, j]] = col[i];
        }
    }
    out
}

/// Forward complex 2D DFT of a real-valued gradient grid; used by the
/// power-spectrum adjoint.
fn fft2_complex(grid: &Array2<Complex<f64>>) -> Array2<Complex<f64>> {
    let n = grid.nrows();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let mut data: Vec<Complex<f64>> = grid.iter().copied().collect();
    for row in data.chunks_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); n];
    let mut out = Array2::from_elem((n, n), Complex::new(0.0, 0.0));
    for j in 0..n {
        for i in 0..n {
            col[i] = data[i * n + j];
        }
        fft.process(&mut col);
        for i in 0..n {
            out[[i, j]] = col[i];
        }
    }
    out
}

fn fftshift_index(k: usize, n: usize) -> usize {
    (k + (n + 1) / 2) % n
}

/// Squared magnitude of the unnormalized 2D DFT, zero frequency moved to
/// the grid center (`floor(N/2)` in both axes).
pub fn power_spectrum_2d(image: &Array2<f64>) -> Result<Array2<f64>> {
    Ok(power_spectrum_with_spectrum(image)?.0)
}

/// Power spectrum plus the raw (unshifted) complex spectrum, for callers
/// that need the adjoint afterwards.
pub fn power_spectrum_with_spectrum(
    image: &Array2<f64>,
) -> Result<(Array2<f64>, Array2<Complex<f64>>)> {
    let n = check_square_finite(image)?;
    let spec = fft2(image);
    let mut power = Array2::zeros((n, n));
    for u in 0..n {
        for v in 0..n {
            let s = spec[[fftshift_index(u, n), fftshift_index(v, n)]];
            power[[u, v]] = s.re * s.re + s.im * s.im;
        }
    }
    Ok((power, spec))
}

/// Adjoint of [`power_spectrum_2d`]: pulls a gradient on the (shifted)
/// power grid back onto the real input grid.
pub fn power_spectrum_backward(
    grad_power: &Array2<f64>,
    spectrum: &Array2<Complex<f64>>,
) -> Array2<f64> {
    let n = spectrum.nrows();
    // Unshift the gradient, multiply by conj(X), run a forward DFT and
    // keep twice the real part: d|X|^2/dx pulled back through the DFT.
    let mut weighted = Array2::from_elem((n, n), Complex::new(0.0, 0.0));
    for u in 0..n {
        for v in 0..n {
            let g = grad_power[[u, v]];
            let (su, sv) = (fftshift_index(u, n), fftshift_index(v, n));
            weighted[[su, sv]] = spectrum[[su, sv]].conj() * g;
        }
    }
    let back = fft2_complex(&weighted);
    back.mapv(|c| 2.0 * c.re)
}

/// Rounded-radius bin assignments for an `n x n` grid. Bin of `(u,v)` is
/// `round(dist((u,v), center))`; bins at or past `floor(n/2)` are dropped.
pub(crate) fn radial_bins(n: usize) -> (Vec<Option<usize>>, Vec<usize>) {
    let nbins = n / 2;
    let c = (n / 2) as f64;
    let mut bin_of = Vec::with_capacity(n * n);
    let mut counts = vec![0usize; nbins];
    for u in 0..n {
        for v in 0..n {
            let du = u as f64 - c;
            let dv = v as f64 - c;
            let r = (du * du + dv * dv).sqrt().round() as usize;
            if r < nbins {
                bin_of.push(Some(r));
                counts[r] += 1;
            } else {
                bin_of.push(None);
            }
        }
    }
    (bin_of, counts)
}

/// Mean power per rounded-radius bin; optionally normalized by the DC bin.
pub fn azimuthal_integration(power: &Array2<f64>, normalize: bool) -> Result<SpectrumProfile> {
    let n = check_square_finite(power)?;
    if power.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidInput("power entries must be >= 0".into()));
    }
    let (bin_of, counts) = radial_bins(n);
    let nbins = n / 2;
    let mut sums = vec![0.0f64; nbins];
    for (idx, b) in bin_of.iter().enumerate() {
        if let Some(r) = b {
            sums[*r] += power[[idx / n, idx % n]];
        }
    }
    let mut values: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| {
            debug_assert!(c > 0);
            s / c as f64
        })
        .collect();
    if normalize {
        let dc = values[0];
        if dc == 0.0 {
            return Err(Error::DegenerateSpectrum);
        }
        for v in values.iter_mut() {
            *v /= dc;
        }
        values[0] = 1.0;
    }
    Ok(SpectrumProfile { values, normalized: normalize })
}

/// Adjoint of unnormalized [`azimuthal_integration`]: spreads a profile
/// gradient uniformly over each bin's pixels.
pub fn azimuthal_backward(grad_profile: &[f64], n: usize) -> Array2<f64> {
    let (bin_of, counts) = radial_bins(n);
    let mut out = Array2::zeros((n, n));
    for (idx, b) in bin_of.iter().enumerate() {
        if let Some(r) = b {
            if *r < grad_profile.len() {
                out[[idx / n, idx % n]] = grad_profile[*r] / counts[*r] as f64;
            }
        }
    }
    out
}

/// Orthonormal DCT-II basis matrix of size `n`.
pub fn dct_matrix(n: usize) -> Array2<f64> {
    let mut d = Array2::zeros((n, n));
    let norm0 = (1.0 / n as f64).sqrt();
    let norm = (2.0 / n as f64).sqrt();
    for k in 0..n {
        let s = if k == 0 { norm0 } else { norm };
        for j in 0..n {
            d[[k, j]] = s * (std::f64::consts::PI * (2.0 * j as f64 + 1.0) * k as f64
                / (2.0 * n as f64))
                .cos();
        }
    }
    d
}

static DCT_CACHE: OnceLock<Mutex<HashMap<usize, Arc<Array2<f64>>>>> = OnceLock::new();

/// Shared, lazily built DCT basis for hot paths.
pub fn dct_mat_cached(n: usize) -> Arc<Array2<f64>> {
    let cache = DCT_CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().unwrap();
    map.entry(n).or_insert_with(|| Arc::new(dct_matrix(n))).clone()
}

/// Raw (pre-log) orthonormal 2D DCT-II of one channel.
pub fn dct2(channel: &Array2<f64>) -> Array2<f64> {
    let (h, w) = channel.dim();
    let dh = dct_matrix(h);
    let dw = dct_matrix(w);
    dh.dot(channel).dot(&dw.t())
}

/// Inverse of [`dct2`].
pub fn idct2(coeffs: &Array2<f64>) -> Array2<f64> {
    let (h, w) = coeffs.dim();
    let dh = dct_matrix(h);
    let dw = dct_matrix(w);
    dh.t().dot(coeffs).dot(&dw)
}

/// Per-channel orthonormal 2D DCT-II followed by `log(|c| + eps)`.
/// Shape-preserving and deterministic.
pub fn dct_feature_transform(image: &ImageTensor, eps: f64) -> Result<FrequencyFeatureMap> {
    if eps <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "dct eps must be positive, got {eps}"
        )));
    }
    let (c, h, w) = (image.channels(), image.height(), image.width());
    let mut coefficients = Array3::zeros((c, h, w));
    for ch in 0..c {
        let plane = image.0.index_axis(ndarray::Axis(0), ch).to_owned();
        let y = dct2(&plane);
        coefficients
            .index_axis_mut(ndarray::Axis(0), ch)
            .assign(&y.mapv(|v| (v.abs() + eps).ln()));
    }
    Ok(FrequencyFeatureMap { coefficients, scale: eps })
}

/// Euclidean norm of the elementwise difference between two profiles.
pub fn profile_distance(a: &SpectrumProfile, b: &SpectrumProfile) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "profile length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.normalized != b.normalized {
        return Err(Error::InvalidInput(
            "profile normalization flag mismatch".into(),
        ));
    }
    Ok(a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// `Freq(.)`: luminance, power spectrum, azimuthal integration.
pub fn freq_profile(image: &ImageTensor, normalize: bool) -> Result<SpectrumProfile> {
    let lum = image.luminance()?;
    let power = power_spectrum_2d(&lum)?;
    azimuthal_integration(&power, normalize)
}

/// Mean unnormalized Freq profile over a corpus.
pub fn mean_freq_profile(images: &[ImageTensor], normalize: bool) -> Result<SpectrumProfile> {
    let profiles = crate::util::maybe_par_map(images, |img| freq_profile(img, normalize));
    let profiles: Result<Vec<_>> = profiles.into_iter().collect();
    SpectrumProfile::mean_of(&profiles?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn constant_grid_has_only_dc_energy() {
        let n = 8;
        let c = 0.7;
        let grid = Array2::from_elem((n, n), c);
        let p = power_spectrum_2d(&grid).unwrap();
        let center = n / 2;
        let expect = (c * (n * n) as f64).powi(2);
        for u in 0..n {
            for v in 0..n {
                if u == center && v == center {
                    assert!((p[[u, v]] - expect).abs() / expect < 1e-12);
                } else {
                    assert!(p[[u, v]].abs() < expect * 1e-12);
                }
            }
        }
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let n = 6;
        for (i, j) in [(0, 0), (2, 3), (5, 5)] {
            let mut grid = Array2::zeros((n, n));
            grid[[i, j]] = 1.0;
            let p = power_spectrum_2d(&grid).unwrap();
            for v in p.iter() {
                assert!((v - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn power_spectrum_rejects_bad_input() {
        let rect = Array2::<f64>::zeros((4, 6));
        assert!(power_spectrum_2d(&rect).is_err());
        let mut nan = Array2::zeros((4, 4));
        nan[[0, 0]] = f64::NAN;
        assert!(power_spectrum_2d(&nan).is_err());
    }

    #[test]
    fn constant_image_profile_normalizes_to_unit_dc() {
        let grid = Array2::from_elem((16, 16), 0.4);
        let p = power_spectrum_2d(&grid).unwrap();
        let prof = azimuthal_integration(&p, true).unwrap();
        assert_eq!(prof.values()[0], 1.0);
        for v in &prof.values()[1..] {
            assert!(v.abs() < 1e-18);
        }
    }

    #[test]
    fn flat_power_grid_gives_all_ones() {
        let p = Array2::from_elem((12, 12), 1.0);
        let prof = azimuthal_integration(&p, true).unwrap();
        for v in prof.values() {
            assert!((v - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn normalize_with_zero_dc_is_degenerate() {
        let mut p = Array2::zeros((8, 8));
        p[[0, 0]] = 1.0; // corner, discarded from bins; bin 0 stays zero
        assert!(matches!(
            azimuthal_integration(&p, true),
            Err(Error::DegenerateSpectrum)
        ));
    }

    #[test]
    fn dct_of_constant_channel_is_dc_only() {
        let n = 8;
        let c = 0.3;
        let plane = Array2::from_elem((n, n), c);
        let y = dct2(&plane);
        assert!((y[[0, 0]] - c * n as f64).abs() < 1e-12);
        for (idx, v) in y.iter().enumerate() {
            if idx != 0 {
                assert!(v.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dct_feature_transform_validates_eps() {
        let img = ImageTensor::zeros(3, 4, 4);
        assert!(dct_feature_transform(&img, 0.0).is_err());
        assert!(dct_feature_transform(&img, -1.0).is_err());
        assert!(dct_feature_transform(&img, 1e-12).is_ok());
    }

    #[test]
    fn profile_distance_examples() {
        let a = SpectrumProfile::from_values(vec![1.0, 0.0], false).unwrap();
        let b = SpectrumProfile::from_values(vec![1.0, 1.0], false).unwrap();
        assert_eq!(profile_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(profile_distance(&a, &b).unwrap(), 1.0);
        let c = SpectrumProfile::from_values(vec![1.0, 0.0, 0.0], false).unwrap();
        assert!(profile_distance(&a, &c).is_err());
        let d = SpectrumProfile::from_values(vec![1.0, 0.0], true).unwrap();
        assert!(profile_distance(&a, &d).is_err());
    }

    #[test]
    fn profile_csv_has_one_row_per_bin() {
        let p = SpectrumProfile::from_values(vec![2.0, 1.0, 0.5], false).unwrap();
        let csv = p.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("index,value\n0,2\n"));
    }
}
