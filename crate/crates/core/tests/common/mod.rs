//! Shared brute-force oracles and finite-difference helpers. Everything
//! here is deliberately independent of the library's implementation
//! paths: direct double sums, exhaustive enumerations, full threshold
//! scans.

#![allow(dead_code)]

use ndarray::{Array2, ArrayView1, ArrayView2};
use osma_core::evalkit::PredictionRecord;
use rand::Rng;
use rand_chacha::ChaCha20Rng;

pub fn test_rng(seed: u64) -> ChaCha20Rng {
    use rand::SeedableRng;
    ChaCha20Rng::seed_from_u64(seed)
}

/// O(N^4) direct 2D DFT power spectrum with the zero frequency moved to
/// floor(N/2).
pub fn power_spectrum_direct(grid: &Array2<f64>) -> Array2<f64> {
    let n = grid.nrows();
    let mut shifted = Array2::zeros((n, n));
    let center = |k: usize| (k + (n + 1) / 2) % n;
    for k in 0..n {
        for l in 0..n {
            let mut re = 0.0;
            let mut im = 0.0;
            for m in 0..n {
                for p in 0..n {
                    let ang = -2.0 * std::f64::consts::PI
                        * (k as f64 * m as f64 + l as f64 * p as f64)
                        / n as f64;
                    re += grid[[m, p]] * ang.cos();
                    im += grid[[m, p]] * ang.sin();
                }
            }
            // raw index (k,l) appears at shifted position
            let (sk, sl) = (inv_shift(k, n), inv_shift(l, n));
            let _ = center;
            shifted[[sk, sl]] = re * re + im * im;
        }
    }
    shifted
}

fn inv_shift(raw: usize, n: usize) -> usize {
    // raw index k lands at (k + floor(n/2)) mod n after an fftshift
    (raw + n / 2) % n
}

/// O(N^2) per-bin radius enumeration, accumulating row-major per bin.
pub fn azimuthal_direct(power: &Array2<f64>, normalize: bool) -> Vec<f64> {
    let n = power.nrows();
    let nbins = n / 2;
    let c = (n / 2) as f64;
    let mut values = Vec::with_capacity(nbins);
    for r in 0..nbins {
        let mut sum = 0.0;
        let mut count = 0usize;
        for u in 0..n {
            for v in 0..n {
                let du = u as f64 - c;
                let dv = v as f64 - c;
                if (du * du + dv * dv).sqrt().round() as usize == r {
                    sum += power[[u, v]];
                    count += 1;
                }
            }
        }
        values.push(sum / count as f64);
    }
    if normalize {
        let dc = values[0];
        for v in values.iter_mut() {
            *v /= dc;
        }
        values[0] = 1.0;
    }
    values
}

/// Direct double-sum orthonormal DCT-II.
pub fn dct2_direct(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let m = x.ncols();
    let s = |k: usize, len: usize| {
        if k == 0 {
            (1.0 / len as f64).sqrt()
        } else {
            (2.0 / len as f64).sqrt()
        }
    };
    Array2::from_shape_fn((n, m), |(k, l)| {
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..m {
                acc += x[[i, j]]
                    * (std::f64::consts::PI * (2.0 * i as f64 + 1.0) * k as f64 / (2.0 * n as f64))
                        .cos()
                    * (std::f64::consts::PI * (2.0 * j as f64 + 1.0) * l as f64 / (2.0 * m as f64))
                        .cos();
            }
        }
        s(k, n) * s(l, m) * acc
    })
}

/// O(n*m) pairwise Mann-Whitney AUC.
pub fn auc_pairwise(closed: &[f64], open: &[f64]) -> f64 {
    let mut acc = 0.0;
    for &c in closed {
        for &o in open {
            if c > o {
                acc += 1.0;
            } else if c == o {
                acc += 0.5;
            }
        }
    }
    acc / (closed.len() as f64 * open.len() as f64)
}

/// Exhaustive threshold-sweep OSCR with full rescans per threshold.
pub fn oscr_sweep(closed: &[PredictionRecord], open: &[PredictionRecord]) -> f64 {
    let mut thresholds: Vec<f64> = closed
        .iter()
        .chain(open.iter())
        .map(|r| r.confidence)
        .chain([0.0, 1.0])
        .collect();
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    thresholds.dedup();
    let mut points: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&t| {
            let ccr = closed
                .iter()
                .filter(|r| r.confidence >= t && r.predicted == r.true_label.unwrap())
                .count() as f64
                / closed.len() as f64;
            let fpr =
                open.iter().filter(|r| r.confidence >= t).count() as f64 / open.len() as f64;
            (fpr, ccr)
        })
        .collect();
    points.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut area = 0.0;
    for w in points.windows(2) {
        area += (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0;
    }
    area
}

/// Exhaustive batch-all triplet loss: mean hinge over all valid triplets.
pub fn triplet_direct(emb: ArrayView2<f64>, labels: &[usize], margin: f64) -> (f64, usize) {
    let n = emb.nrows();
    let dist2 = |a: ArrayView1<f64>, b: ArrayView1<f64>| -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
    };
    let mut total = 0.0;
    let mut count = 0usize;
    for a in 0..n {
        for p in 0..n {
            if a == p || labels[a] != labels[p] {
                continue;
            }
            for neg in 0..n {
                if labels[neg] == labels[a] {
                    continue;
                }
                count += 1;
                let h = dist2(emb.row(a), emb.row(p)) - dist2(emb.row(a), emb.row(neg)) + margin;
                if h > 0.0 {
                    total += h;
                }
            }
        }
    }
    if count == 0 {
        (0.0, 0)
    } else {
        (total / count as f64, count)
    }
}

/// Direct contingency-table purity / NMI / ARI.
pub fn cluster_scores_direct(clusters: &[usize], labels: &[usize]) -> (f64, f64, f64) {
    let n = clusters.len() as f64;
    let kc = clusters.iter().max().unwrap() + 1;
    let mut label_vals: Vec<usize> = labels.to_vec();
    label_vals.sort_unstable();
    label_vals.dedup();
    let lc = label_vals.len();
    let lid = |l: usize| label_vals.iter().position(|&x| x == l).unwrap();
    let mut table = vec![vec![0usize; lc]; kc];
    for (&c, &l) in clusters.iter().zip(labels) {
        table[c][lid(l)] += 1;
    }
    let a: Vec<usize> = table.iter().map(|r| r.iter().sum()).collect();
    let mut b = vec![0usize; lc];
    for row in &table {
        for (j, &v) in row.iter().enumerate() {
            b[j] += v;
        }
    }
    let purity = table.iter().map(|r| *r.iter().max().unwrap()).sum::<usize>() as f64 / n;

    let mut mi = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if v > 0 {
                let pij = v as f64 / n;
                mi += pij * (n * v as f64 / (a[i] as f64 * b[j] as f64)).ln();
            }
        }
    }
    let ent = |sizes: &[usize]| -> f64 {
        sizes
            .iter()
            .filter(|&&s| s > 0)
            .map(|&s| {
                let p = s as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let denom = (ent(&a) + ent(&b)) / 2.0;
    let nmi = if denom > 0.0 { mi / denom } else { 0.0 };

    let c2 = |x: usize| x as f64 * (x as f64 - 1.0) / 2.0;
    let index: f64 = table.iter().flatten().map(|&v| c2(v)).sum();
    let sa: f64 = a.iter().map(|&v| c2(v)).sum();
    let sb: f64 = b.iter().map(|&v| c2(v)).sum();
    let expected = sa * sb / c2(clusters.len());
    let maxi = (sa + sb) / 2.0;
    let ari = if (maxi - expected).abs() < 1e-15 {
        if (index - expected).abs() < 1e-15 {
            1.0
        } else {
            0.0
        }
    } else {
        (index - expected) / (maxi - expected)
    };
    (purity, nmi, ari)
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-3;

/// Central finite difference of `f` at `x`, one coordinate at a time.
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut x = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let fp = f(&x);
        x[i] = orig - h;
        let fm = f(&x);
        x[i] = orig;
        grad.push((fp - fm) / (2.0 * h));
    }
    grad
}

/// Relative-error check between an analytic gradient and its FD estimate.
pub fn assert_grad_close(analytic: &[f64], fd: &[f64], context: &str) {
    assert_eq!(analytic.len(), fd.len(), "{context}: length mismatch");
    let scale = fd
        .iter()
        .chain(analytic.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-8);
    for (i, (a, f)) in analytic.iter().zip(fd).enumerate() {
        let err = (a - f).abs() / scale;
        assert!(
            err <= FD_REL_TOL,
            "{context}: coord {i}: analytic {a} vs fd {f} (rel err {err:.3e})"
        );
    }
}

pub fn random_vec(rng: &mut ChaCha20Rng, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(lo..hi)).collect()
}
