//! Two-component PCA by deterministic power iteration, for the embedding
//! scatter plot.

use ndarray::{Array1, Array2, ArrayView2};

fn power_iterate(cov: &Array2<f64>, deflate: Option<&Array1<f64>>) -> Array1<f64> {
    let d = cov.nrows();
    let mut v = Array1::from_shape_fn(d, |i| 1.0 + i as f64 * 1e-3);
    let norm = v.dot(&v).sqrt();
    v /= norm;
    for _ in 0..200 {
        let mut w = cov.dot(&v);
        if let Some(u) = deflate {
            let proj = w.dot(u);
            w -= &(u * proj);
        }
        let n = w.dot(&w).sqrt();
        if n < 1e-12 {
            break;
        }
        v = w / n;
    }
    v
}

/// Projects rows of `x` onto their top two principal directions.
pub fn project_2d(x: ArrayView2<f64>) -> Vec<(f64, f64)> {
    let (n, d) = x.dim();
    if n == 0 || d == 0 {
        return Vec::new();
    }
    let mean = x.mean_axis(ndarray::Axis(0)).unwrap();
    let centered = &x - &mean.view().insert_axis(ndarray::Axis(0));
    let cov = centered.t().dot(&centered) / n as f64;
    let v1 = power_iterate(&cov, None);
    let v1_deflate = v1.clone();
    let v2 = power_iterate(&cov, Some(&v1_deflate));
    (0..n)
        .map(|i| (centered.row(i).dot(&v1), centered.row(i).dot(&v2)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn recovers_dominant_axis() {
        // points spread along x with small y noise
        let x = arr2(&[
            [10.0, 0.1],
            [-10.0, -0.1],
            [5.0, 0.05],
            [-5.0, 0.0],
            [0.0, -0.05],
        ]);
        let p = project_2d(x.view());
        // first components recover the x ordering up to sign
        let signs: Vec<f64> = p.iter().map(|&(a, _)| a).collect();
        let spread1 = signs.iter().fold((f64::MAX, f64::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        assert!((spread1.1 - spread1.0) > 15.0);
    }
}
