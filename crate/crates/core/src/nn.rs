//! Minimal dense/conv layers with explicit forward and backward passes,
//! plus the Adam optimizer with the step-decay schedule used throughout
//! training. Everything is f64 and deterministic given an RNG stream.

use ndarray::{Array1, Array2, Array3, Array4};
use rand::Rng;
use rand_chacha::ChaCha20Rng;

/// Uniform init in `(-bound, bound)`.
pub fn uniform_init(shape: usize, bound: f64, rng: &mut ChaCha20Rng) -> Vec<f64> {
    (0..shape).map(|_| rng.random_range(-bound..bound)).collect()
}

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `[out_channels, in_channels, k, k]`
    pub weight: Array4<f64>,
    pub bias: Array1<f64>,
    pub stride: usize,
    pub padding: usize,
}

pub struct ConvCache {
    cols: Array2<f64>,
    in_shape: (usize, usize, usize),
    out_hw: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct ConvGrad {
    pub weight: Array4<f64>,
    pub bias: Array1<f64>,
}

impl Conv2d {
    /// He-style uniform init with the given bound over fan-in.
    pub fn new(
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        padding: usize,
        gain: f64,
        rng: &mut ChaCha20Rng,
    ) -> Self {
        let fan_in = (in_c * k * k) as f64;
        let bound = (gain / fan_in).sqrt();
        let w = uniform_init(out_c * in_c * k * k, bound, rng);
        Conv2d {
            weight: Array4::from_shape_vec((out_c, in_c, k, k), w).unwrap(),
            bias: Array1::zeros(out_c),
            stride,
            padding,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel();
        (
            (h + 2 * self.padding - k) / self.stride + 1,
            (w + 2 * self.padding - k) / self.stride + 1,
        )
    }

    fn im2col(&self, x: &Array3<f64>) -> (Array2<f64>, (usize, usize)) {
        let (c, h, w) = x.dim();
        let k = self.kernel();
        let (oh, ow) = self.out_hw(h, w);
        let mut cols = Array2::zeros((c * k * k, oh * ow));
        for ci in 0..c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ki) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kj) as isize - self.padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            cols[[row, oy * ow + ox]] = x[[ci, iy as usize, ix as usize]];
                        }
                    }
                }
            }
        }
        (cols, (oh, ow))
    }

    fn col2im(&self, cols: &Array2<f64>, shape: (usize, usize, usize), out_hw: (usize, usize)) -> Array3<f64> {
        let (c, h, w) = shape;
        let k = self.kernel();
        let (oh, ow) = out_hw;
        let mut x = Array3::zeros(shape);
        for ci in 0..c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ki) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kj) as isize - self.padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            x[[ci, iy as usize, ix as usize]] += cols[[row, oy * ow + ox]];
                        }
                    }
                }
            }
        }
        x
    }

    fn weight_mat(&self) -> Array2<f64> {
        let (oc, ic, k, _) = self.weight.dim();
        self.weight
            .to_shape((oc, ic * k * k))
            .expect("contiguous weight")
            .to_owned()
    }

    pub fn forward(&self, x: &Array3<f64>) -> Array3<f64> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &Array3<f64>) -> (Array3<f64>, ConvCache) {
        let in_shape = x.dim();
        let (cols, (oh, ow)) = self.im2col(x);
        let oc = self.out_channels();
        let mut out_mat = self.weight_mat().dot(&cols);
        for (mut row, b) in out_mat.rows_mut().into_iter().zip(self.bias.iter()) {
            row.mapv_inplace(|v| v + b);
        }
        let out = out_mat
            .into_shape_with_order((oc, oh, ow))
            .expect("reshape conv output");
        (
            out,
            ConvCache {
                cols,
                in_shape,
                out_hw: (oh, ow),
            },
        )
    }

    pub fn backward(&self, cache: &ConvCache, grad_out: &Array3<f64>) -> (Array3<f64>, ConvGrad) {
        let grad = self.backward_params(cache, grad_out);
        let grad_in = self.backward_input(cache, grad_out);
        (grad_in, grad)
    }

    pub fn backward_params(&self, cache: &ConvCache, grad_out: &Array3<f64>) -> ConvGrad {
        let (oc, ic, k, _) = self.weight.dim();
        let (oh, ow) = cache.out_hw;
        let g_mat = grad_out
            .to_shape((oc, oh * ow))
            .expect("contiguous grad")
            .to_owned();
        let grad_w_mat = g_mat.dot(&cache.cols.t());
        let grad_bias = g_mat.sum_axis(ndarray::Axis(1));
        ConvGrad {
            weight: grad_w_mat
                .into_shape_with_order((oc, ic, k, k))
                .expect("reshape conv grad"),
            bias: grad_bias,
        }
    }

    pub fn backward_input(&self, cache: &ConvCache, grad_out: &Array3<f64>) -> Array3<f64> {
        let oc = self.out_channels();
        let (oh, ow) = cache.out_hw;
        let g_mat = grad_out
            .to_shape((oc, oh * ow))
            .expect("contiguous grad")
            .to_owned();
        let grad_cols = self.weight_mat().t().dot(&g_mat);
        self.col2im(&grad_cols, cache.in_shape, cache.out_hw)
    }

    pub fn zero_grad_like(&self) -> ConvGrad {
        ConvGrad {
            weight: Array4::zeros(self.weight.dim()),
            bias: Array1::zeros(self.bias.dim()),
        }
    }
}

impl ConvGrad {
    pub fn add_assign(&mut self, other: &ConvGrad) {
        self.weight += &other.weight;
        self.bias += &other.bias;
    }

    pub fn scale(&mut self, s: f64) {
        self.weight *= s;
        self.bias *= s;
    }
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `[out_features, in_features]`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct LinearGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn new(in_f: usize, out_f: usize, gain: f64, rng: &mut ChaCha20Rng) -> Self {
        let bound = (gain / in_f as f64).sqrt();
        let w = uniform_init(out_f * in_f, bound, rng);
        Linear {
            weight: Array2::from_shape_vec((out_f, in_f), w).unwrap(),
            bias: Array1::zeros(out_f),
        }
    }

    pub fn forward(&self, x: &Array1<f64>) -> Array1<f64> {
        self.weight.dot(x) + &self.bias
    }

    pub fn backward(&self, x: &Array1<f64>, grad_out: &Array1<f64>) -> (Array1<f64>, LinearGrad) {
        let grad_w = grad_out
            .view()
            .insert_axis(ndarray::Axis(1))
            .dot(&x.view().insert_axis(ndarray::Axis(0)));
        let grad_in = self.weight.t().dot(grad_out);
        (
            grad_in,
            LinearGrad {
                weight: grad_w,
                bias: grad_out.clone(),
            },
        )
    }

    pub fn zero_grad_like(&self) -> LinearGrad {
        LinearGrad {
            weight: Array2::zeros(self.weight.dim()),
            bias: Array1::zeros(self.bias.dim()),
        }
    }
}

impl LinearGrad {
    pub fn add_assign(&mut self, other: &LinearGrad) {
        self.weight += &other.weight;
        self.bias += &other.bias;
    }

    pub fn scale(&mut self, s: f64) {
        self.weight *= s;
        self.bias *= s;
    }
}

// ---------------------------------------------------------------------------
// Activations and shape ops
// ---------------------------------------------------------------------------

pub fn tanh_forward(x: &Array3<f64>) -> Array3<f64> {
    x.mapv(f64::tanh)
}

/// `y` must be the tanh output.
pub fn tanh_backward(y: &Array3<f64>, grad_out: &Array3<f64>) -> Array3<f64> {
    let mut g = grad_out.clone();
    g.zip_mut_with(y, |gv, &yv| *gv *= 1.0 - yv * yv);
    g
}

pub const LEAKY_SLOPE: f64 = 0.01;

pub fn leaky_relu_forward(x: &Array3<f64>) -> Array3<f64> {
    x.mapv(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v })
}

pub fn leaky_relu_backward(x: &Array3<f64>, grad_out: &Array3<f64>) -> Array3<f64> {
    let mut g = grad_out.clone();
    g.zip_mut_with(x, |gv, &xv| {
        if xv <= 0.0 {
            *gv *= LEAKY_SLOPE;
        }
    });
    g
}

pub fn leaky_relu_vec_forward(x: &Array1<f64>) -> Array1<f64> {
    x.mapv(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v })
}

pub fn leaky_relu_vec_backward(x: &Array1<f64>, grad_out: &Array1<f64>) -> Array1<f64> {
    let mut g = grad_out.clone();
    g.zip_mut_with(x, |gv, &xv| {
        if xv <= 0.0 {
            *gv *= LEAKY_SLOPE;
        }
    });
    g
}

/// 2x2 mean pooling with stride 2. Requires even spatial dims.
pub fn avg_pool2_forward(x: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let mut out = Array3::zeros((c, h / 2, w / 2));
    for ci in 0..c {
        for y in 0..h / 2 {
            for xx in 0..w / 2 {
                out[[ci, y, xx]] = 0.25
                    * (x[[ci, 2 * y, 2 * xx]]
                        + x[[ci, 2 * y, 2 * xx + 1]]
                        + x[[ci, 2 * y + 1, 2 * xx]]
                        + x[[ci, 2 * y + 1, 2 * xx + 1]]);
            }
        }
    }
    out
}

pub fn avg_pool2_backward(grad_out: &Array3<f64>, in_hw: (usize, usize)) -> Array3<f64> {
    let (c, oh, ow) = grad_out.dim();
    let mut g = Array3::zeros((c, in_hw.0, in_hw.1));
    for ci in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                let v = grad_out[[ci, y, xx]] * 0.25;
                g[[ci, 2 * y, 2 * xx]] = v;
                g[[ci, 2 * y, 2 * xx + 1]] = v;
                g[[ci, 2 * y + 1, 2 * xx]] = v;
                g[[ci, 2 * y + 1, 2 * xx + 1]] = v;
            }
        }
    }
    g
}

/// Nearest-neighbour 2x upsample.
pub fn upsample2_forward(x: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let mut out = Array3::zeros((c, h * 2, w * 2));
    for ci in 0..c {
        for y in 0..h {
            for xx in 0..w {
                let v = x[[ci, y, xx]];
                out[[ci, 2 * y, 2 * xx]] = v;
                out[[ci, 2 * y, 2 * xx + 1]] = v;
                out[[ci, 2 * y + 1, 2 * xx]] = v;
                out[[ci, 2 * y + 1, 2 * xx + 1]] = v;
            }
        }
    }
    out
}

pub fn upsample2_backward(grad_out: &Array3<f64>) -> Array3<f64> {
    let (c, h2, w2) = grad_out.dim();
    let mut g = Array3::zeros((c, h2 / 2, w2 / 2));
    for ci in 0..c {
        for y in 0..h2 / 2 {
            for xx in 0..w2 / 2 {
                g[[ci, y, xx]] = grad_out[[ci, 2 * y, 2 * xx]]
                    + grad_out[[ci, 2 * y, 2 * xx + 1]]
                    + grad_out[[ci, 2 * y + 1, 2 * xx]]
                    + grad_out[[ci, 2 * y + 1, 2 * xx + 1]];
            }
        }
    }
    g
}

pub fn global_avg_pool(x: &Array3<f64>) -> Array1<f64> {
    let (c, h, w) = x.dim();
    let n = (h * w) as f64;
    Array1::from_iter((0..c).map(|ci| x.index_axis(ndarray::Axis(0), ci).sum() / n))
}

pub fn global_avg_pool_backward(grad_out: &Array1<f64>, shape: (usize, usize, usize)) -> Array3<f64> {
    let (c, h, w) = shape;
    let n = (h * w) as f64;
    let mut g = Array3::zeros(shape);
    for ci in 0..c {
        g.index_axis_mut(ndarray::Axis(0), ci)
            .fill(grad_out[ci] / n);
    }
    g
}

/// Inverted dropout: scales kept units by `1/(1-p)` at train time.
pub fn dropout_mask(len: usize, p: f64, rng: &mut ChaCha20Rng) -> Array1<f64> {
    let keep = 1.0 - p;
    Array1::from_iter((0..len).map(|_| {
        if rng.random_range(0.0..1.0) < keep {
            1.0 / keep
        } else {
            0.0
        }
    }))
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// Adam with step-decay learning rate: `lr = lr0 * decay^(t / decay_every)`.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub decay: f64,
    pub decay_every: u64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr0: f64, decay: f64, decay_every: u64) -> Self {
        Adam {
            lr0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay,
            decay_every,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn current_lr(&self) -> f64 {
        self.lr0 * self.decay.powi((self.t / self.decay_every) as i32)
    }

    /// One update over aligned parameter/gradient slices. Slot order must
    /// stay fixed across calls.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        assert_eq!(params.len(), grads.len(), "param/grad slot mismatch");
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        let lr = self.current_lr();
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (slot, (p, g)) in params.iter_mut().zip(grads.iter()).enumerate() {
            assert_eq!(p.len(), g.len(), "param/grad length mismatch in slot {slot}");
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::SeedableRng;

    fn fd_conv_weight_grad(conv: &Conv2d, x: &Array3<f64>, loss: impl Fn(&Array3<f64>) -> f64) {
        let (y, cache) = conv.forward_cached(x);
        // loss = sum(y * t) with a fixed weighting t to have a generic grad
        let t = y.mapv(|v| (v * 3.7).sin());
        let grad_out = t.clone();
        let _ = loss;
        let (grad_in, grads) = conv.backward(&cache, &grad_out);

        // finite differences on a few weight entries
        let mut c2 = conv.clone();
        let step = 1e-6;
        for &idx in &[0usize, 3, 7] {
            let flat = c2.weight.as_slice_mut().unwrap();
            if idx >= flat.len() {
                continue;
            }
            let orig = flat[idx];
            flat[idx] = orig + step;
            let yp = c2.forward(x);
            let lp: f64 = yp.iter().zip(t.iter()).map(|(a, b)| a * b).sum();
            let flat = c2.weight.as_slice_mut().unwrap();
            flat[idx] = orig - step;
            let ym = c2.forward(x);
            let lm: f64 = ym.iter().zip(t.iter()).map(|(a, b)| a * b).sum();
            let flat = c2.weight.as_slice_mut().unwrap();
            flat[idx] = orig;
            let fd = (lp - lm) / (2.0 * step);
            let an = grads.weight.as_slice().unwrap()[idx];
            assert!(
                (fd - an).abs() <= 1e-6 * (1.0 + fd.abs()),
                "conv weight grad mismatch: fd={fd} an={an}"
            );
        }

        // finite differences on a few input entries
        let mut x2 = x.clone();
        for &idx in &[0usize, 5, 11] {
            let flat = x2.as_slice_mut().unwrap();
            if idx >= flat.len() {
                continue;
            }
            let orig = flat[idx];
            flat[idx] = orig + step;
            let yp = conv.forward(&x2);
            let lp: f64 = yp.iter().zip(t.iter()).map(|(a, b)| a * b).sum();
            let flat = x2.as_slice_mut().unwrap();
            flat[idx] = orig - step;
            let ym = conv.forward(&x2);
            let lm: f64 = ym.iter().zip(t.iter()).map(|(a, b)| a * b).sum();
            let flat = x2.as_slice_mut().unwrap();
            flat[idx] = orig;
            let fd = (lp - lm) / (2.0 * step);
            let an = grad_in.as_slice().unwrap()[idx];
            assert!(
                (fd - an).abs() <= 1e-6 * (1.0 + fd.abs()),
                "conv input grad mismatch: fd={fd} an={an}"
            );
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for &(stride, pad) in &[(1usize, 1usize), (2, 1)] {
            let conv = Conv2d::new(2, 3, 3, stride, pad, 6.0, &mut rng);
            let x = Array3::from_shape_fn((2, 6, 6), |(c, i, j)| {
                ((c + 2 * i + 3 * j) as f64 * 0.37).sin()
            });
            fd_conv_weight_grad(&conv, &x, |_| 0.0);
        }
    }

    #[test]
    fn conv_stride2_halves_spatial_dims() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let conv = Conv2d::new(3, 8, 3, 2, 1, 6.0, &mut rng);
        let x = Array3::zeros((3, 16, 16));
        assert_eq!(conv.forward(&x).dim(), (8, 8, 8));
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let lin = Linear::new(4, 3, 6.0, &mut rng);
        let x = Array1::from_vec(vec![0.3, -0.2, 0.9, 0.1]);
        let y = lin.forward(&x);
        let t = y.mapv(|v| (v * 2.1).cos());
        let (grad_in, grads) = lin.backward(&x, &t);
        let step = 1e-6;
        let mut l2 = lin.clone();
        let orig = l2.weight[[1, 2]];
        l2.weight[[1, 2]] = orig + step;
        let lp: f64 = l2.forward(&x).iter().zip(t.iter()).map(|(a, b)| a * b).sum();
        l2.weight[[1, 2]] = orig - step;
        let lm: f64 = l2.forward(&x).iter().zip(t.iter()).map(|(a, b)| a * b).sum();
        let fd = (lp - lm) / (2.0 * step);
        assert!((fd - grads.weight[[1, 2]]).abs() < 1e-6);

        let mut x2 = x.clone();
        let orig = x2[1];
        x2[1] = orig + step;
        let lp: f64 = lin.forward(&x2).iter().zip(t.iter()).map(|(a, b)| a * b).sum();
        x2[1] = orig - step;
        let lm: f64 = lin.forward(&x2).iter().zip(t.iter()).map(|(a, b)| a * b).sum();
        let fd = (lp - lm) / (2.0 * step);
        assert!((fd - grad_in[1]).abs() < 1e-6);
    }

    #[test]
    fn pool_and_upsample_round_trip_shapes() {
        let x = Array3::from_shape_fn((2, 8, 8), |(c, i, j)| (c + i + j) as f64);
        let p = avg_pool2_forward(&x);
        assert_eq!(p.dim(), (2, 4, 4));
        let u = upsample2_forward(&p);
        assert_eq!(u.dim(), (2, 8, 8));
        let g = avg_pool2_backward(&p, (8, 8));
        assert_eq!(g.dim(), (2, 8, 8));
        assert_eq!(upsample2_backward(&u).dim(), (2, 4, 4));
    }

    #[test]
    fn adam_decays_lr_every_interval() {
        let mut opt = Adam::new(1e-2, 0.9, 5);
        let mut p = vec![1.0f64; 2];
        let g = vec![0.1f64; 2];
        for _ in 0..5 {
            assert!((opt.current_lr() - 1e-2).abs() < 1e-15);
            opt.step(&mut [&mut p], &[&g]);
        }
        assert!((opt.current_lr() - 9e-3).abs() < 1e-15);
    }

    #[test]
    fn adam_reduces_a_quadratic() {
        let mut opt = Adam::new(0.05, 1.0, 1_000_000);
        let mut p = vec![2.0f64, -3.0];
        for _ in 0..500 {
            let g: Vec<f64> = p.iter().map(|v| 2.0 * v).collect();
            opt.step(&mut [&mut p], &[&g]);
        }
        assert!(p.iter().all(|v| v.abs() < 1e-2));
    }
}
