//! Training objectives: classification, triplet metric, reconstruction
//! (with optional hinge floor), diversity, and spectral matching. Every
//! loss ships with analytic gradients; the test suite checks them against
//! central finite differences.

use crate::error::{Error, Result};
use crate::image::LUMA;
use crate::spectrum::{
    azimuthal_backward, azimuthal_integration, power_spectrum_backward,
    power_spectrum_with_spectrum, SpectrumProfile,
};
use crate::util::maybe_par_map_indexed;
use ndarray::{Array1, Array2, Array3, ArrayD, ArrayView1, ArrayView2, ArrayViewD};
use serde::{Deserialize, Serialize};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

fn default_lambda() -> f64 {
    1e-4
}
fn default_alpha() -> f64 {
    1e-4
}
fn default_beta() -> f64 {
    1e-2
}
fn default_d() -> f64 {
    0.95
}
fn default_m() -> f64 {
    0.3
}

/// Loss hyper-parameters. Defaults follow the reported settings:
/// `lambda = 1e-4`, `alpha = 1e-4`, `beta = 1e-2`, `d = 0.95`, `m = 0.3`,
/// and a disabled reconstruction floor.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    #[serde(default = "default_lambda")]
    pub lambda_spectral: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_d")]
    pub d_margin: f64,
    #[serde(default = "default_m")]
    pub m_margin: f64,
    #[serde(default)]
    pub epsilon_floor: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_spectral: default_lambda(),
            alpha: default_alpha(),
            beta: default_beta(),
            d_margin: default_d(),
            m_margin: default_m(),
            epsilon_floor: 0.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_margin > 0.0 && self.d_margin <= 1.0) {
            return Err(Error::InvalidParameter("d_margin must be in (0,1]".into()));
        }
        if self.m_margin <= 0.0 {
            return Err(Error::InvalidParameter("m_margin must be positive".into()));
        }
        if self.alpha <= 0.0 || self.beta <= 0.0 || self.lambda_spectral <= 0.0 {
            return Err(Error::InvalidParameter(
                "alpha, beta and lambda_spectral must be positive".into(),
            ));
        }
        if self.epsilon_floor < 0.0 {
            return Err(Error::InvalidParameter("epsilon_floor must be >= 0".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Cross entropy
// ---------------------------------------------------------------------------

/// Numerically stable softmax.
pub fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps = logits.mapv(|v| (v - max).exp());
    let sum = exps.sum();
    exps / sum
}

fn log_sum_exp(logits: ArrayView1<f64>) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `-log softmax(logits)[label]`
pub fn cross_entropy_loss(logits: ArrayView1<f64>, label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::InvalidLabel { label, classes: logits.len() });
    }
    Ok(log_sum_exp(logits) - logits[label])
}

pub fn cross_entropy_loss_with_grad(logits: ArrayView1<f64>, label: usize) -> Result<(f64, Array1<f64>)> {
    let loss = cross_entropy_loss(logits, label)?;
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    Ok((loss, grad))
}

// ---------------------------------------------------------------------------
// Extended labels and triplet mining
// ---------------------------------------------------------------------------

/// Extended class label `K + i` for an augmented copy of known class `i`.
pub fn extend_label(known_class: usize, num_classes: usize) -> Result<usize> {
    if known_class >= num_classes {
        return Err(Error::InvalidLabel { label: known_class, classes: num_classes });
    }
    Ok(num_classes + known_class)
}

/// Exhaustive valid triplets over a label list: anchor and positive share
/// a label (and differ in index), negative has a different label.
/// Deterministic (a, p, n) index order; may be empty.
pub fn mine_triplets(labels: &[usize]) -> Vec<(usize, usize, usize)> {
    let n = labels.len();
    let mut out = Vec::new();
    for a in 0..n {
        for p in 0..n {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            for neg in 0..n {
                if labels[neg] != labels[a] {
                    out.push((a, p, neg));
                }
            }
        }
    }
    out
}

/// Batch-all triplet loss value plus the number of mined triplets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletLossValue {
    pub loss: f64,
    /// Zero signals the advisory empty-triplet condition.
    pub num_triplets: usize,
}

impl TripletLossValue {
    pub fn is_empty(&self) -> bool {
        self.num_triplets == 0
    }
}

/// Mean over all mined triplets of `[|a-p|^2 - |a-n|^2 + m]_+`.
/// Returns loss 0 with the advisory flag when no valid triplet exists.
pub fn triplet_metric_loss(embeddings: ArrayView2<f64>, labels: &[usize], margin: f64) -> Result<TripletLossValue> {
    Ok(triplet_metric_loss_with_grad(embeddings, labels, margin)?.0)
}

pub fn triplet_metric_loss_with_grad(
    embeddings: ArrayView2<f64>,
    labels: &[usize],
    margin: f64,
) -> Result<(TripletLossValue, Array2<f64>)> {
    let n = embeddings.nrows();
    if labels.len() != n {
        return Err(Error::InvalidInput(format!(
            "labels ({}) and embeddings ({n}) differ in count",
            labels.len()
        )));
    }
    let triplets = mine_triplets(labels);
    let mut grad = Array2::zeros(embeddings.raw_dim());
    if triplets.is_empty() {
        return Ok((TripletLossValue { loss: 0.0, num_triplets: 0 }, grad));
    }
    // pairwise squared distances
    let mut d2 = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let diff = &embeddings.row(i) - &embeddings.row(j);
            let v = diff.dot(&diff);
            d2[[i, j]] = v;
            d2[[j, i]] = v;
        }
    }
    let count = triplets.len() as f64;
    let mut total = 0.0;
    for &(a, p, neg) in &triplets {
        let h = d2[[a, p]] - d2[[a, neg]] + margin;
        if h > 0.0 {
            total += h;
            let scale = 2.0 / count;
            let ea = embeddings.row(a);
            let ep = embeddings.row(p);
            let en = embeddings.row(neg);
            // d|a-p|^2/da = 2(a-p); d(-|a-n|^2)/da = -2(a-n)
            let mut ga = grad.row_mut(a);
            ga.zip_mut_with(&(&ea - &ep), |g, &v| *g += scale * v);
            ga.zip_mut_with(&(&ea - &en), |g, &v| *g -= scale * v);
            grad.row_mut(p).zip_mut_with(&(&ea - &ep), |g, &v| *g -= scale * v);
            grad.row_mut(neg).zip_mut_with(&(&ea - &en), |g, &v| *g += scale * v);
        }
    }
    Ok((
        TripletLossValue { loss: total / count, num_triplets: triplets.len() },
        grad,
    ))
}

// ---------------------------------------------------------------------------
// Reconstruction
// ---------------------------------------------------------------------------

/// Mean squared pixel error, optionally clamped from below: with a
/// positive floor the result is `max(floor, mse)` and the gradient
/// vanishes while `mse < floor`.
pub fn reconstruction_loss(x: ArrayViewD<f64>, x_aug: ArrayViewD<f64>, epsilon_floor: f64) -> Result<f64> {
    Ok(reconstruction_loss_with_grad(x, x_aug, epsilon_floor)?.0)
}

/// Returns `(loss, grad_wrt_x_aug)`. The gradient with respect to `x` is
/// the negation.
pub fn reconstruction_loss_with_grad(
    x: ArrayViewD<f64>,
    x_aug: ArrayViewD<f64>,
    epsilon_floor: f64,
) -> Result<(f64, ArrayD<f64>)> {
    if x.shape() != x_aug.shape() {
        return Err(Error::InvalidInput(format!(
            "reconstruction shape mismatch: {:?} vs {:?}",
            x.shape(),
            x_aug.shape()
        )));
    }
    if epsilon_floor < 0.0 {
        return Err(Error::InvalidParameter("epsilon_floor must be >= 0".into()));
    }
    let n = x.len() as f64;
    let mut mse = 0.0;
    for (a, b) in x.iter().zip(x_aug.iter()) {
        let d = b - a;
        mse += d * d;
    }
    mse /= n;
    if epsilon_floor > 0.0 && mse < epsilon_floor {
        return Ok((epsilon_floor, ArrayD::zeros(x.raw_dim())));
    }
    let mut grad = x_aug.to_owned();
    grad.zip_mut_with(&x, |g, &xv| *g = 2.0 * (*g - xv) / n);
    Ok((mse, grad))
}

// ---------------------------------------------------------------------------
// Diversity
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct DiversityGrads {
    pub z_new: Array1<f64>,
    pub z_old: Array1<f64>,
    pub z_known: Array1<f64>,
}

fn cosine(u: ArrayView1<f64>, v: ArrayView1<f64>) -> Result<(f64, f64, f64)> {
    let nu = u.dot(&u).sqrt();
    let nv = v.dot(&v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::UndefinedCosine);
    }
    Ok((u.dot(&v) / (nu * nv), nu, nv))
}

/// `d cos(u,v) / du = (v_hat - cos * u_hat) / |u|`
fn cosine_grad_u(u: ArrayView1<f64>, v: ArrayView1<f64>, cos: f64, nu: f64, nv: f64) -> Array1<f64> {
    let u_hat = u.mapv(|x| x / nu);
    let v_hat = v.mapv(|x| x / nv);
    (v_hat - u_hat.mapv(|x| x * cos)) / nu
}

/// `alpha * cos(z_new, z_old) - beta * min(cos(z_new, z_known), d)`.
/// Pushes the new augmented embedding away from the old one while keeping
/// it near the known embedding, capped at similarity `d`.
pub fn diversity_loss(
    z_new: ArrayView1<f64>,
    z_old: ArrayView1<f64>,
    z_known: ArrayView1<f64>,
    cfg: &LossConfig,
) -> Result<f64> {
    let (cos_no, _, _) = cosine(z_new, z_old)?;
    let (cos_nk, _, _) = cosine(z_new, z_known)?;
    Ok(cfg.alpha * cos_no - cfg.beta * cos_nk.min(cfg.d_margin))
}

pub fn diversity_loss_with_grad(
    z_new: ArrayView1<f64>,
    z_old: ArrayView1<f64>,
    z_known: ArrayView1<f64>,
    cfg: &LossConfig,
) -> Result<(f64, DiversityGrads)> {
    let (cos_no, n_new, n_old) = cosine(z_new, z_old)?;
    let (cos_nk, _, n_known) = cosine(z_new, z_known)?;
    let value = cfg.alpha * cos_no - cfg.beta * cos_nk.min(cfg.d_margin);

    let mut g_new = cosine_grad_u(z_new, z_old, cos_no, n_new, n_old).mapv(|v| v * cfg.alpha);
    let g_old = cosine_grad_u(z_old, z_new, cos_no, n_old, n_new).mapv(|v| v * cfg.alpha);
    let g_known;
    if cos_nk < cfg.d_margin {
        let gk_new = cosine_grad_u(z_new, z_known, cos_nk, n_new, n_known);
        g_new.zip_mut_with(&gk_new, |g, &v| *g -= cfg.beta * v);
        g_known = cosine_grad_u(z_known, z_new, cos_nk, n_known, n_new).mapv(|v| -cfg.beta * v);
    } else {
        // clamp region: the second term is the constant beta*d
        g_known = Array1::zeros(z_known.len());
    }
    Ok((value, DiversityGrads { z_new: g_new, z_old: g_old, z_known: g_known }))
}

// ---------------------------------------------------------------------------
// Spectral matching
// ---------------------------------------------------------------------------

/// Spectral feasibility objective: batch-mean pixel MSE between inputs
/// and their augmented versions, plus `lambda` times the distance between
/// the batch-mean azimuthal profile of the augmented images and a target
/// profile. Profiles are unnormalized so the loss stays differentiable at
/// the DC bin.
pub fn spectral_loss(
    x_all: &[Array3<f64>],
    x_src_aug: &[Array3<f64>],
    target_profile: &SpectrumProfile,
    cfg: &LossConfig,
) -> Result<f64> {
    Ok(spectral_loss_parts(x_all, x_src_aug, target_profile, cfg)?.0)
}

/// Returns `(total, recon_term, profile_distance)`.
pub fn spectral_loss_parts(
    x_all: &[Array3<f64>],
    x_src_aug: &[Array3<f64>],
    target_profile: &SpectrumProfile,
    cfg: &LossConfig,
) -> Result<(f64, f64, f64)> {
    validate_spectral_inputs(x_all, x_src_aug, target_profile)?;
    let recon = batch_mse(x_all, x_src_aug);
    let mean_profile = mean_aug_profile(x_src_aug)?;
    let dist = euclid(&mean_profile, target_profile.values());
    Ok((recon + cfg.lambda_spectral * dist, recon, dist))
}

pub fn spectral_loss_with_grad(
    x_all: &[Array3<f64>],
    x_src_aug: &[Array3<f64>],
    target_profile: &SpectrumProfile,
    cfg: &LossConfig,
) -> Result<(f64, Vec<Array3<f64>>)> {
    validate_spectral_inputs(x_all, x_src_aug, target_profile)?;
    let b = x_all.len() as f64;
    let per_image = x_all[0].len() as f64;
    let n = x_all[0].shape()[1];

    struct PerImage {
        profile: Vec<f64>,
        spectrum: Array2<rustfft::num_complex::Complex<f64>>,
    }
    let fwd: Result<Vec<PerImage>> = maybe_par_map_indexed(x_src_aug, |_, img| {
        let lum = luminance_of(img)?;
        let (power, spectrum) = power_spectrum_with_spectrum(&lum)?;
        let profile = azimuthal_integration(&power, false)?;
        Ok(PerImage { profile: profile.values().to_vec(), spectrum })
    })
    .into_iter()
    .collect();
    let fwd = fwd?;

    let bins = fwd[0].profile.len();
    let mut mean_profile = vec![0.0; bins];
    for pi in &fwd {
        for (m, v) in mean_profile.iter_mut().zip(&pi.profile) {
            *m += v / b;
        }
    }
    let recon = batch_mse(x_all, x_src_aug);
    let dist = euclid(&mean_profile, target_profile.values());
    let total = recon + cfg.lambda_spectral * dist;

    // dL/d mean_profile, shared across the batch
    let g_profile: Vec<f64> = if dist > 0.0 {
        mean_profile
            .iter()
            .zip(target_profile.values())
            .map(|(m, t)| cfg.lambda_spectral * (m - t) / (dist * b))
            .collect()
    } else {
        vec![0.0; bins]
    };
    let g_power = azimuthal_backward(&g_profile, n);

    let grads = maybe_par_map_indexed(&fwd, |i, pi| {
        let g_lum = power_spectrum_backward(&g_power, &pi.spectrum);
        let (c, h, w) = x_src_aug[i].dim();
        let mut g = Array3::zeros((c, h, w));
        for ch in 0..c {
            let wc = if c == 1 { 1.0 } else { LUMA[ch] };
            g.index_axis_mut(ndarray::Axis(0), ch)
                .zip_mut_with(&g_lum, |gv, &lv| *gv = wc * lv);
        }
        // reconstruction term
        g.zip_mut_with(&x_src_aug[i], |gv, &av| *gv += 2.0 * av / (b * per_image));
        g.zip_mut_with(&x_all[i], |gv, &xv| *gv -= 2.0 * xv / (b * per_image));
        g
    });
    Ok((total, grads))
}

fn validate_spectral_inputs(
    x_all: &[Array3<f64>],
    x_src_aug: &[Array3<f64>],
    target: &SpectrumProfile,
) -> Result<()> {
    if x_all.is_empty() || x_all.len() != x_src_aug.len() {
        return Err(Error::InvalidInput(
            "spectral loss needs equally sized, nonempty batches".into(),
        ));
    }
    let shape = x_all[0].dim();
    if shape.1 != shape.2 {
        return Err(Error::InvalidInput("spectral loss needs square images".into()));
    }
    for (a, b) in x_all.iter().zip(x_src_aug) {
        if a.dim() != shape || b.dim() != shape {
            return Err(Error::InvalidInput("grid size mismatch in spectral batch".into()));
        }
    }
    if target.normalized() {
        return Err(Error::InvalidInput(
            "spectral loss uses unnormalized profiles".into(),
        ));
    }
    if target.len() != shape.1 / 2 {
        return Err(Error::InvalidInput(format!(
            "target profile length {} does not match grid size {}",
            target.len(),
            shape.1
        )));
    }
    Ok(())
}

fn luminance_of(img: &Array3<f64>) -> Result<Array2<f64>> {
    crate::image::ImageTensor(img.clone()).luminance()
}

fn batch_mse(x: &[Array3<f64>], y: &[Array3<f64>]) -> f64 {
    let total: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            a.iter()
                .zip(b.iter())
                .map(|(&u, &v)| (u - v) * (u - v))
                .sum::<f64>()
        })
        .sum();
    total / (x.len() as f64 * x[0].len() as f64)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn mean_aug_profile(imgs: &[Array3<f64>]) -> Result<Vec<f64>> {
    let profiles: Result<Vec<Vec<f64>>> = maybe_par_map_indexed(imgs, |_, img| {
        let lum = luminance_of(img)?;
        let (power, _) = power_spectrum_with_spectrum(&lum)?;
        Ok(azimuthal_integration(&power, false)?.values().to_vec())
    })
    .into_iter()
    .collect();
    let profiles = profiles?;
    let b = profiles.len() as f64;
    let mut mean = vec![0.0; profiles[0].len()];
    for p in &profiles {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v / b;
        }
    }
    Ok(mean)
}

// ---------------------------------------------------------------------------
// Composite task and augmentation losses
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct TaskLossValue {
    pub total: f64,
    pub cls: f64,
    pub metric_old: f64,
    pub metric_new: f64,
}

pub struct TaskLossInputs<'a> {
    /// Logits of the known images, `B x K`.
    pub logits: ArrayView2<'a, f64>,
    /// Known labels in `[0, K)`, length `B`.
    pub labels: &'a [usize],
    pub emb_known: ArrayView2<'a, f64>,
    pub emb_old: ArrayView2<'a, f64>,
    pub emb_new: ArrayView2<'a, f64>,
    pub num_classes: usize,
}

#[derive(Debug, Clone)]
pub struct TaskLossGrads {
    pub logits: Array2<f64>,
    pub emb_known: Array2<f64>,
    pub emb_old: Array2<f64>,
    pub emb_new: Array2<f64>,
}

/// `L_cls` on known images plus one triplet term against the old-model
/// augmented embeddings and one against the new-model ones. Each triplet
/// term runs over the union of known embeddings (labels `i`) and the
/// augmented embeddings (extended labels `K+i`). At epoch 0 callers pass
/// the same batch for old and new.
pub fn task_loss(inputs: &TaskLossInputs, cfg: &LossConfig) -> Result<TaskLossValue> {
    Ok(task_loss_with_grad(inputs, cfg)?.0)
}

pub fn task_loss_with_grad(inputs: &TaskLossInputs, cfg: &LossConfig) -> Result<(TaskLossValue, TaskLossGrads)> {
    let b = inputs.labels.len();
    if inputs.logits.nrows() != b
        || inputs.emb_known.nrows() != b
        || inputs.emb_old.nrows() != b
        || inputs.emb_new.nrows() != b
    {
        return Err(Error::InvalidInput("task loss batches must align by index".into()));
    }
    let k = inputs.num_classes;

    let mut cls = 0.0;
    let mut g_logits = Array2::zeros(inputs.logits.raw_dim());
    for (i, &label) in inputs.labels.iter().enumerate() {
        let (l, g) = cross_entropy_loss_with_grad(inputs.logits.row(i), label)?;
        if label >= k {
            return Err(Error::InvalidLabel { label, classes: k });
        }
        cls += l / b as f64;
        g_logits.row_mut(i).assign(&(g / b as f64));
    }

    let mut extended = Vec::with_capacity(2 * b);
    extended.extend_from_slice(inputs.labels);
    for &l in inputs.labels {
        extended.push(extend_label(l, k)?);
    }

    let merged_old = stack_rows(inputs.emb_known, inputs.emb_old);
    let (m_old, g_old_merged) =
        triplet_metric_loss_with_grad(merged_old.view(), &extended, cfg.m_margin)?;
    let merged_new = stack_rows(inputs.emb_known, inputs.emb_new);
    let (m_new, g_new_merged) =
        triplet_metric_loss_with_grad(merged_new.view(), &extended, cfg.m_margin)?;

    let d = inputs.emb_known.ncols();
    let mut g_known = Array2::zeros((b, d));
    let mut g_old = Array2::zeros((b, d));
    let mut g_new = Array2::zeros((b, d));
    for i in 0..b {
        let mut row = g_known.row_mut(i);
        row += &g_old_merged.row(i);
        row += &g_new_merged.row(i);
        g_old.row_mut(i).assign(&g_old_merged.row(b + i));
        g_new.row_mut(i).assign(&g_new_merged.row(b + i));
    }

    let value = TaskLossValue {
        total: cls + m_old.loss + m_new.loss,
        cls,
        metric_old: m_old.loss,
        metric_new: m_new.loss,
    };
    Ok((
        value,
        TaskLossGrads { logits: g_logits, emb_known: g_known, emb_old: g_old, emb_new: g_new },
    ))
}

fn stack_rows(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.nrows() + b.nrows(), a.ncols()));
    out.slice_mut(ndarray::s![..a.nrows(), ..]).assign(&a);
    out.slice_mut(ndarray::s![a.nrows().., ..]).assign(&b);
    out
}

#[derive(Debug, Clone, Copy)]
pub struct AugLossValue {
    pub total: f64,
    pub recons: f64,
    pub diversity: f64,
}

pub struct DivBatch<'a> {
    pub z_new: ArrayView2<'a, f64>,
    pub z_old: ArrayView2<'a, f64>,
    pub z_known: ArrayView2<'a, f64>,
}

/// Reconstruction plus (from epoch 1 on) the batch-mean diversity term.
/// Epoch 0 passes `None` and trains on reconstruction alone.
pub fn aug_loss(
    x_batch: ArrayViewD<f64>,
    aug_new_batch: ArrayViewD<f64>,
    div: Option<&DivBatch>,
    cfg: &LossConfig,
) -> Result<AugLossValue> {
    let recons = reconstruction_loss(x_batch, aug_new_batch, cfg.epsilon_floor)?;
    let diversity = match div {
        None => 0.0,
        Some(dv) => {
            let b = dv.z_new.nrows();
            if dv.z_old.nrows() != b || dv.z_known.nrows() != b {
                return Err(Error::InvalidInput("diversity batch mismatch".into()));
            }
            let mut acc = 0.0;
            for i in 0..b {
                acc += diversity_loss(dv.z_new.row(i), dv.z_old.row(i), dv.z_known.row(i), cfg)?;
            }
            acc / b as f64
        }
    };
    Ok(AugLossValue { total: recons + diversity, recons, diversity })
}

/// Gradients of [`aug_loss`] with respect to the augmented pixels and the
/// new embeddings.
pub fn aug_loss_with_grad(
    x_batch: ArrayViewD<f64>,
    aug_new_batch: ArrayViewD<f64>,
    div: Option<&DivBatch>,
    cfg: &LossConfig,
) -> Result<(AugLossValue, ArrayD<f64>, Option<Array2<f64>>)> {
    let (recons, g_pixels) = reconstruction_loss_with_grad(x_batch, aug_new_batch, cfg.epsilon_floor)?;
    let (diversity, g_znew) = match div {
        None => (0.0, None),
        Some(dv) => {
            let b = dv.z_new.nrows();
            let mut g = Array2::zeros(dv.z_new.raw_dim());
            let mut acc = 0.0;
            for i in 0..b {
                let (v, grads) =
                    diversity_loss_with_grad(dv.z_new.row(i), dv.z_old.row(i), dv.z_known.row(i), cfg)?;
                acc += v / b as f64;
                g.row_mut(i).assign(&(grads.z_new / b as f64));
            }
            (acc, Some(g))
        }
    };
    Ok((
        AugLossValue { total: recons + diversity, recons, diversity },
        g_pixels,
        g_znew,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2};

    #[test]
    fn cross_entropy_examples() {
        let uniform = arr1(&[0.5, 0.5, 0.5, 0.5]);
        let l = cross_entropy_loss(uniform.view(), 2).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);

        let peaked = arr1(&[10.0, 0.0, 0.0]);
        let l = cross_entropy_loss(peaked.view(), 0).unwrap();
        let expect = (1.0 + 2.0 * (-10.0f64).exp()).ln();
        assert!((l - expect).abs() < 1e-12);
        assert!((l - 9.079e-5).abs() < 1e-7);

        let wrong = arr1(&[0.0, 10.0]);
        let l = cross_entropy_loss(wrong.view(), 0).unwrap();
        let expect = 10.0 + (1.0 + (-10.0f64).exp()).ln();
        assert!((l - expect).abs() < 1e-12);

        assert!(cross_entropy_loss(peaked.view(), 3).is_err());
    }

    #[test]
    fn softmax_sums_to_one() {
        let s = softmax(arr1(&[3.0, -2.0, 0.5]).view());
        assert!((s.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn extend_label_examples() {
        assert_eq!(extend_label(0, 5).unwrap(), 5);
        assert_eq!(extend_label(4, 5).unwrap(), 9);
        assert!(extend_label(5, 5).is_err());
        // knowns and extensions partition: ranges [0,K) and [K,2K) are disjoint
        for i in 0..5 {
            let e = extend_label(i, 5).unwrap();
            assert!(e >= 5 && e < 10);
        }
    }

    #[test]
    fn mine_triplets_examples() {
        assert_eq!(mine_triplets(&[0, 0, 1, 1]).len(), 8);
        assert!(mine_triplets(&[0, 1, 2]).is_empty());
        assert!(mine_triplets(&[3, 3, 3]).is_empty());
    }

    #[test]
    fn triplet_hinge_examples() {
        // anchor == positive, |a-n|^2 = 1, margin 0.3 -> clamped to 0
        let emb = arr2(&[[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]]);
        let v = triplet_metric_loss(emb.view(), &[7, 7, 9], 0.3).unwrap();
        assert_eq!(v.loss, 0.0);
        assert_eq!(v.num_triplets, 2);

        // |a-p|^2 == |a-n|^2 for every triplet (equilateral triangle)
        // -> exactly the margin remains
        let h = 3f64.sqrt() / 2.0;
        let emb = arr2(&[[0.0, 0.0], [1.0, 0.0], [0.5, h]]);
        let v = triplet_metric_loss(emb.view(), &[0, 0, 1], 0.3).unwrap();
        assert!((v.loss - 0.3).abs() < 1e-12);

        // no valid triplet -> advisory flag
        let v = triplet_metric_loss(emb.view(), &[0, 1, 2], 0.3).unwrap();
        assert!(v.is_empty());
        assert_eq!(v.loss, 0.0);
    }

    #[test]
    fn reconstruction_examples() {
        let x = ndarray::ArrayD::from_elem(ndarray::IxDyn(&[3, 4, 4]), 0.5);
        let same = x.clone();
        assert_eq!(reconstruction_loss(x.view(), same.view(), 0.0).unwrap(), 0.0);

        let shifted = x.mapv(|v| v + 0.1);
        let r = reconstruction_loss(x.view(), shifted.view(), 0.0).unwrap();
        assert!((r - 0.01).abs() < 1e-12);

        // clamped branch: mse 1e-4 below floor 2.5e-3
        let tiny = x.mapv(|v| v + 0.01);
        let (r, g) = reconstruction_loss_with_grad(x.view(), tiny.view(), 2.5e-3).unwrap();
        assert_eq!(r, 2.5e-3);
        assert!(g.iter().all(|&v| v == 0.0));

        let bad = ndarray::ArrayD::<f64>::zeros(ndarray::IxDyn(&[3, 4, 5]));
        assert!(reconstruction_loss(x.view(), bad.view(), 0.0).is_err());
    }

    #[test]
    fn diversity_examples() {
        let cfg = LossConfig::default();
        // all three equal: alpha*1 - beta*min(1, 0.95) = 1e-4 - 9.5e-3
        let z = arr1(&[0.3, -0.7, 0.2]);
        let v = diversity_loss(z.view(), z.view(), z.view(), &cfg).unwrap();
        assert!((v - (1e-4 - 9.5e-3)).abs() < 1e-15);
        assert!((v + 9.4e-3).abs() < 1e-15);

        // mutually orthogonal: 0
        let a = arr1(&[1.0, 0.0, 0.0]);
        let b = arr1(&[0.0, 1.0, 0.0]);
        let c = arr1(&[0.0, 0.0, 1.0]);
        let v = diversity_loss(a.view(), b.view(), c.view(), &cfg).unwrap();
        assert_eq!(v, 0.0);

        // z_new = -z_old and z_new = z_known: -alpha - beta*d
        let na = a.mapv(|v| -v);
        let v = diversity_loss(a.view(), na.view(), a.view(), &cfg).unwrap();
        assert!((v - (-cfg.alpha - cfg.beta * cfg.d_margin)).abs() < 1e-15);

        let zero = arr1(&[0.0, 0.0, 0.0]);
        assert!(matches!(
            diversity_loss(zero.view(), b.view(), c.view(), &cfg),
            Err(Error::UndefinedCosine)
        ));
    }

    #[test]
    fn diversity_scale_invariance() {
        let cfg = LossConfig::default();
        let a = arr1(&[0.2, -0.5, 0.8]);
        let b = arr1(&[-0.1, 0.4, 0.3]);
        let c = arr1(&[0.9, 0.1, -0.2]);
        let v1 = diversity_loss(a.view(), b.view(), c.view(), &cfg).unwrap();
        let v2 = diversity_loss(
            a.mapv(|x| 3.7 * x).view(),
            b.mapv(|x| 0.2 * x).view(),
            c.mapv(|x| 11.0 * x).view(),
            &cfg,
        )
        .unwrap();
        assert!((v1 - v2).abs() < 1e-12);
    }

    #[test]
    fn clamp_region_gradient_is_exactly_zero() {
        let cfg = LossConfig::default();
        // cos(z_new, z_known) = 1 > d: second-term gradients vanish
        let zn = arr1(&[0.6, 0.8, 0.0]);
        let zo = arr1(&[0.0, 1.0, 0.0]);
        let zk = zn.mapv(|v| 2.0 * v);
        let (_, g) = diversity_loss_with_grad(zn.view(), zo.view(), zk.view(), &cfg).unwrap();
        assert!(g.z_known.iter().all(|&v| v == 0.0));
        // isolate the second term: alpha contribution removed by subtracting
        // the pure-first-term gradient
        let mut only_first = cfg;
        only_first.beta = 1e-300; // negligible second term
        let (_, g1) = diversity_loss_with_grad(zn.view(), zo.view(), zk.view(), &only_first).unwrap();
        for (a, b) in g.z_new.iter().zip(g1.z_new.iter()) {
            assert_eq!(a, b, "second term leaked into z_new gradient");
        }
    }

    #[test]
    fn task_loss_is_sum_of_constituents_in_degenerate_case() {
        let cfg = LossConfig::default();
        // both metric terms vanish and logits are perfect -> total ~ cls
        let logits = arr2(&[[50.0, 0.0], [0.0, 50.0]]);
        let emb = arr2(&[[0.0, 0.0], [10.0, 10.0]]);
        let far = arr2(&[[5.0, -5.0], [-5.0, 5.0]]);
        let inputs = TaskLossInputs {
            logits: logits.view(),
            labels: &[0, 1],
            emb_known: emb.view(),
            emb_old: far.view(),
            emb_new: far.view(),
            num_classes: 2,
        };
        let v = task_loss(&inputs, &cfg).unwrap();
        assert!((v.total - (v.cls + v.metric_old + v.metric_new)).abs() < 1e-12);
        assert!((v.metric_old - v.metric_new).abs() < 1e-12, "old == new batches");
    }

    #[test]
    fn aug_loss_epoch0_is_reconstruction_alone() {
        let cfg = LossConfig::default();
        let x = ndarray::ArrayD::from_elem(ndarray::IxDyn(&[2, 3, 4, 4]), 0.4);
        let y = x.mapv(|v| v + 0.05);
        let v = aug_loss(x.view(), y.view(), None, &cfg).unwrap();
        assert_eq!(v.diversity, 0.0);
        assert!((v.total - v.recons).abs() < 1e-15);
        let expect = reconstruction_loss(x.view(), y.view(), cfg.epsilon_floor).unwrap();
        assert!((v.recons - expect).abs() < 1e-15);
    }
}
