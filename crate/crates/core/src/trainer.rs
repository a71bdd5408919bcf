//! The progressive training loop: per epoch, train one new augmentation
//! model against a randomly selected old one, then train the task model
//! on known plus augmented data. Also the spectral feasibility
//! experiment and the joint-training ablation arm.

use crate::bench::BenchmarkManifest;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::losses::{
    diversity_loss_with_grad, spectral_loss_with_grad, task_loss_with_grad, LossConfig,
    TaskLossInputs,
};
use crate::models::{
    AugmentationModel, ForwardMode, ModelPool, TaskModel, TaskModelConfig,
};
use crate::nn::Adam;
use crate::spectrum::mean_freq_profile;
use crate::util::{derive_seed, maybe_par_map, maybe_par_map_indexed, rng_from};
use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

pub use crate::losses::mine_triplets;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

fn default_extractor_channels() -> Vec<usize> {
    vec![64, 64, 128, 128, 256, 256, 512, 512]
}

/// Architecture knobs of the task model (class count comes from data).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskModelArch {
    pub extractor_channels: Vec<usize>,
    pub embed_dim: usize,
    pub head_depth: usize,
    pub dropout_p: f64,
    pub dct_eps: f64,
}

impl Default for TaskModelArch {
    fn default() -> Self {
        TaskModelArch {
            extractor_channels: default_extractor_channels(),
            embed_dim: 128,
            head_depth: 1,
            dropout_p: 0.2,
            dct_eps: 1e-12,
        }
    }
}

impl TaskModelArch {
    pub fn to_config(&self, num_classes: usize) -> TaskModelConfig {
        TaskModelConfig {
            num_classes,
            extractor_channels: self.extractor_channels.clone(),
            embed_dim: self.embed_dim,
            head_depth: self.head_depth,
            dropout_p: self.dropout_p,
            dct_eps: self.dct_eps,
        }
    }
}

/// Training configuration. Defaults: 20 epochs, task lr 1e-4, augmentation
/// lr 1e-2, lr x0.9 every 500 iterations, batches of 8 per class, 128 px
/// input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_task: f64,
    pub lr_aug: f64,
    pub lr_decay: f64,
    pub lr_decay_every: u64,
    pub batch_per_class: usize,
    pub input_size: usize,
    /// 0 means one pass over the train split, capped at 200 steps.
    pub aug_steps_per_epoch: usize,
    pub seed: u64,
    pub loss: LossConfig,
    pub model: TaskModelArch,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            lr_task: 1e-4,
            lr_aug: 1e-2,
            lr_decay: 0.9,
            lr_decay_every: 500,
            batch_per_class: 8,
            input_size: 128,
            aug_steps_per_epoch: 0,
            seed: 0,
            loss: LossConfig::default(),
            model: TaskModelArch::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be >= 1".into()));
        }
        if self.lr_task <= 0.0 || self.lr_aug <= 0.0 {
            return Err(Error::InvalidParameter("learning rates must be positive".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) || self.lr_decay_every == 0 {
            return Err(Error::InvalidParameter("bad lr decay schedule".into()));
        }
        if self.batch_per_class < 2 {
            return Err(Error::InvalidParameter(
                "batch_per_class must be >= 2 (triplets need pairs)".into(),
            ));
        }
        self.loss.validate()
    }
}

/// Training arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    /// Progressive training with the diversity term.
    Pose,
    /// Plain cross-entropy classifier, no augmentation models.
    Base,
    /// Progressive training with the diversity term disabled.
    PoseNodiv,
    /// All augmentation models optimized together.
    Joint,
}

impl TrainMode {
    pub fn tag(&self) -> &'static str {
        match self {
            TrainMode::Pose => "pose",
            TrainMode::Base => "base",
            TrainMode::PoseNodiv => "pose-nodiv",
            TrainMode::Joint => "joint",
        }
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pose" => Ok(TrainMode::Pose),
            "base" => Ok(TrainMode::Base),
            "pose-nodiv" => Ok(TrainMode::PoseNodiv),
            "joint" => Ok(TrainMode::Joint),
            other => Err(Error::InvalidParameter(format!("unknown mode {other}"))),
        }
    }
}

// ---------------------------------------------------------------------------
// Dataset loading
// ---------------------------------------------------------------------------

/// In-memory train split.
pub struct LoadedDataset {
    pub images: Vec<ImageTensor>,
    pub labels: Vec<usize>,
    pub by_class: Vec<Vec<usize>>,
    pub k: usize,
    pub input_size: usize,
}

/// Loads every train-split image referenced by the manifest. Paths are
/// resolved relative to `root` (the manifest's directory).
pub fn load_train_split(manifest: &BenchmarkManifest, root: &Path) -> Result<LoadedDataset> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for r in manifest.train_records() {
        if r.known_class_id < 0 {
            return Err(Error::Dataset("train split contains unknown-class records".into()));
        }
        images.push(ImageTensor::load_png(&root.join(&r.image_path))?);
        labels.push(r.known_class_id as usize);
    }
    if images.is_empty() {
        return Err(Error::Dataset("empty train split".into()));
    }
    let k = manifest.k;
    if k < 2 {
        return Err(Error::Dataset("need at least 2 known classes".into()));
    }
    let mut by_class = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let input_size = images[0].height();
    for img in &images {
        if img.height() != input_size || img.width() != input_size {
            return Err(Error::Dataset("train images differ in size".into()));
        }
    }
    Ok(LoadedDataset { images, labels, by_class, k, input_size })
}

// ---------------------------------------------------------------------------
// Metrics log
// ---------------------------------------------------------------------------

/// One JSONL record per optimization step.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricRecord {
    pub epoch: usize,
    pub step: usize,
    pub phase: String,
    pub loss: f64,
    pub components: BTreeMap<String, f64>,
    pub lr: f64,
}

pub fn write_metrics_jsonl(records: &[MetricRecord], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Train state
// ---------------------------------------------------------------------------

pub struct TrainState {
    pub epoch: usize,
    pub pool: ModelPool,
    pub task: TaskModel,
    pub metrics: Vec<MetricRecord>,
    pub mode: TrainMode,
    pub cfg: TrainConfig,
}

impl TrainState {
    /// Checkpoint directory for one epoch.
    pub fn epoch_dir(run_dir: &Path, epoch: usize) -> PathBuf {
        run_dir.join("checkpoints").join(format!("epoch_{epoch:03}"))
    }

    fn save_epoch(&self, run_dir: &Path, epoch: usize) -> Result<()> {
        let dir = Self::epoch_dir(run_dir, epoch);
        std::fs::create_dir_all(&dir)?;
        self.task.save(&dir.join("task_model.bin"))?;
        for m in self.pool.iter() {
            m.save(&dir.join(format!("aug_{:03}.bin", m.model_id)))?;
        }
        Ok(())
    }

    fn save_pool_manifest(&self, run_dir: &Path, snapshots: &[BTreeMap<String, f64>]) -> Result<()> {
        #[derive(Serialize)]
        struct Entry<'a> {
            model_id: usize,
            epoch: usize,
            seed: u64,
            metrics: &'a BTreeMap<String, f64>,
        }
        let entries: Vec<Entry> = self
            .pool
            .iter()
            .enumerate()
            .map(|(i, m)| Entry {
                model_id: m.model_id,
                epoch: i,
                seed: m.seed,
                metrics: snapshots.get(i).unwrap_or(&EMPTY_SNAPSHOT),
            })
            .collect();
        let path = run_dir.join("checkpoints").join("models.json");
        std::fs::create_dir_all(path.parent().unwrap())?;
        std::fs::write(path, serde_json::to_string_pretty(&entries)?)?;
        Ok(())
    }
}

static EMPTY_SNAPSHOT: BTreeMap<String, f64> = BTreeMap::new();

/// Loads the latest epoch checkpoint of a run.
pub fn load_latest_checkpoint(run_dir: &Path) -> Result<(TaskModel, Vec<AugmentationModel>)> {
    let ckpt_root = run_dir.join("checkpoints");
    let mut epochs: Vec<PathBuf> = std::fs::read_dir(&ckpt_root)
        .map_err(|_| Error::Checkpoint(format!("no checkpoints under {}", run_dir.display())))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("epoch_")))
        .collect();
    epochs.sort();
    let last = epochs
        .pop()
        .ok_or_else(|| Error::Checkpoint("no epoch checkpoints found".into()))?;
    let task = TaskModel::load(&last.join("task_model.bin"))?;
    let mut augs = Vec::new();
    let mut aug_paths: Vec<PathBuf> = std::fs::read_dir(&last)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.file_name().is_some_and(|n| {
            let n = n.to_string_lossy();
            n.starts_with("aug_") && n.ends_with(".bin")
        }))
        .collect();
    aug_paths.sort();
    for p in aug_paths {
        augs.push(AugmentationModel::load(&p)?);
    }
    Ok((task, augs))
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

fn shuffled(indices: &[usize], rng: &mut rand_chacha::ChaCha20Rng) -> Vec<usize> {
    let mut v = indices.to_vec();
    // Fisher-Yates
    for i in (1..v.len()).rev() {
        let j = rng.random_range(0..=i);
        v.swap(i, j);
    }
    v
}

/// Class-balanced batches: each batch holds `batch_per_class` samples of
/// every class, so the batch size is `K * batch_per_class`.
fn epoch_batches(data: &LoadedDataset, batch_per_class: usize, epoch_rng_seed: u64) -> Vec<Vec<usize>> {
    let mut rng = rng_from(epoch_rng_seed, &[b"batches"]);
    let perms: Vec<Vec<usize>> = data
        .by_class
        .iter()
        .map(|idx| shuffled(idx, &mut rng))
        .collect();
    let steps = perms.iter().map(|p| p.len() / batch_per_class).min().unwrap_or(0);
    (0..steps)
        .map(|s| {
            let mut batch = Vec::with_capacity(data.k * batch_per_class);
            for perm in &perms {
                batch.extend_from_slice(&perm[s * batch_per_class..(s + 1) * batch_per_class]);
            }
            batch
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Divergence guard
// ---------------------------------------------------------------------------

struct DivergenceGuard {
    consecutive: usize,
}

impl DivergenceGuard {
    fn new() -> Self {
        DivergenceGuard { consecutive: 0 }
    }

    fn check(&mut self, loss: f64, epoch: usize, step: usize) -> Result<()> {
        if loss.is_finite() {
            self.consecutive = 0;
            Ok(())
        } else {
            self.consecutive += 1;
            if self.consecutive >= 3 {
                Err(Error::Divergence { epoch, step })
            } else {
                Ok(())
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Augmentation phase
// ---------------------------------------------------------------------------

struct AugStepOutcome {
    value_total: f64,
    recons: f64,
    diversity: f64,
    mean_cos_new_old: f64,
}

/// One optimization step of the new augmentation model on a batch.
#[allow(clippy::too_many_arguments)]
fn aug_step(
    new_model: &mut AugmentationModel,
    opt: &mut Adam,
    task: &TaskModel,
    old_model: Option<&AugmentationModel>,
    batch: &[usize],
    data: &LoadedDataset,
    loss_cfg: &LossConfig,
    diversity_active: bool,
) -> Result<AugStepOutcome> {
    let b = batch.len();
    let xs: Vec<&Array3<f64>> = batch.iter().map(|&i| &data.images[i].0).collect();

    // pass 1: augmented images and the batch-level reconstruction value
    let aug_imgs: Result<Vec<Array3<f64>>> = maybe_par_map(&xs, |x| new_model.forward(x))
        .into_iter()
        .collect();
    let aug_imgs = aug_imgs?;
    let per_image = xs[0].len() as f64;
    let batch_mse: f64 = xs
        .iter()
        .zip(&aug_imgs)
        .map(|(x, a)| {
            x.iter()
                .zip(a.iter())
                .map(|(&u, &v)| (u - v) * (u - v))
                .sum::<f64>()
        })
        .sum::<f64>()
        / (b as f64 * per_image);
    let floored = loss_cfg.epsilon_floor > 0.0 && batch_mse < loss_cfg.epsilon_floor;
    let recons_value = if floored { loss_cfg.epsilon_floor } else { batch_mse };

    // pass 2: per-image gradients through recon and (optionally) the
    // diversity term via the frozen task model
    struct PerImage {
        grads: crate::models::AugGrads,
        diversity: f64,
        cos_new_old: f64,
    }
    let results: Result<Vec<PerImage>> = maybe_par_map_indexed(&xs, |_i, x| {
        let (x_aug, cache) = new_model.forward_cached(x)?;
        let mut g_pixels = Array3::zeros(x_aug.dim());
        if !floored {
            g_pixels.zip_mut_with(&x_aug, |g, &a| *g = 2.0 * a / (b as f64 * per_image));
            g_pixels.zip_mut_with(x, |g, &xv| *g -= 2.0 * xv / (b as f64 * per_image));
        }
        let mut diversity = 0.0;
        let mut cos_new_old = 0.0;
        if diversity_active {
            let old = old_model.expect("diversity needs an old model");
            let (_, z_new, task_cache) = task.forward_cached(&x_aug, ForwardMode::Eval);
            let x_old = old.forward(x)?;
            let (_, z_old) = task.forward(&x_old, ForwardMode::Eval);
            let (_, z_known) = task.forward(x, ForwardMode::Eval);
            let (v, grads) =
                diversity_loss_with_grad(z_new.view(), z_old.view(), z_known.view(), loss_cfg)?;
            diversity = v / b as f64;
            let zn = crate::models::l2_normalize(&z_new);
            let zo = crate::models::l2_normalize(&z_old);
            cos_new_old = zn.dot(&zo);
            let g_emb = grads.z_new.mapv(|v| v / b as f64);
            let g_input = task.backward_input(&task_cache, &g_emb);
            g_pixels += &g_input;
        }
        let grads = new_model.backward(&cache, &g_pixels);
        Ok(PerImage { grads, diversity, cos_new_old })
    })
    .into_iter()
    .collect();
    let results = results?;

    let mut total_grads = new_model.zero_grads();
    let mut diversity = 0.0;
    let mut cos_sum = 0.0;
    for r in &results {
        total_grads.add_assign(&r.grads);
        diversity += r.diversity;
        cos_sum += r.cos_new_old;
    }
    opt.step(&mut new_model.param_slices_mut(), &total_grads.flat_slices());

    Ok(AugStepOutcome {
        value_total: recons_value + diversity,
        recons: recons_value,
        diversity,
        mean_cos_new_old: if diversity_active { cos_sum / b as f64 } else { 0.0 },
    })
}

fn aug_phase_steps(cfg: &TrainConfig, one_pass: usize) -> usize {
    if cfg.aug_steps_per_epoch > 0 {
        cfg.aug_steps_per_epoch
    } else {
        one_pass.min(200)
    }
}

/// Trains one new augmentation model for this epoch and returns it
/// together with its loss snapshot. The task model stays frozen. From
/// epoch 1 on, the old model is resampled uniformly from the pool for
/// every mini-batch.
pub fn train_aug_epoch(
    task: &TaskModel,
    pool: &ModelPool,
    data: &LoadedDataset,
    cfg: &TrainConfig,
    mode: TrainMode,
    epoch: usize,
    metrics: &mut Vec<MetricRecord>,
) -> Result<(AugmentationModel, BTreeMap<String, f64>)> {
    let mut new_model = AugmentationModel::init_with(
        derive_seed(cfg.seed, &[b"aug", &(epoch as u64).to_le_bytes()]),
        Default::default(),
        epoch,
    );
    let mut opt = Adam::new(cfg.lr_aug, cfg.lr_decay, cfg.lr_decay_every);
    let batches = epoch_batches(
        data,
        cfg.batch_per_class,
        derive_seed(cfg.seed, &[b"aug-batches", &(epoch as u64).to_le_bytes()]),
    );
    let steps = aug_phase_steps(cfg, batches.len());
    let diversity_active = epoch >= 1 && mode == TrainMode::Pose && !pool.is_empty();
    let mut select_rng = rng_from(
        pool.selection_seed,
        &[b"old-select-aug", &(epoch as u64).to_le_bytes()],
    );
    let mut guard = DivergenceGuard::new();
    let mut snapshot = BTreeMap::new();
    for step in 0..steps {
        let batch = &batches[step % batches.len().max(1)];
        let old_model = if diversity_active {
            Some(pool.get(select_rng.random_range(0..pool.len())).unwrap())
        } else {
            None
        };
        let out = aug_step(
            &mut new_model,
            &mut opt,
            task,
            old_model,
            batch,
            data,
            &cfg.loss,
            diversity_active,
        )?;
        guard.check(out.value_total, epoch, step)?;
        let mut components = BTreeMap::new();
        components.insert("recons".into(), out.recons);
        components.insert("diversity".into(), out.diversity);
        components.insert("mean_cos_new_old".into(), out.mean_cos_new_old);
        snapshot = components.clone();
        metrics.push(MetricRecord {
            epoch,
            step,
            phase: "aug".into(),
            loss: out.value_total,
            components,
            lr: opt.current_lr(),
        });
    }
    Ok((new_model, snapshot))
}

// ---------------------------------------------------------------------------
// Task phase
// ---------------------------------------------------------------------------

/// Forward/backward machinery for one class-balanced task batch. Returns
/// the accumulated parameter gradients and the loss breakdown.
#[allow(clippy::too_many_arguments)]
pub fn task_step_grads(
    task: &TaskModel,
    new_model: Option<&AugmentationModel>,
    old_model: Option<&AugmentationModel>,
    batch: &[usize],
    data: &LoadedDataset,
    loss_cfg: &LossConfig,
    dropout_seed_base: u64,
    with_metric: bool,
) -> Result<(crate::losses::TaskLossValue, crate::models::TaskGrads)> {
    let b = batch.len();
    let k = data.k;
    let xs: Vec<&Array3<f64>> = batch.iter().map(|&i| &data.images[i].0).collect();
    let labels: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
    let dropout_seed =
        |i: usize| derive_seed(dropout_seed_base, &[b"img", &(i as u64).to_le_bytes()]);

    // phase 1: forward everything without caches
    let known: Vec<(Array1<f64>, Array1<f64>)> = maybe_par_map_indexed(&xs, |i, x| {
        task.forward(x, ForwardMode::Train { dropout_seed: dropout_seed(i) })
    });

    if !with_metric {
        // cross-entropy only (base arm); everything stays per-image
        let mut cls = 0.0;
        let mut grads = task.zero_grads();
        let per_image: Result<Vec<(f64, crate::models::TaskGrads)>> =
            maybe_par_map_indexed(&xs, |i, x| {
                let (logits, _, cache) =
                    task.forward_cached(x, ForwardMode::Train { dropout_seed: dropout_seed(i) });
                let (l, g_logits) =
                    crate::losses::cross_entropy_loss_with_grad(logits.view(), labels[i])?;
                let g = task.backward_params(&cache, Some(&g_logits.mapv(|v| v / b as f64)), None);
                Ok((l / b as f64, g))
            })
            .into_iter()
            .collect();
        for (l, g) in per_image? {
            cls += l;
            grads.add_assign(&g);
        }
        let _ = known;
        return Ok((
            crate::losses::TaskLossValue { total: cls, cls, metric_old: 0.0, metric_new: 0.0 },
            grads,
        ));
    }

    let new_model = new_model.expect("metric terms need a new augmentation model");
    let old_model = old_model.unwrap_or(new_model);

    let aug_new: Result<Vec<Array3<f64>>> = maybe_par_map(&xs, |x| new_model.forward(x))
        .into_iter()
        .collect();
    let aug_new = aug_new?;
    let aug_old: Result<Vec<Array3<f64>>> = maybe_par_map(&xs, |x| old_model.forward(x))
        .into_iter()
        .collect();
    let aug_old = aug_old?;
    let emb_new: Vec<Array1<f64>> =
        maybe_par_map(&aug_new, |x| task.forward(x, ForwardMode::Eval).1);
    let emb_old: Vec<Array1<f64>> =
        maybe_par_map(&aug_old, |x| task.forward(x, ForwardMode::Eval).1);

    let d = known[0].1.len();
    let mut logits_mat = Array2::zeros((b, k));
    let mut emb_known_mat = Array2::zeros((b, d));
    let mut emb_old_mat = Array2::zeros((b, d));
    let mut emb_new_mat = Array2::zeros((b, d));
    for i in 0..b {
        logits_mat.row_mut(i).assign(&known[i].0);
        emb_known_mat.row_mut(i).assign(&known[i].1);
        emb_old_mat.row_mut(i).assign(&emb_old[i]);
        emb_new_mat.row_mut(i).assign(&emb_new[i]);
    }

    // phase 2: batch loss and its gradients at the model outputs
    let inputs = TaskLossInputs {
        logits: logits_mat.view(),
        labels: &labels,
        emb_known: emb_known_mat.view(),
        emb_old: emb_old_mat.view(),
        emb_new: emb_new_mat.view(),
        num_classes: k,
    };
    let (value, head_grads) = task_loss_with_grad(&inputs, loss_cfg)?;

    // phase 3: pull gradients onto the parameters, one image at a time
    enum Job<'a> {
        Known { x: &'a Array3<f64>, idx: usize },
        Aug { x: &'a Array3<f64>, idx: usize, old: bool },
    }
    let mut jobs = Vec::with_capacity(3 * b);
    for (i, x) in xs.iter().enumerate() {
        jobs.push(Job::Known { x, idx: i });
    }
    for (i, x) in aug_old.iter().enumerate() {
        jobs.push(Job::Aug { x, idx: i, old: true });
    }
    for (i, x) in aug_new.iter().enumerate() {
        jobs.push(Job::Aug { x, idx: i, old: false });
    }
    let per_job: Vec<crate::models::TaskGrads> = maybe_par_map(&jobs, |job| match job {
        Job::Known { x, idx } => {
            let (_, _, cache) =
                task.forward_cached(x, ForwardMode::Train { dropout_seed: dropout_seed(*idx) });
            let g_logits = head_grads.logits.row(*idx).to_owned();
            let g_emb = head_grads.emb_known.row(*idx).to_owned();
            task.backward_params(&cache, Some(&g_logits), Some(&g_emb))
        }
        Job::Aug { x, idx, old } => {
            let (_, _, cache) = task.forward_cached(x, ForwardMode::Eval);
            let g_emb = if *old {
                head_grads.emb_old.row(*idx).to_owned()
            } else {
                head_grads.emb_new.row(*idx).to_owned()
            };
            task.backward_params(&cache, None, Some(&g_emb))
        }
    });
    let mut grads = task.zero_grads();
    for g in &per_job {
        grads.add_assign(g);
    }
    Ok((value, grads))
}

/// One pass of the task model over the train split with class-balanced
/// batches. Pool members stay frozen; the old model is resampled per
/// batch.
#[allow(clippy::too_many_arguments)]
pub fn train_task_epoch(
    task: &mut TaskModel,
    opt: &mut Adam,
    pool: &ModelPool,
    data: &LoadedDataset,
    cfg: &TrainConfig,
    mode: TrainMode,
    epoch: usize,
    metrics: &mut Vec<MetricRecord>,
) -> Result<()> {
    let batches = epoch_batches(
        data,
        cfg.batch_per_class,
        derive_seed(cfg.seed, &[b"task-batches", &(epoch as u64).to_le_bytes()]),
    );
    let mut select_rng = rng_from(
        pool.selection_seed,
        &[b"old-select-task", &(epoch as u64).to_le_bytes()],
    );
    let mut guard = DivergenceGuard::new();
    let with_metric = mode != TrainMode::Base;
    for (step, batch) in batches.iter().enumerate() {
        let (new_model, old_model) = if with_metric {
            match mode {
                TrainMode::Joint => {
                    let new = pool.get(select_rng.random_range(0..pool.len())).unwrap();
                    let old = pool.get(select_rng.random_range(0..pool.len())).unwrap();
                    (Some(new), Some(old))
                }
                _ => {
                    let new = pool.last().expect("pool must hold this epoch's model");
                    let old = pool.get(select_rng.random_range(0..pool.len())).unwrap();
                    (Some(new), Some(old))
                }
            }
        } else {
            (None, None)
        };
        let dropout_seed_base = derive_seed(
            cfg.seed,
            &[b"dropout", &(epoch as u64).to_le_bytes(), &(step as u64).to_le_bytes()],
        );
        let (value, grads) = task_step_grads(
            task,
            new_model,
            old_model,
            batch,
            data,
            &cfg.loss,
            dropout_seed_base,
            with_metric,
        )?;
        guard.check(value.total, epoch, step)?;
        opt.step(&mut task.param_slices_mut(), &grads.flat_slices());
        let mut components = BTreeMap::new();
        components.insert("cls".into(), value.cls);
        components.insert("metric_old".into(), value.metric_old);
        components.insert("metric_new".into(), value.metric_new);
        metrics.push(MetricRecord {
            epoch,
            step,
            phase: "task".into(),
            loss: value.total,
            components,
            lr: opt.current_lr(),
        });
    }
    Ok(())
}

/// Argmax accuracy of the task model over the train split.
pub fn train_split_accuracy(task: &TaskModel, data: &LoadedDataset) -> f64 {
    let preds: Vec<usize> = maybe_par_map(&data.images, |img| {
        let (logits, _) = task.forward(&img.0, ForwardMode::Eval);
        logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0)
    });
    let correct = preds
        .iter()
        .zip(&data.labels)
        .filter(|(p, l)| p == l)
        .count();
    correct as f64 / data.labels.len() as f64
}

// ---------------------------------------------------------------------------
// Joint-training ablation arm
// ---------------------------------------------------------------------------

/// One epoch of the joint arm: every model takes a gradient step on every
/// batch, with the diversity term measured against a randomly chosen
/// other member.
#[allow(clippy::too_many_arguments)]
fn train_joint_aug_epoch(
    task: &TaskModel,
    models: &mut [AugmentationModel],
    opts: &mut [Adam],
    data: &LoadedDataset,
    cfg: &TrainConfig,
    epoch: usize,
    metrics: &mut Vec<MetricRecord>,
) -> Result<()> {
    let batches = epoch_batches(
        data,
        cfg.batch_per_class,
        derive_seed(cfg.seed, &[b"aug-batches", &(epoch as u64).to_le_bytes()]),
    );
    let steps = aug_phase_steps(cfg, batches.len());
    let n = models.len();
    let mut select_rng = rng_from(
        cfg.seed,
        &[b"joint-select", &(epoch as u64).to_le_bytes()],
    );
    let mut guard = DivergenceGuard::new();
    for step in 0..steps {
        let batch = &batches[step % batches.len().max(1)];
        let mut total = 0.0;
        for m in 0..n {
            let other_idx = if n > 1 {
                let mut o = select_rng.random_range(0..n - 1);
                if o >= m {
                    o += 1;
                }
                o
            } else {
                m
            };
            let other = models[other_idx].clone();
            let diversity_active = n > 1;
            let out = {
                let (left, right) = models.split_at_mut(m);
                let _ = left;
                let model = &mut right[0];
                aug_step(
                    model,
                    &mut opts[m],
                    task,
                    if diversity_active { Some(&other) } else { None },
                    batch,
                    data,
                    &cfg.loss,
                    diversity_active,
                )?
            };
            total += out.value_total;
        }
        guard.check(total, epoch, step)?;
        let mut components = BTreeMap::new();
        components.insert("joint_total".into(), total / n as f64);
        metrics.push(MetricRecord {
            epoch,
            step,
            phase: "aug".into(),
            loss: total / n as f64,
            components,
            lr: opts[0].current_lr(),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// The full training loop
// ---------------------------------------------------------------------------

/// Runs the full training loop in the requested mode. Fully reproducible
/// from `cfg.seed`; per-epoch checkpoints land under `run_dir` when
/// given.
pub fn train_pose(
    data: &LoadedDataset,
    cfg: &TrainConfig,
    mode: TrainMode,
    run_dir: Option<&Path>,
) -> Result<TrainState> {
    cfg.validate()?;
    if data.k < 2 {
        return Err(Error::Dataset("need at least 2 known classes".into()));
    }
    for (c, idx) in data.by_class.iter().enumerate() {
        if idx.len() < cfg.batch_per_class {
            return Err(Error::Dataset(format!(
                "class {c} has {} train images, need at least {}",
                idx.len(),
                cfg.batch_per_class
            )));
        }
    }
    if data.input_size != cfg.input_size {
        return Err(Error::Dataset(format!(
            "dataset images are {}px but the config says {}px",
            data.input_size, cfg.input_size
        )));
    }

    let task_cfg = cfg.model.to_config(data.k);
    let mut state = TrainState {
        epoch: 0,
        pool: ModelPool::new(derive_seed(cfg.seed, &[b"selection"])),
        task: TaskModel::init(task_cfg, derive_seed(cfg.seed, &[b"task"]))?,
        metrics: Vec::new(),
        mode,
        cfg: cfg.clone(),
    };
    let mut task_opt = Adam::new(cfg.lr_task, cfg.lr_decay, cfg.lr_decay_every);
    let mut snapshots: Vec<BTreeMap<String, f64>> = Vec::new();

    // the joint arm owns all models from the start
    let mut joint_models: Vec<AugmentationModel> = Vec::new();
    let mut joint_opts: Vec<Adam> = Vec::new();
    if mode == TrainMode::Joint {
        for i in 0..cfg.epochs {
            joint_models.push(AugmentationModel::init_with(
                derive_seed(cfg.seed, &[b"aug", &(i as u64).to_le_bytes()]),
                Default::default(),
                i,
            ));
            joint_opts.push(Adam::new(cfg.lr_aug, cfg.lr_decay, cfg.lr_decay_every));
        }
    }

    for epoch in 0..cfg.epochs {
        state.epoch = epoch;
        match mode {
            TrainMode::Base => {}
            TrainMode::Joint => {
                train_joint_aug_epoch(
                    &state.task,
                    &mut joint_models,
                    &mut joint_opts,
                    data,
                    cfg,
                    epoch,
                    &mut state.metrics,
                )?;
                // rebuild the pool to mirror the current joint members
                let mut pool = ModelPool::new(state.pool.selection_seed);
                for m in &joint_models {
                    pool.push(m.clone());
                }
                state.pool = pool;
                snapshots = vec![BTreeMap::new(); joint_models.len()];
            }
            TrainMode::Pose | TrainMode::PoseNodiv => {
                let (model, snapshot) = train_aug_epoch(
                    &state.task,
                    &state.pool,
                    data,
                    cfg,
                    mode,
                    epoch,
                    &mut state.metrics,
                )?;
                state.pool.push(model);
                snapshots.push(snapshot);
            }
        }

        train_task_epoch(
            &mut state.task,
            &mut task_opt,
            &state.pool,
            data,
            cfg,
            mode,
            epoch,
            &mut state.metrics,
        )?;

        let acc = train_split_accuracy(&state.task, data);
        let mut components = BTreeMap::new();
        components.insert("train_accuracy".into(), acc);
        components.insert("pool_size".into(), state.pool.len() as f64);
        state.metrics.push(MetricRecord {
            epoch,
            step: 0,
            phase: "epoch-summary".into(),
            loss: 0.0,
            components,
            lr: task_opt.current_lr(),
        });

        if let Some(dir) = run_dir {
            state.save_epoch(dir, epoch)?;
        }
    }

    if let Some(dir) = run_dir {
        state.save_pool_manifest(dir, &snapshots)?;
        write_metrics_jsonl(&state.metrics, &dir.join("metrics.jsonl"))?;
    }
    Ok(state)
}

// ---------------------------------------------------------------------------
// Spectral feasibility experiment
// ---------------------------------------------------------------------------

fn default_feas_steps() -> usize {
    300
}
fn default_feas_batch() -> usize {
    16
}
fn default_feas_lr() -> f64 {
    1e-2
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct FeasibilityConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub loss: LossConfig,
}

impl Default for FeasibilityConfig {
    fn default() -> Self {
        FeasibilityConfig {
            steps: default_feas_steps(),
            batch: default_feas_batch(),
            lr: default_feas_lr(),
            seed: 0,
            loss: LossConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FeasibilityReport {
    pub initial_profile_distance: f64,
    pub final_profile_distance: f64,
    pub initial_pixel_mse: f64,
    pub final_pixel_mse: f64,
    pub steps: usize,
}

fn eval_feasibility(
    model: &AugmentationModel,
    source: &[ImageTensor],
    target_profile: &crate::spectrum::SpectrumProfile,
) -> Result<(f64, f64)> {
    let augmented: Result<Vec<ImageTensor>> = maybe_par_map(source, |img| {
        Ok(ImageTensor(model.forward(&img.0)?))
    })
    .into_iter()
    .collect();
    let augmented = augmented?;
    let mean_profile = mean_freq_profile(&augmented, false)?;
    let dist = crate::spectrum::profile_distance(&mean_profile, target_profile)?;
    let mse: f64 = source
        .iter()
        .zip(&augmented)
        .map(|(x, a)| crate::image::mse(x, a).unwrap_or(f64::INFINITY))
        .sum::<f64>()
        / source.len() as f64;
    Ok((dist, mse))
}

/// Trains one augmentation model to move the source corpus's spectrum
/// profile onto the target corpus's, while keeping pixel reconstruction
/// error small.
pub fn spectral_feasibility(
    source: &[ImageTensor],
    target: &[ImageTensor],
    cfg: &FeasibilityConfig,
) -> Result<(AugmentationModel, FeasibilityReport)> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::InvalidInput("feasibility needs nonempty corpora".into()));
    }
    let size = source[0].height();
    for img in source.iter().chain(target.iter()) {
        if img.height() != size || img.width() != size {
            return Err(Error::InvalidInput("corpora must share one resolution".into()));
        }
    }
    cfg.loss.validate()?;

    let target_profile = mean_freq_profile(target, false)?;
    let mut model = AugmentationModel::init_with(
        derive_seed(cfg.seed, &[b"feasibility"]),
        Default::default(),
        0,
    );
    let (initial_dist, initial_mse) = eval_feasibility(&model, source, &target_profile)?;

    let mut opt = Adam::new(cfg.lr, 0.9, 500);
    let mut rng = rng_from(cfg.seed, &[b"feasibility-batches"]);
    let mut guard = DivergenceGuard::new();
    for step in 0..cfg.steps {
        let batch: Vec<usize> = (0..cfg.batch.min(source.len()))
            .map(|_| rng.random_range(0..source.len()))
            .collect();
        let xs: Vec<Array3<f64>> = batch.iter().map(|&i| source[i].0.clone()).collect();
        let caches: Result<Vec<_>> = maybe_par_map(&xs, |x| model.forward_cached(x))
            .into_iter()
            .collect();
        let caches = caches?;
        let aug: Vec<Array3<f64>> = caches.iter().map(|(a, _)| a.clone()).collect();
        let (value, grads_px) = spectral_loss_with_grad(&xs, &aug, &target_profile, &cfg.loss)?;
        guard.check(value, 0, step)?;
        let per_image: Vec<crate::models::AugGrads> =
            maybe_par_map_indexed(&caches, |i, (_, cache)| model.backward(cache, &grads_px[i]));
        let mut total = model.zero_grads();
        for g in &per_image {
            total.add_assign(g);
        }
        opt.step(&mut model.param_slices_mut(), &total.flat_slices());
    }

    let (final_dist, final_mse) = eval_feasibility(&model, source, &target_profile)?;
    let report = FeasibilityReport {
        initial_profile_distance: initial_dist,
        final_profile_distance: final_dist,
        initial_pixel_mse: initial_mse,
        final_pixel_mse: final_mse,
        steps: cfg.steps,
    };
    Ok((model, report))
}
