//! `osma`: benchmark generation, training, evaluation, spectrum analysis,
//! clustering comparison, and robustness sweeps for open-set model
//! attribution.

mod pca;
mod plot;

use clap::{Parser, Subcommand};
use osma_core::bench::{
    build_benchmark, file_checksum, perturb, BenchmarkManifest, Openness, PerturbKind, SplitSpec,
};
use osma_core::error::{Error, Result};
use osma_core::evalkit::{
    self, cluster_metrics, confidence_histogram, evaluate, extract_features, load_test_split,
    oscr, oscr_curve, score_test_split, PredictionRecord,
};
use osma_core::image::ImageTensor;
use osma_core::models::extract_embedding;
use osma_core::trainer::{
    load_latest_checkpoint, load_train_split, spectral_feasibility, train_pose, FeasibilityConfig,
    LoadedDataset, TrainConfig, TrainMode,
};
use osma_core::util::derive_seed;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const OUT_ROOT_ENV: &str = "OSMA_OUT_ROOT";

#[derive(Parser)]
#[command(
    name = "osma",
    version,
    about = "Open-set model attribution: synthetic benchmark, progressive training, and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic trace-stamp benchmark
    BenchGen {
        /// Split specification (JSON); omitted = desk defaults
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (relative paths honor OSMA_OUT_ROOT)
        #[arg(long, default_value = "bench")]
        out: String,
    },
    /// Train a model on a benchmark manifest
    Train {
        /// Run configuration (JSON)
        #[arg(long)]
        config: PathBuf,
        /// Training arm
        #[arg(long, value_parser = parse_mode)]
        mode: Option<TrainMode>,
        #[arg(long)]
        out: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a trained run on the test split
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Rejection threshold for the acceptance summary
        #[arg(long, default_value_t = 0.5)]
        theta: f64,
        /// Also emit an accuracy-vs-theta table
        #[arg(long)]
        theta_sweep: bool,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        #[arg(long)]
        out: Option<String>,
    },
    /// Mean azimuthal spectrum profiles of two corpora, optionally with a
    /// spectral-matching fit
    Spectrum {
        /// Directory of PNG images (source corpus)
        #[arg(long = "a")]
        corpus_a: PathBuf,
        /// Directory of PNG images (target corpus)
        #[arg(long = "b")]
        corpus_b: PathBuf,
        /// Fit an augmentation model mapping a's spectrum onto b's
        #[arg(long)]
        fit: bool,
        #[arg(long, default_value_t = 300)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "spectrum")]
        out: String,
    },
    /// K-means clustering scores over test-split features
    Cluster {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<String>,
    },
    /// OSCR versus perturbation strength
    Robustness {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// blur | jpeg | lighting | noise | crop_resize
        #[arg(long)]
        kind: String,
        /// Comma-separated strengths, e.g. 0,0.02,0.05
        #[arg(long)]
        strengths: String,
        /// Also retrain with the perturbation as train-time augmentation
        #[arg(long)]
        immunized: bool,
        #[arg(long)]
        out: Option<String>,
    },
}

fn parse_mode(s: &str) -> std::result::Result<TrainMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::BenchGen { config, out } => cmd_bench_gen(config.as_deref(), &out),
        Cmd::Train { config, mode, out, seed, epochs } => {
            cmd_train(&config, mode, out, seed, epochs).map(|_| ())
        }
        Cmd::Eval { run, manifest, theta, theta_sweep, bins, out } => {
            cmd_eval(&run, &manifest, theta, theta_sweep, bins, out)
        }
        Cmd::Spectrum { corpus_a, corpus_b, fit, steps, seed, out } => {
            cmd_spectrum(&corpus_a, &corpus_b, fit, steps, seed, &out)
        }
        Cmd::Cluster { run, manifest, k, seed, out } => cmd_cluster(&run, &manifest, k, seed, out),
        Cmd::Robustness { run, manifest, kind, strengths, immunized, out } => {
            cmd_robustness(&run, &manifest, &kind, &strengths, immunized, out)
        }
    }
}

// ---------------------------------------------------------------------------
// Path resolution: inputs resolve against the config location, outputs
// additionally honor OSMA_OUT_ROOT.
// ---------------------------------------------------------------------------

fn base_dir(config: Option<&Path>) -> PathBuf {
    config
        .and_then(|p| p.parent().map(Path::to_path_buf))
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| PathBuf::from("."))
}

fn resolve_input(dir: &Path, p: &str) -> PathBuf {
    let pb = PathBuf::from(p);
    if pb.is_absolute() {
        pb
    } else {
        dir.join(pb)
    }
}

fn resolve_output(dir: &Path, p: &str) -> PathBuf {
    let pb = PathBuf::from(p);
    if pb.is_absolute() {
        return pb;
    }
    match std::env::var(OUT_ROOT_ENV) {
        Ok(root) if !root.is_empty() => PathBuf::from(root).join(pb),
        _ => dir.join(pb),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::InvalidInput(format!("bad config {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// bench-gen
// ---------------------------------------------------------------------------

fn cmd_bench_gen(config: Option<&Path>, out: &str) -> Result<()> {
    let spec: SplitSpec = match config {
        Some(p) => read_json(p)?,
        None => SplitSpec::default(),
    };
    let dir = base_dir(config);
    let out_dir = resolve_output(&dir, out);
    std::fs::create_dir_all(&out_dir)?;
    let manifest_path = out_dir.join("manifest.jsonl");
    let previous = manifest_path
        .exists()
        .then(|| file_checksum(&manifest_path))
        .transpose()?;

    let manifest = build_benchmark(&spec, &out_dir)?;
    write_text(
        &out_dir.join("bench_config.resolved.json"),
        &serde_json::to_string_pretty(&spec)?,
    )?;

    let count = |f: &dyn Fn(&osma_core::bench::ManifestRecord) -> bool| {
        manifest.records.iter().filter(|r| f(r)).count()
    };
    println!("benchmark written to {}", out_dir.display());
    println!("  known classes (K): {}", manifest.k);
    println!(
        "  seen real:    {:5} train / {:5} test",
        count(&|r| r.class_name == "real" && r.split == osma_core::bench::Split::Train),
        count(&|r| r.class_name == "real" && r.split == osma_core::bench::Split::Test),
    );
    println!(
        "  seen fake:    {:5} train / {:5} test",
        count(&|r| r.known_class_id > 0 && r.split == osma_core::bench::Split::Train),
        count(&|r| r.known_class_id > 0 && r.split == osma_core::bench::Split::Test),
    );
    println!(
        "  unseen real:  {:5} test",
        count(&|r| r.class_name == "real_unseen"),
    );
    println!(
        "  unseen fake:  {:5} test ({} seed / {} architecture / {} dataset)",
        count(&|r| r.openness == Openness::Unseen),
        count(&|r| r.unseen_type == osma_core::bench::UnseenType::Seed),
        count(&|r| r.unseen_type == osma_core::bench::UnseenType::Architecture),
        count(&|r| r.unseen_type == osma_core::bench::UnseenType::Dataset),
    );
    let checksum = file_checksum(&manifest_path)?;
    match previous {
        Some(prev) if prev == checksum => {
            println!("  manifest checksum {checksum:016x} (identical checksum: rerun reproduced the benchmark)")
        }
        _ => println!("  manifest checksum {checksum:016x}"),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn default_mode() -> TrainMode {
    TrainMode::Pose
}
fn default_theta() -> f64 {
    0.5
}
fn default_manifest() -> String {
    "bench/manifest.jsonl".into()
}

/// Run configuration document for `train`. Flags override file values;
/// file values override defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainRunConfig {
    pub manifest: String,
    pub out_dir: Option<String>,
    pub mode: TrainMode,
    pub theta: f64,
    pub train: TrainConfig,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        TrainRunConfig {
            manifest: default_manifest(),
            out_dir: None,
            mode: default_mode(),
            theta: default_theta(),
            train: TrainConfig::default(),
        }
    }
}

fn cmd_train(
    config_path: &Path,
    mode: Option<TrainMode>,
    out: Option<String>,
    seed: Option<u64>,
    epochs: Option<usize>,
) -> Result<PathBuf> {
    let mut cfg: TrainRunConfig = read_json(config_path)?;
    if let Some(m) = mode {
        cfg.mode = m;
    }
    if let Some(o) = out {
        cfg.out_dir = Some(o);
    }
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    let dir = base_dir(Some(config_path));
    let manifest_path = resolve_input(&dir, &cfg.manifest);
    let out_rel = cfg
        .out_dir
        .clone()
        .unwrap_or_else(|| format!("runs/{}", cfg.mode.tag()));
    let run_dir = resolve_output(&dir, &out_rel);
    std::fs::create_dir_all(&run_dir)?;

    // resolved copy with absolute paths so a rerun from it is exact
    let mut resolved = cfg.clone();
    resolved.manifest = manifest_path
        .canonicalize()
        .unwrap_or(manifest_path.clone())
        .display()
        .to_string();
    resolved.out_dir = Some(
        run_dir
            .canonicalize()
            .unwrap_or(run_dir.clone())
            .display()
            .to_string(),
    );
    write_text(
        &run_dir.join("resolved_config.json"),
        &serde_json::to_string_pretty(&resolved)?,
    )?;

    let manifest = BenchmarkManifest::read_jsonl(&manifest_path)?;
    manifest.validate()?;
    let manifest_dir = base_dir(Some(&manifest_path));
    let data = load_train_split(&manifest, &manifest_dir)?;
    println!(
        "training mode={} on {} images, K={}, {}px, {} epochs, seed {}",
        cfg.mode.tag(),
        data.images.len(),
        data.k,
        data.input_size,
        cfg.train.epochs,
        cfg.train.seed
    );
    let state = train_pose(&data, &cfg.train, cfg.mode, Some(&run_dir))?;
    if let Some(s) = state
        .metrics
        .iter()
        .rev()
        .find(|m| m.phase == "epoch-summary")
    {
        println!(
            "done: pool size {}, final train accuracy {:.4}",
            state.pool.len(),
            s.components.get("train_accuracy").copied().unwrap_or(f64::NAN)
        );
    }
    println!("run directory: {}", run_dir.display());
    Ok(run_dir)
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

fn load_run_and_split(
    run: &Path,
    manifest_path: &Path,
) -> Result<(osma_core::models::TaskModel, BenchmarkManifest, evalkit::TestSplit)> {
    let (task, _augs) = load_latest_checkpoint(run)?;
    let manifest = BenchmarkManifest::read_jsonl(manifest_path)?;
    manifest.validate()?;
    let split = load_test_split(&manifest, &base_dir(Some(manifest_path)))?;
    Ok((task, manifest, split))
}

fn cmd_eval(
    run: &Path,
    manifest_path: &Path,
    theta: f64,
    theta_sweep: bool,
    bins: usize,
    out: Option<String>,
) -> Result<()> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::InvalidParameter(format!("theta {theta} outside [0,1]")));
    }
    if bins < 2 {
        return Err(Error::InvalidParameter("need at least 2 histogram bins".into()));
    }
    let (task, manifest, split) = load_run_and_split(run, manifest_path)?;
    let records = score_test_split(&task, &split);
    let report = evaluate(&records, manifest.k)?;

    let out_dir = match out {
        Some(o) => resolve_output(Path::new("."), &o),
        None => run.join("eval"),
    };
    std::fs::create_dir_all(&out_dir)?;
    write_text(&out_dir.join("metrics.json"), &report.to_json())?;
    write_text(&out_dir.join("confusion.csv"), &report.confusion_csv())?;

    let hists = confidence_histogram(&records, bins);
    for h in &hists {
        let mut csv = String::from("bin,count\n");
        for (i, c) in h.counts.iter().enumerate() {
            csv.push_str(&format!("{i},{c}\n"));
        }
        write_text(&out_dir.join(format!("hist_{}.csv", h.group)), &csv)?;
    }
    let hist_groups: Vec<(String, Vec<usize>)> = hists
        .iter()
        .map(|h| (h.group.clone(), h.counts.clone()))
        .collect();
    plot::histogram(
        &out_dir.join("confidence_hist.svg"),
        "prediction confidence by group",
        &hist_groups,
    )?;

    let closed: Vec<PredictionRecord> = records.iter().filter(|r| r.is_closed()).cloned().collect();
    let open: Vec<PredictionRecord> = records.iter().filter(|r| !r.is_closed()).cloned().collect();
    let curve = oscr_curve(&closed, &open)?;
    plot::line_chart(
        &out_dir.join("ccr_fpr.svg"),
        "correct classification rate vs false positive rate",
        "FPR (open set)",
        "CCR (closed set)",
        &[plot::Series { label: "ccr".into(), points: curve }],
    )?;

    // 2D PCA scatter of embeddings, closed vs open
    let d_emb = extract_embedding(&task, &split.images[0]).len();
    let mut mat = ndarray::Array2::zeros((split.images.len(), d_emb));
    for (i, img) in split.images.iter().enumerate() {
        mat.row_mut(i).assign(&extract_embedding(&task, img));
    }
    let proj = pca::project_2d(mat.view());
    let mut closed_pts = Vec::new();
    let mut open_pts = Vec::new();
    for (p, r) in proj.iter().zip(&records) {
        if r.is_closed() {
            closed_pts.push(*p);
        } else {
            open_pts.push(*p);
        }
    }
    plot::scatter(
        &out_dir.join("embedding_pca.svg"),
        "embedding PCA (closed vs open)",
        "pc1",
        "pc2",
        &[
            plot::Series { label: "closed".into(), points: closed_pts },
            plot::Series { label: "open".into(), points: open_pts },
        ],
    )?;

    if theta_sweep {
        let mut csv = String::from("theta,ccr,fpr\n");
        for i in 0..=20 {
            let t = i as f64 / 20.0;
            let ccr = closed
                .iter()
                .filter(|r| r.confidence >= t && r.predicted == r.true_label.unwrap())
                .count() as f64
                / closed.len() as f64;
            let fpr = open.iter().filter(|r| r.confidence >= t).count() as f64 / open.len() as f64;
            csv.push_str(&format!("{t},{ccr},{fpr}\n"));
        }
        write_text(&out_dir.join("theta_sweep.csv"), &csv)?;
    }

    let accepted = closed.iter().filter(|r| r.confidence >= theta).count() as f64 / closed.len() as f64;
    let rejected = open.iter().filter(|r| r.confidence < theta).count() as f64 / open.len() as f64;
    println!("{}", report.to_json());
    println!(
        "at theta={theta}: closed-set acceptance {accepted:.4}, open-set rejection {rejected:.4}"
    );
    println!("artifacts in {}", out_dir.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// spectrum
// ---------------------------------------------------------------------------

fn load_corpus_dir(dir: &Path) -> Result<Vec<ImageTensor>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::InvalidInput(format!("cannot read corpus {}: {e}", dir.display())))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidInput(format!("no PNG images under {}", dir.display())));
    }
    let imgs: Result<Vec<ImageTensor>> = paths.iter().map(|p| ImageTensor::load_png(p)).collect();
    let imgs = imgs?;
    let size = imgs[0].height();
    for img in &imgs {
        if img.height() != size || img.width() != size {
            return Err(Error::InvalidInput("corpus resolution mismatch".into()));
        }
    }
    Ok(imgs)
}

fn cmd_spectrum(
    corpus_a: &Path,
    corpus_b: &Path,
    fit: bool,
    steps: usize,
    seed: u64,
    out: &str,
) -> Result<()> {
    let a = load_corpus_dir(corpus_a)?;
    let b = load_corpus_dir(corpus_b)?;
    if a[0].height() != b[0].height() {
        return Err(Error::InvalidInput("corpora differ in resolution".into()));
    }
    let out_dir = resolve_output(Path::new("."), out);
    std::fs::create_dir_all(&out_dir)?;

    let prof_a = osma_core::spectrum::mean_freq_profile(&a, true)?;
    let prof_b = osma_core::spectrum::mean_freq_profile(&b, true)?;
    write_text(&out_dir.join("profile_a.csv"), &prof_a.to_csv())?;
    write_text(&out_dir.join("profile_b.csv"), &prof_b.to_csv())?;
    let distance = osma_core::spectrum::profile_distance(&prof_a, &prof_b)?;

    let to_series = |label: &str, p: &osma_core::spectrum::SpectrumProfile| plot::Series {
        label: label.into(),
        points: p
            .values()
            .iter()
            .enumerate()
            .map(|(i, &v)| (i as f64, (v + 1e-12).log10()))
            .collect(),
    };
    plot::line_chart(
        &out_dir.join("profiles.svg"),
        "mean azimuthal power profiles (log10)",
        "radial bin",
        "log10 normalized power",
        &[to_series("corpus a", &prof_a), to_series("corpus b", &prof_b)],
    )?;

    println!("profile distance (normalized): {distance:.6e}");
    let mut summary = serde_json::json!({
        "profile_distance": distance,
        "bins": prof_a.len(),
        "count_a": a.len(),
        "count_b": b.len(),
    });

    if fit {
        let cfg = FeasibilityConfig { steps, seed, ..Default::default() };
        let (model, report) = spectral_feasibility(&a, &b, &cfg)?;
        model.save(&out_dir.join("aug_fit.bin"))?;
        write_text(&out_dir.join("feasibility.json"), &serde_json::to_string_pretty(&report)?)?;
        println!(
            "fit: profile distance {:.6e} -> {:.6e}, final pixel mse {:.6e} ({} steps)",
            report.initial_profile_distance,
            report.final_profile_distance,
            report.final_pixel_mse,
            report.steps
        );
        summary["feasibility"] = serde_json::to_value(&report)?;
    }
    write_text(&out_dir.join("summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    println!("artifacts in {}", out_dir.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// cluster
// ---------------------------------------------------------------------------

fn cmd_cluster(
    run: &Path,
    manifest_path: &Path,
    k: usize,
    seed: u64,
    out: Option<String>,
) -> Result<()> {
    let (task, _manifest, split) = load_run_and_split(run, manifest_path)?;
    let features = extract_features(&task, &split.images);
    // each source (including every unseen stamp) is its own ground-truth
    // class, identified by class_name
    let mut names: Vec<&String> = split.class_names.iter().collect();
    names.sort_unstable();
    names.dedup();
    let labels: Vec<usize> = split
        .class_names
        .iter()
        .map(|n| names.binary_search(&n).unwrap())
        .collect();
    let scores = cluster_metrics(features.view(), &labels, k, seed)?;
    let json = serde_json::to_string_pretty(&scores)?;
    let out_path = match out {
        Some(o) => resolve_output(Path::new("."), &o),
        None => run.join("cluster.json"),
    };
    write_text(&out_path, &json)?;
    println!("{json}");
    println!("written to {}", out_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// robustness
// ---------------------------------------------------------------------------

fn records_under_perturbation(
    task: &osma_core::models::TaskModel,
    split: &evalkit::TestSplit,
    kind: PerturbKind,
    strength: f64,
) -> Result<Vec<PredictionRecord>> {
    if strength == 0.0 {
        return Ok(score_test_split(task, split));
    }
    let perturbed: Result<Vec<ImageTensor>> = split
        .images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let seed = derive_seed(
                0xB0B5,
                &[kind.tag().as_bytes(), &strength.to_bits().to_le_bytes(), &(i as u64).to_le_bytes()],
            );
            perturb(img, kind, strength, seed)
        })
        .collect();
    let perturbed = perturbed?;
    let scored = osma_core::util::maybe_par_map(&perturbed, |img| evalkit::score_image(task, img));
    Ok(scored
        .into_iter()
        .zip(&split.true_labels)
        .zip(&split.unseen_types)
        .map(|((s, &label), &ty)| PredictionRecord::from_scores(s, label, ty))
        .collect())
}

fn oscr_of(records: &[PredictionRecord]) -> Result<f64> {
    let closed: Vec<PredictionRecord> = records.iter().filter(|r| r.is_closed()).cloned().collect();
    let open: Vec<PredictionRecord> = records.iter().filter(|r| !r.is_closed()).cloned().collect();
    oscr(&closed, &open)
}

/// Static train-time augmentation: originals plus one perturbed copy per
/// image at a random strength below the cap.
fn immunize_dataset(
    data: &LoadedDataset,
    kind: PerturbKind,
    cap: f64,
    seed: u64,
) -> Result<LoadedDataset> {
    use rand::Rng;
    let mut rng = osma_core::util::rng_from(seed, &[b"immunize"]);
    let mut images = data.images.clone();
    let mut labels = data.labels.clone();
    for (i, img) in data.images.iter().enumerate() {
        // "harder" means lower for jpeg quality and crop fraction
        let s = match kind {
            PerturbKind::Jpeg => rng.random_range(cap..=100.0_f64),
            PerturbKind::CropResize => rng.random_range(cap..=1.0_f64),
            _ => rng.random_range(0.0..=cap),
        };
        let noise_seed = derive_seed(seed, &[b"img", &(i as u64).to_le_bytes()]);
        images.push(perturb(img, kind, s, noise_seed)?);
        labels.push(data.labels[i]);
    }
    let mut by_class = vec![Vec::new(); data.k];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    Ok(LoadedDataset { images, labels, by_class, k: data.k, input_size: data.input_size })
}

fn cmd_robustness(
    run: &Path,
    manifest_path: &Path,
    kind: &str,
    strengths: &str,
    immunized: bool,
    out: Option<String>,
) -> Result<()> {
    let kind: PerturbKind = kind.parse()?;
    let strengths: Vec<f64> = strengths
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidParameter(format!("bad strength {s}")))
        })
        .collect::<Result<_>>()?;
    if strengths.is_empty() {
        return Err(Error::InvalidParameter("need at least one strength".into()));
    }
    let (task, manifest, split) = load_run_and_split(run, manifest_path)?;

    let immunized_task = if immunized {
        let cfg: TrainRunConfig = read_json(&run.join("resolved_config.json"))?;
        let manifest_dir = base_dir(Some(manifest_path));
        let data = load_train_split(&manifest, &manifest_dir)?;
        let cap = match kind {
            PerturbKind::Jpeg => strengths.iter().copied().fold(100.0, f64::min),
            PerturbKind::CropResize => strengths
                .iter()
                .copied()
                .filter(|&s| s > 0.0)
                .fold(1.0, f64::min),
            _ => strengths.iter().copied().fold(0.0, f64::max),
        };
        let aug_data = immunize_dataset(&data, kind, cap, cfg.train.seed)?;
        println!(
            "retraining immunized arm ({} images, cap {cap})",
            aug_data.images.len()
        );
        let state = train_pose(&aug_data, &cfg.train, cfg.mode, None)?;
        Some(state.task)
    } else {
        None
    };

    let mut rows: Vec<(f64, f64, Option<f64>)> = Vec::new();
    for &s in &strengths {
        let records = records_under_perturbation(&task, &split, kind, s)?;
        let o = oscr_of(&records)?;
        let oi = match &immunized_task {
            Some(t) => {
                let records = records_under_perturbation(t, &split, kind, s)?;
                Some(oscr_of(&records)?)
            }
            None => None,
        };
        rows.push((s, o, oi));
    }

    let mut csv = String::from(if immunized {
        "strength,oscr,oscr_immunized\n"
    } else {
        "strength,oscr\n"
    });
    println!("{} robustness ({})", kind.tag(), run.display());
    for (s, o, oi) in &rows {
        match oi {
            Some(oi) => {
                csv.push_str(&format!("{s},{o},{oi}\n"));
                println!("  strength {s:>8}: oscr {o:.4}  immunized {oi:.4}");
            }
            None => {
                csv.push_str(&format!("{s},{o}\n"));
                println!("  strength {s:>8}: oscr {o:.4}");
            }
        }
    }
    // reported, not asserted: small desk runs are noisy
    let monotone = rows.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-9);
    println!("  monotone degradation: {}", if monotone { "yes" } else { "no" });

    let out_dir = match out {
        Some(o) => resolve_output(Path::new("."), &o),
        None => run.join("robustness"),
    };
    std::fs::create_dir_all(&out_dir)?;
    write_text(&out_dir.join(format!("oscr_vs_{}.csv", kind.tag())), &csv)?;
    let mut series = vec![plot::Series {
        label: "original".into(),
        points: rows.iter().map(|&(s, o, _)| (s, o)).collect(),
    }];
    if immunized {
        series.push(plot::Series {
            label: "immunized".into(),
            points: rows.iter().filter_map(|&(s, _, oi)| oi.map(|v| (s, v))).collect(),
        });
    }
    plot::line_chart(
        &out_dir.join(format!("oscr_vs_{}.svg", kind.tag())),
        &format!("OSCR vs {} strength", kind.tag()),
        "strength",
        "OSCR",
        &series,
    )?;
    println!("artifacts in {}", out_dir.display());
    Ok(())
}
