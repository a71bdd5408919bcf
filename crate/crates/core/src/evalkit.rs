//! Inference with rejection and the evaluation metrics: closed-set
//! accuracy, known/unknown AUC, OSCR, clustering purity/NMI/ARI, and
//! confidence histograms.

use crate::bench::UnseenType;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::losses::softmax;
use crate::models::{ForwardMode, TaskModel};
use crate::util::rng_from;
use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::Serialize;
use std::collections::BTreeMap;

/// Outcome of thresholded prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prediction {
    Known(usize),
    Unknown,
}

/// Per-image evaluation record.
#[derive(Debug, Clone)]
pub struct PredictionRecord {
    pub scores: Vec<f64>,
    pub confidence: f64,
    pub predicted: usize,
    /// `None` marks an unknown-model record.
    pub true_label: Option<usize>,
    pub unseen_type: UnseenType,
}

impl PredictionRecord {
    pub fn from_scores(scores: Vec<f64>, true_label: Option<usize>, unseen_type: UnseenType) -> Self {
        let (predicted, confidence) = scores
            .iter()
            .enumerate()
            .fold((0usize, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                if v > bv {
                    (i, v)
                } else {
                    (bi, bv)
                }
            });
        PredictionRecord { scores, confidence, predicted, true_label, unseen_type }
    }

    pub fn is_closed(&self) -> bool {
        self.true_label.is_some()
    }
}

/// Softmax scores of a task model on one image (evaluation mode).
pub fn score_image(task: &TaskModel, x: &ImageTensor) -> Vec<f64> {
    let (logits, _) = task.forward(&x.0, ForwardMode::Eval);
    softmax(logits.view()).to_vec()
}

/// Max-softmax prediction with rejection threshold `theta`. Confidence
/// exactly at the threshold counts as known.
pub fn predict(task: &TaskModel, x: &ImageTensor, theta: f64) -> Result<Prediction> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::InvalidParameter(format!("theta {theta} outside [0,1]")));
    }
    let scores = score_image(task, x);
    let record = PredictionRecord::from_scores(scores, None, UnseenType::None);
    Ok(if record.confidence >= theta {
        Prediction::Known(record.predicted)
    } else {
        Prediction::Unknown
    })
}

/// Threshold-free fraction of closed-set records whose argmax matches the
/// true label.
pub fn closed_set_accuracy(records: &[PredictionRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of an empty record set".into()));
    }
    let mut correct = 0usize;
    for r in records {
        let label = r
            .true_label
            .ok_or_else(|| Error::InvalidInput("closed-set record without a true label".into()))?;
        if r.predicted == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / records.len() as f64)
}

/// Mann-Whitney AUC of closed-set confidence against open-set confidence:
/// `P(closed > open) + 0.5 * P(tie)`, computed by rank aggregation.
pub fn auc_known_unknown(confidences_closed: &[f64], confidences_open: &[f64]) -> Result<f64> {
    if confidences_closed.is_empty() || confidences_open.is_empty() {
        return Err(Error::UndefinedMetric("AUC of an empty score list".into()));
    }
    let n_c = confidences_closed.len();
    let n_o = confidences_open.len();
    let mut merged: Vec<(f64, bool)> = confidences_closed
        .iter()
        .map(|&c| (c, true))
        .chain(confidences_open.iter().map(|&c| (c, false)))
        .collect();
    merged.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite confidences"));

    // average ranks over tie groups
    let mut rank_sum_closed = 0.0;
    let mut i = 0;
    while i < merged.len() {
        let mut j = i;
        while j < merged.len() && merged[j].0 == merged[i].0 {
            j += 1;
        }
        let avg_rank = ((i + 1 + j) as f64) / 2.0; // ranks are 1-based
        for item in &merged[i..j] {
            if item.1 {
                rank_sum_closed += avg_rank;
            }
        }
        i = j;
    }
    let u = rank_sum_closed - (n_c * (n_c + 1)) as f64 / 2.0;
    Ok(u / (n_c as f64 * n_o as f64))
}

/// Open Set Classification Rate: area under CCR(theta) vs FPR(theta),
/// integrated by trapezoid over every observed confidence plus the {0, 1}
/// endpoints.
pub fn oscr(records_closed: &[PredictionRecord], records_open: &[PredictionRecord]) -> Result<f64> {
    let points = oscr_curve(records_closed, records_open)?;
    let mut area = 0.0;
    for w in points.windows(2) {
        let (x0, y0) = w[0];
        let (x1, y1) = w[1];
        area += (x1 - x0) * (y0 + y1) / 2.0;
    }
    Ok(area)
}

/// The (FPR, CCR) points behind [`oscr`], sorted by FPR.
pub fn oscr_curve(
    records_closed: &[PredictionRecord],
    records_open: &[PredictionRecord],
) -> Result<Vec<(f64, f64)>> {
    if records_closed.is_empty() || records_open.is_empty() {
        return Err(Error::UndefinedMetric("OSCR of an empty record set".into()));
    }
    for r in records_closed {
        if r.true_label.is_none() {
            return Err(Error::InvalidInput("closed-set record without a true label".into()));
        }
    }
    let mut thresholds: Vec<f64> = records_closed
        .iter()
        .chain(records_open.iter())
        .map(|r| r.confidence)
        .chain([0.0, 1.0])
        .collect();
    thresholds.sort_by(|a, b| a.partial_cmp(b).expect("finite confidences"));
    thresholds.dedup();

    // sort once, sweep thresholds with binary-searchable cumulative counts
    let mut closed: Vec<(f64, bool)> = records_closed
        .iter()
        .map(|r| (r.confidence, r.predicted == r.true_label.unwrap()))
        .collect();
    closed.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let correct_suffix: Vec<usize> = {
        let mut suffix = vec![0usize; closed.len() + 1];
        for i in (0..closed.len()).rev() {
            suffix[i] = suffix[i + 1] + usize::from(closed[i].1);
        }
        suffix
    };
    let mut open_conf: Vec<f64> = records_open.iter().map(|r| r.confidence).collect();
    open_conf.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let n_c = records_closed.len() as f64;
    let n_o = records_open.len() as f64;
    let mut points: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&t| {
            let ci = closed.partition_point(|&(c, _)| c < t);
            let ccr = correct_suffix[ci] as f64 / n_c;
            let oi = open_conf.partition_point(|&c| c < t);
            let fpr = (open_conf.len() - oi) as f64 / n_o;
            (fpr, ccr)
        })
        .collect();
    points.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(points)
}

// ---------------------------------------------------------------------------
// Clustering metrics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClusterScores {
    pub purity: f64,
    pub nmi: f64,
    pub ari: f64,
}

/// Seeded farthest-point k-means (single restart, 100-iteration cap)
/// followed by purity, NMI, and ARI against the true labels.
pub fn cluster_metrics(
    features: ArrayView2<f64>,
    true_labels: &[usize],
    k: usize,
    seed: u64,
) -> Result<ClusterScores> {
    let n = features.nrows();
    if k < 2 {
        return Err(Error::InvalidParameter("k must be >= 2".into()));
    }
    if k > n {
        return Err(Error::InvalidParameter(format!("k = {k} exceeds sample count {n}")));
    }
    if true_labels.len() != n {
        return Err(Error::InvalidInput("label count must match feature rows".into()));
    }
    let assignments = kmeans_assign(features, k, seed);
    Ok(scores_from_contingency(&assignments, true_labels, k))
}

fn kmeans_assign(features: ArrayView2<f64>, k: usize, seed: u64) -> Vec<usize> {
    let n = features.nrows();
    let d = features.ncols();
    let mut rng = rng_from(seed, &[b"kmeans"]);

    // farthest-point init
    let mut centroids = Array2::zeros((k, d));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&features.row(first));
    let mut min_d2 = vec![f64::INFINITY; n];
    for c in 1..k {
        for i in 0..n {
            let diff = &features.row(i) - &centroids.row(c - 1);
            min_d2[i] = min_d2[i].min(diff.dot(&diff));
        }
        let far = (0..n)
            .max_by(|&a, &b| min_d2[a].partial_cmp(&min_d2[b]).unwrap().then(b.cmp(&a)))
            .unwrap();
        centroids.row_mut(c).assign(&features.row(far));
    }

    let mut assignments = vec![0usize; n];
    for _ in 0..100 {
        let mut changed = false;
        for i in 0..n {
            let mut best = (0usize, f64::INFINITY);
            for c in 0..k {
                let diff = &features.row(i) - &centroids.row(c);
                let d2 = diff.dot(&diff);
                if d2 < best.1 {
                    best = (c, d2);
                }
            }
            if assignments[i] != best.0 {
                assignments[i] = best.0;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut counts = vec![0usize; k];
        let mut sums = Array2::<f64>::zeros((k, d));
        for i in 0..n {
            counts[assignments[i]] += 1;
            let mut row = sums.row_mut(assignments[i]);
            row += &features.row(i);
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids
                    .row_mut(c)
                    .assign(&(&sums.row(c) / counts[c] as f64));
            }
            // empty clusters keep their previous centroid
        }
    }
    assignments
}

fn comb2(x: usize) -> f64 {
    (x as f64) * (x as f64 - 1.0) / 2.0
}

fn scores_from_contingency(clusters: &[usize], labels: &[usize], k: usize) -> ClusterScores {
    let n = clusters.len();
    let label_ids: BTreeMap<usize, usize> = {
        let mut uniq: Vec<usize> = labels.to_vec();
        uniq.sort_unstable();
        uniq.dedup();
        uniq.into_iter().enumerate().map(|(i, l)| (l, i)).collect()
    };
    let l = label_ids.len();
    let mut table = vec![vec![0usize; l]; k];
    for (&c, &lab) in clusters.iter().zip(labels) {
        table[c][label_ids[&lab]] += 1;
    }
    let cluster_sizes: Vec<usize> = table.iter().map(|row| row.iter().sum()).collect();
    let mut label_sizes = vec![0usize; l];
    for row in &table {
        for (j, &v) in row.iter().enumerate() {
            label_sizes[j] += v;
        }
    }

    let purity = table
        .iter()
        .map(|row| *row.iter().max().unwrap_or(&0))
        .sum::<usize>() as f64
        / n as f64;

    // mutual information and entropies (natural log)
    let nf = n as f64;
    let mut mi = 0.0;
    for (c, row) in table.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if v > 0 {
                let p = v as f64 / nf;
                mi += p * (p / (cluster_sizes[c] as f64 / nf * label_sizes[j] as f64 / nf)).ln();
            }
        }
    }
    let h = |sizes: &[usize]| -> f64 {
        sizes
            .iter()
            .filter(|&&s| s > 0)
            .map(|&s| {
                let p = s as f64 / nf;
                -p * p.ln()
            })
            .sum()
    };
    let hc = h(&cluster_sizes);
    let hl = h(&label_sizes);
    let denom = (hc + hl) / 2.0;
    let nmi = if denom > 0.0 { mi / denom } else { 0.0 };

    // adjusted Rand index
    let index: f64 = table
        .iter()
        .flat_map(|row| row.iter())
        .map(|&v| comb2(v))
        .sum();
    let sum_a: f64 = cluster_sizes.iter().map(|&s| comb2(s)).sum();
    let sum_b: f64 = label_sizes.iter().map(|&s| comb2(s)).sum();
    let total = comb2(n);
    let expected = if total > 0.0 { sum_a * sum_b / total } else { 0.0 };
    let max_index = (sum_a + sum_b) / 2.0;
    let ari = if (max_index - expected).abs() < 1e-15 {
        if (index - expected).abs() < 1e-15 {
            1.0
        } else {
            0.0
        }
    } else {
        (index - expected) / (max_index - expected)
    };

    ClusterScores { purity, nmi, ari }
}

// ---------------------------------------------------------------------------
// Histograms and the metrics report
// ---------------------------------------------------------------------------

/// Confidence histogram for one record group.
#[derive(Debug, Clone, Serialize)]
pub struct GroupHistogram {
    pub group: String,
    pub counts: Vec<usize>,
}

/// Bin counts over `[0,1]` for closed vs open records and per unseen
/// type. Counts partition each group.
pub fn confidence_histogram(records: &[PredictionRecord], bins: usize) -> Vec<GroupHistogram> {
    assert!(bins >= 2, "need at least 2 bins");
    let bin_of = |c: f64| -> usize { ((c * bins as f64) as usize).min(bins - 1) };
    let mut groups: Vec<(String, Vec<usize>)> = vec![
        ("closed".into(), vec![0; bins]),
        ("open".into(), vec![0; bins]),
    ];
    for ty in UnseenType::OPEN {
        groups.push((format!("open_{}", ty.tag()), vec![0; bins]));
    }
    for r in records {
        let b = bin_of(r.confidence);
        if r.is_closed() {
            groups[0].1[b] += 1;
        } else {
            groups[1].1[b] += 1;
            let idx = match r.unseen_type {
                UnseenType::Seed => 2,
                UnseenType::Architecture => 3,
                UnseenType::Dataset => 4,
                UnseenType::None => continue,
            };
            groups[idx].1[b] += 1;
        }
    }
    groups
        .into_iter()
        .map(|(group, counts)| GroupHistogram { group, counts })
        .collect()
}

/// The headline metric set. Serializes to a JSON document with exactly
/// the keys `accuracy`, `auc_seed`, `auc_architecture`, `auc_dataset`,
/// `auc_all`, `oscr_all`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub auc_seed: f64,
    pub auc_architecture: f64,
    pub auc_dataset: f64,
    pub auc_all: f64,
    pub oscr_all: f64,
    /// confusion[true][predicted] over closed-set records
    pub confusion: Vec<Vec<usize>>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Doc {
            accuracy: f64,
            auc_seed: f64,
            auc_architecture: f64,
            auc_dataset: f64,
            auc_all: f64,
            oscr_all: f64,
        }
        serde_json::to_string_pretty(&Doc {
            accuracy: self.accuracy,
            auc_seed: self.auc_seed,
            auc_architecture: self.auc_architecture,
            auc_dataset: self.auc_dataset,
            auc_all: self.auc_all,
            oscr_all: self.oscr_all,
        })
        .expect("serialize metrics")
    }

    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("true_class,predicted_class,count\n");
        for (t, row) in self.confusion.iter().enumerate() {
            for (p, &c) in row.iter().enumerate() {
                out.push_str(&format!("{t},{p},{c}\n"));
            }
        }
        out
    }
}

/// Computes the full report from closed- and open-set records.
pub fn evaluate(records: &[PredictionRecord], num_classes: usize) -> Result<MetricsReport> {
    let closed: Vec<&PredictionRecord> = records.iter().filter(|r| r.is_closed()).collect();
    let open: Vec<&PredictionRecord> = records.iter().filter(|r| !r.is_closed()).collect();
    if closed.is_empty() || open.is_empty() {
        return Err(Error::UndefinedMetric(
            "evaluation needs both closed and open records".into(),
        ));
    }
    let closed_owned: Vec<PredictionRecord> = closed.iter().map(|r| (*r).clone()).collect();
    let open_owned: Vec<PredictionRecord> = open.iter().map(|r| (*r).clone()).collect();

    let accuracy = closed_set_accuracy(&closed_owned)?;
    let closed_conf: Vec<f64> = closed.iter().map(|r| r.confidence).collect();
    let auc_for = |ty: UnseenType| -> Result<f64> {
        let conf: Vec<f64> = open
            .iter()
            .filter(|r| r.unseen_type == ty)
            .map(|r| r.confidence)
            .collect();
        if conf.is_empty() {
            return Err(Error::UndefinedMetric(format!(
                "no open records of unseen type {}",
                ty.tag()
            )));
        }
        auc_known_unknown(&closed_conf, &conf)
    };
    let auc_seed = auc_for(UnseenType::Seed)?;
    let auc_architecture = auc_for(UnseenType::Architecture)?;
    let auc_dataset = auc_for(UnseenType::Dataset)?;
    let open_conf: Vec<f64> = open.iter().map(|r| r.confidence).collect();
    let auc_all = auc_known_unknown(&closed_conf, &open_conf)?;
    let oscr_all = oscr(&closed_owned, &open_owned)?;

    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for r in &closed_owned {
        let t = r.true_label.unwrap();
        if t < num_classes && r.predicted < num_classes {
            confusion[t][r.predicted] += 1;
        }
    }

    Ok(MetricsReport { accuracy, auc_seed, auc_architecture, auc_dataset, auc_all, oscr_all, confusion })
}

// ---------------------------------------------------------------------------
// Test-split scoring pipeline
// ---------------------------------------------------------------------------

/// In-memory test split with per-image labels and unseen types.
pub struct TestSplit {
    pub images: Vec<ImageTensor>,
    pub true_labels: Vec<Option<usize>>,
    pub unseen_types: Vec<UnseenType>,
    pub class_names: Vec<String>,
}

/// Loads every test-split image referenced by a manifest, resolving paths
/// against `root`.
pub fn load_test_split(
    manifest: &crate::bench::BenchmarkManifest,
    root: &std::path::Path,
) -> Result<TestSplit> {
    let mut images = Vec::new();
    let mut true_labels = Vec::new();
    let mut unseen_types = Vec::new();
    let mut class_names = Vec::new();
    for r in manifest.test_records() {
        images.push(ImageTensor::load_png(&root.join(&r.image_path))?);
        true_labels.push(if r.known_class_id >= 0 {
            Some(r.known_class_id as usize)
        } else {
            None
        });
        unseen_types.push(r.unseen_type);
        class_names.push(r.class_name.clone());
    }
    if images.is_empty() {
        return Err(Error::Dataset("empty test split".into()));
    }
    Ok(TestSplit { images, true_labels, unseen_types, class_names })
}

/// Scores every test image with the task model (evaluation mode).
pub fn score_test_split(task: &TaskModel, split: &TestSplit) -> Vec<PredictionRecord> {
    let scores = crate::util::maybe_par_map(&split.images, |img| score_image(task, img));
    scores
        .into_iter()
        .zip(&split.true_labels)
        .zip(&split.unseen_types)
        .map(|((s, &label), &ty)| PredictionRecord::from_scores(s, label, ty))
        .collect()
}

/// Pooled extractor features for every image, row per image.
pub fn extract_features(task: &TaskModel, images: &[ImageTensor]) -> Array2<f64> {
    let feats = crate::util::maybe_par_map(images, |img| task.features(&img.0));
    let d = feats.first().map_or(0, |f| f.len());
    let mut out = Array2::zeros((feats.len(), d));
    for (i, f) in feats.iter().enumerate() {
        out.row_mut(i).assign(f);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(conf: f64, predicted: usize, true_label: Option<usize>, ty: UnseenType) -> PredictionRecord {
        let mut scores = vec![(1.0 - conf) / 2.0; 3];
        scores[predicted] = conf;
        PredictionRecord { scores, confidence: conf, predicted, true_label, unseen_type: ty }
    }

    #[test]
    fn record_confidence_is_max_score() {
        let r = PredictionRecord::from_scores(vec![0.2, 0.5, 0.3], Some(1), UnseenType::None);
        assert_eq!(r.predicted, 1);
        assert_eq!(r.confidence, 0.5);
        assert!((r.scores.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn accuracy_examples() {
        let all = vec![rec(0.9, 0, Some(0), UnseenType::None), rec(0.8, 1, Some(1), UnseenType::None)];
        assert_eq!(closed_set_accuracy(&all).unwrap(), 1.0);
        let none = vec![rec(0.9, 0, Some(1), UnseenType::None), rec(0.8, 1, Some(0), UnseenType::None)];
        assert_eq!(closed_set_accuracy(&none).unwrap(), 0.0);
        assert!(closed_set_accuracy(&[]).is_err());
    }

    #[test]
    fn auc_examples() {
        let closed = vec![0.9; 5];
        let open = vec![0.1; 7];
        assert_eq!(auc_known_unknown(&closed, &open).unwrap(), 1.0);
        let same = vec![0.5; 4];
        assert_eq!(auc_known_unknown(&same, &same).unwrap(), 0.5);
        assert!(auc_known_unknown(&[], &open).is_err());
    }

    #[test]
    fn oscr_perfect_and_zero_cases() {
        let closed = vec![rec(1.0, 0, Some(0), UnseenType::None); 4];
        let open = vec![rec(0.0, 1, None, UnseenType::Seed); 4];
        assert!((oscr(&closed, &open).unwrap() - 1.0).abs() < 1e-12);

        let wrong = vec![rec(0.9, 1, Some(0), UnseenType::None); 4];
        assert_eq!(oscr(&wrong, &open).unwrap(), 0.0);
    }

    #[test]
    fn predict_thresholds() {
        // constructed records stand in for model output here
        let r = PredictionRecord::from_scores(vec![0.9, 0.05, 0.05], None, UnseenType::None);
        assert!(r.confidence >= 0.5);
        let r = PredictionRecord::from_scores(vec![0.4, 0.3, 0.3], None, UnseenType::None);
        assert!(r.confidence < 0.5);
    }

    #[test]
    fn cluster_metrics_perfect_agreement() {
        let features = ndarray::arr2(&[
            [0.0, 0.0],
            [0.1, 0.0],
            [5.0, 5.0],
            [5.1, 5.0],
            [-5.0, 5.0],
            [-5.1, 5.0],
        ]);
        let labels = [0, 0, 1, 1, 2, 2];
        let s = cluster_metrics(features.view(), &labels, 3, 0).unwrap();
        assert!((s.purity - 1.0).abs() < 1e-12);
        assert!((s.nmi - 1.0).abs() < 1e-12);
        assert!((s.ari - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_single_cluster_scores() {
        // all points identical: k-means puts everything in one cluster
        let labels = [0usize, 0, 1, 1, 2, 2];
        let clusters = [0usize; 6];
        let s = scores_from_contingency(&clusters, &labels, 2);
        assert!((s.purity - 1.0 / 3.0).abs() < 1e-12);
        assert!(s.ari.abs() < 1e-12);
    }

    #[test]
    fn cluster_metrics_validates_k() {
        let features = ndarray::arr2(&[[0.0, 0.0], [1.0, 1.0]]);
        assert!(cluster_metrics(features.view(), &[0, 1], 1, 0).is_err());
        assert!(cluster_metrics(features.view(), &[0, 1], 3, 0).is_err());
    }

    #[test]
    fn histogram_partitions_records() {
        let records = vec![
            rec(0.9, 0, Some(0), UnseenType::None),
            rec(0.2, 1, Some(1), UnseenType::None),
            rec(0.6, 0, None, UnseenType::Seed),
            rec(1.0, 2, None, UnseenType::Dataset),
        ];
        let hists = confidence_histogram(&records, 2);
        let total_closed: usize = hists[0].counts.iter().sum();
        let total_open: usize = hists[1].counts.iter().sum();
        assert_eq!(total_closed, 2);
        assert_eq!(total_open, 2);
        // all confidences 1.0 land in the top bin
        let top = vec![rec(1.0, 0, Some(0), UnseenType::None); 3];
        let hists = confidence_histogram(&top, 4);
        assert_eq!(hists[0].counts[3], 3);
    }

    #[test]
    fn report_json_has_exact_keys() {
        let records = vec![
            rec(0.9, 0, Some(0), UnseenType::None),
            rec(0.4, 1, None, UnseenType::Seed),
            rec(0.3, 1, None, UnseenType::Architecture),
            rec(0.2, 1, None, UnseenType::Dataset),
        ];
        let report = evaluate(&records, 3).unwrap();
        let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        let mut keys: Vec<&str> = json.as_object().unwrap().keys().map(|s| s.as_str()).collect();
        keys.sort_unstable();
        assert_eq!(
            keys,
            vec!["accuracy", "auc_all", "auc_architecture", "auc_dataset", "auc_seed", "oscr_all"]
        );
    }
}
