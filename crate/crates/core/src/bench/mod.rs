//! Synthetic open-set attribution benchmark: deterministic trace stamps
//! over procedural base corpora, with seen / unseen-seed /
//! unseen-architecture / unseen-dataset structure.

pub mod domains;
pub mod manifest;
pub mod perturb;
pub mod stamp;

pub use domains::{synth_base_corpus, synth_base_image, Domain};
pub use manifest::{
    file_checksum, BenchmarkManifest, ManifestRecord, Openness, Split, UnseenType, UNKNOWN_CLASS,
};
pub use perturb::{perturb, PerturbKind};
pub use stamp::{apply_trace, apply_trace_with, TraceStamp, DEFAULT_AMPLITUDE};

use crate::error::{Error, Result};
use crate::models::AugArchitecture;
use crate::util::{maybe_par_map, rng_from};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;

/// One synthetic source model in a split specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StampSpec {
    pub seed: u64,
    pub architecture_tag: String,
    pub base_domain: String,
}

impl StampSpec {
    fn new(seed: u64, architecture_tag: &str, base_domain: &str) -> Self {
        StampSpec {
            seed,
            architecture_tag: architecture_tag.into(),
            base_domain: base_domain.into(),
        }
    }

    fn to_stamp(&self, amplitude: f64) -> Result<TraceStamp> {
        Ok(TraceStamp {
            seed: self.seed,
            architecture_tag: AugArchitecture::from_tag(&self.architecture_tag)?,
            amplitude,
            base_domain: self.base_domain.parse()?,
        })
    }
}

fn default_input_size() -> usize {
    32
}
fn default_amplitude() -> f64 {
    DEFAULT_AMPLITUDE
}
fn default_train_per_class() -> usize {
    200
}
fn default_test_per_class() -> usize {
    100
}
fn default_unseen_real_count() -> usize {
    100
}
fn default_real_domains() -> Vec<String> {
    vec!["plasma".into(), "shapes".into()]
}
fn default_unseen_real_domain() -> String {
    "waves".into()
}
fn default_seen() -> Vec<StampSpec> {
    vec![
        StampSpec::new(101, "conv2_k3", "plasma"),
        StampSpec::new(102, "conv2_k3", "shapes"),
        StampSpec::new(103, "conv2_k3", "plasma"),
        StampSpec::new(104, "conv2_k3", "shapes"),
    ]
}
fn default_unseen_seed() -> Vec<StampSpec> {
    vec![
        StampSpec::new(201, "conv2_k3", "plasma"),
        StampSpec::new(202, "conv2_k3", "shapes"),
        StampSpec::new(203, "conv2_k3", "plasma"),
        StampSpec::new(204, "conv2_k3", "shapes"),
    ]
}
fn default_unseen_architecture() -> Vec<StampSpec> {
    vec![
        StampSpec::new(301, "conv1_k3", "plasma"),
        StampSpec::new(302, "conv3_k3", "shapes"),
        StampSpec::new(303, "conv2_k5", "plasma"),
        StampSpec::new(304, "up_down", "shapes"),
    ]
}
fn default_unseen_dataset() -> Vec<StampSpec> {
    vec![
        StampSpec::new(101, "conv2_k3", "mosaic"),
        StampSpec::new(102, "conv2_k3", "mosaic"),
        StampSpec::new(103, "conv2_k3", "mosaic"),
        StampSpec::new(104, "conv2_k3", "mosaic"),
    ]
}

/// Split specification. The defaults describe the desk-scale benchmark:
/// K = 5 known classes (real plus four seen stamps), four unseen stamps
/// per open-set type, 200 train / 100 test images per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub global_seed: u64,
    pub input_size: usize,
    pub amplitude: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub unseen_real_count: usize,
    pub real_domains: Vec<String>,
    pub unseen_real_domain: String,
    pub seen: Vec<StampSpec>,
    pub unseen_seed: Vec<StampSpec>,
    pub unseen_architecture: Vec<StampSpec>,
    pub unseen_dataset: Vec<StampSpec>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            global_seed: 0,
            input_size: default_input_size(),
            amplitude: default_amplitude(),
            train_per_class: default_train_per_class(),
            test_per_class: default_test_per_class(),
            unseen_real_count: default_unseen_real_count(),
            real_domains: default_real_domains(),
            unseen_real_domain: default_unseen_real_domain(),
            seen: default_seen(),
            unseen_seed: default_unseen_seed(),
            unseen_architecture: default_unseen_architecture(),
            unseen_dataset: default_unseen_dataset(),
        }
    }
}

impl SplitSpec {
    pub fn desk_default(global_seed: u64) -> Self {
        SplitSpec { global_seed, ..Default::default() }
    }

    pub fn num_known_classes(&self) -> usize {
        1 + self.seen.len()
    }

    /// Checks the sharing constraints that make each unseen type
    /// meaningful.
    pub fn validate(&self) -> Result<()> {
        if self.seen.is_empty() {
            return Err(Error::InvalidSpec("need at least one seen stamp".into()));
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::InvalidSpec("per-class counts must be >= 1".into()));
        }
        if self.input_size < 8 || self.input_size % 2 != 0 {
            return Err(Error::InvalidSpec("input size must be even and >= 8".into()));
        }
        if !(self.amplitude > 0.0 && self.amplitude <= 0.1) {
            return Err(Error::InvalidSpec("amplitude must be in (0, 0.1]".into()));
        }
        let real_domains: Vec<Domain> = self
            .real_domains
            .iter()
            .map(|d| d.parse())
            .collect::<Result<_>>()?;
        if real_domains.is_empty() {
            return Err(Error::InvalidSpec("need at least one real domain".into()));
        }
        let unseen_real: Domain = self.unseen_real_domain.parse()?;
        if real_domains.contains(&unseen_real) {
            return Err(Error::InvalidSpec(
                "unseen real domain overlaps the seen real domains".into(),
            ));
        }

        let seen: Vec<TraceStamp> = self
            .seen
            .iter()
            .map(|s| s.to_stamp(self.amplitude))
            .collect::<Result<_>>()?;
        let mut identities = BTreeSet::new();
        for s in &seen {
            if !real_domains.contains(&s.base_domain) {
                return Err(Error::InvalidSpec(format!(
                    "seen stamp domain {} is not a seen real domain",
                    s.base_domain
                )));
            }
            if !identities.insert(format!("{:?}", s.identity())) {
                return Err(Error::InvalidSpec("duplicate stamp identity".into()));
            }
        }
        let seen_archs: BTreeSet<String> = seen.iter().map(|s| s.architecture_tag.tag()).collect();
        let seen_domains: BTreeSet<Domain> = seen.iter().map(|s| s.base_domain).collect();

        for spec in &self.unseen_seed {
            let s = spec.to_stamp(self.amplitude)?;
            let shares = seen.iter().any(|k| {
                k.architecture_tag == s.architecture_tag
                    && k.base_domain == s.base_domain
                    && k.seed != s.seed
            });
            if !shares {
                return Err(Error::InvalidSpec(format!(
                    "unseen-seed stamp {spec:?} must share architecture and domain with a seen stamp and differ in seed"
                )));
            }
            if !identities.insert(format!("{:?}", s.identity())) {
                return Err(Error::InvalidSpec("duplicate stamp identity".into()));
            }
        }
        for spec in &self.unseen_architecture {
            let s = spec.to_stamp(self.amplitude)?;
            if !seen_domains.contains(&s.base_domain) {
                return Err(Error::InvalidSpec(format!(
                    "unseen-architecture stamp {spec:?} must share a seen base domain"
                )));
            }
            if seen_archs.contains(&s.architecture_tag.tag()) {
                return Err(Error::InvalidSpec(format!(
                    "unseen-architecture stamp {spec:?} reuses a seen architecture"
                )));
            }
            if !identities.insert(format!("{:?}", s.identity())) {
                return Err(Error::InvalidSpec("duplicate stamp identity".into()));
            }
        }
        for spec in &self.unseen_dataset {
            let s = spec.to_stamp(self.amplitude)?;
            let shares = seen
                .iter()
                .any(|k| k.seed == s.seed && k.architecture_tag == s.architecture_tag);
            if !shares {
                return Err(Error::InvalidSpec(format!(
                    "unseen-dataset stamp {spec:?} must share (seed, architecture) with a seen stamp"
                )));
            }
            if seen_domains.contains(&s.base_domain) {
                return Err(Error::InvalidSpec(format!(
                    "unseen-dataset stamp {spec:?} must use an unseen base domain"
                )));
            }
            if !identities.insert(format!("{:?}", s.identity())) {
                return Err(Error::InvalidSpec("duplicate stamp identity".into()));
            }
        }
        Ok(())
    }
}

struct ClassPlan {
    name: String,
    known_id: i64,
    stamp: Option<TraceStamp>,
    domains: Vec<Domain>,
    train: usize,
    test: usize,
    openness: Openness,
    unseen_type: UnseenType,
}

fn class_plans(spec: &SplitSpec) -> Result<Vec<ClassPlan>> {
    let real_domains: Vec<Domain> = spec
        .real_domains
        .iter()
        .map(|d| d.parse())
        .collect::<Result<_>>()?;
    let mut plans = vec![ClassPlan {
        name: "real".into(),
        known_id: 0,
        stamp: None,
        domains: real_domains,
        train: spec.train_per_class,
        test: spec.test_per_class,
        openness: Openness::Seen,
        unseen_type: UnseenType::None,
    }];
    if spec.unseen_real_count > 0 {
        plans.push(ClassPlan {
            name: "real_unseen".into(),
            known_id: 0,
            stamp: None,
            domains: vec![spec.unseen_real_domain.parse()?],
            train: 0,
            test: spec.unseen_real_count,
            openness: Openness::Seen,
            unseen_type: UnseenType::None,
        });
    }
    for (i, s) in spec.seen.iter().enumerate() {
        let stamp = s.to_stamp(spec.amplitude)?;
        plans.push(ClassPlan {
            name: format!(
                "seen_fake{}_s{}_{}_{}",
                i + 1,
                s.seed,
                s.architecture_tag,
                s.base_domain
            ),
            known_id: (i + 1) as i64,
            stamp: Some(stamp),
            domains: vec![stamp.base_domain],
            train: spec.train_per_class,
            test: spec.test_per_class,
            openness: Openness::Seen,
            unseen_type: UnseenType::None,
        });
    }
    let groups = [
        ("unseen_seed", &spec.unseen_seed, UnseenType::Seed),
        ("unseen_arch", &spec.unseen_architecture, UnseenType::Architecture),
        ("unseen_data", &spec.unseen_dataset, UnseenType::Dataset),
    ];
    for (prefix, list, ty) in groups {
        for (i, s) in list.iter().enumerate() {
            let stamp = s.to_stamp(spec.amplitude)?;
            plans.push(ClassPlan {
                name: format!(
                    "{prefix}{}_s{}_{}_{}",
                    i + 1,
                    s.seed,
                    s.architecture_tag,
                    s.base_domain
                ),
                known_id: UNKNOWN_CLASS,
                stamp: Some(stamp),
                domains: vec![stamp.base_domain],
                train: 0,
                test: spec.test_per_class,
                openness: Openness::Unseen,
                unseen_type: ty,
            });
        }
    }
    Ok(plans)
}

/// Generates every image of a class plan. Per-image randomness derives
/// from `(global_seed, class_name, index)` so generation order does not
/// matter.
fn generate_class(
    spec: &SplitSpec,
    plan: &ClassPlan,
) -> Vec<(usize, crate::image::ImageTensor)> {
    let network = plan.stamp.map(|s| s.network());
    let total = plan.train + plan.test;
    let indices: Vec<usize> = (0..total).collect();
    maybe_par_map(&indices, |&j| {
        let mut rng = rng_from(
            spec.global_seed,
            &[plan.name.as_bytes(), &(j as u64).to_le_bytes()],
        );
        let domain = plan.domains[j % plan.domains.len()];
        let base = synth_base_image(domain, spec.input_size, &mut rng);
        let img = match (&network, plan.stamp) {
            (Some(net), Some(stamp)) => apply_trace_with(net, stamp.amplitude, &base),
            _ => base,
        };
        (j, img)
    })
}

/// Builds the benchmark under `out_dir`: lossless PNGs plus
/// `manifest.jsonl`. Returns the validated manifest.
pub fn build_benchmark(spec: &SplitSpec, out_dir: &Path) -> Result<BenchmarkManifest> {
    spec.validate()?;
    let plans = class_plans(spec)?;
    let image_root = out_dir.join("images");
    let mut records = Vec::new();
    for plan in &plans {
        let class_dir = image_root.join(&plan.name);
        std::fs::create_dir_all(&class_dir)?;
        let images = generate_class(spec, plan);
        for (j, img) in images {
            let rel = format!("images/{}/{:04}.png", plan.name, j);
            img.save_png(&out_dir.join(&rel))?;
            records.push(ManifestRecord {
                image_path: rel,
                class_name: plan.name.clone(),
                known_class_id: plan.known_id,
                split: if j < plan.train { Split::Train } else { Split::Test },
                openness: plan.openness,
                unseen_type: plan.unseen_type,
            });
        }
    }
    let m = BenchmarkManifest::new(records, spec.global_seed);
    m.validate()?;
    m.write_jsonl(&out_dir.join("manifest.jsonl"))?;
    Ok(m)
}
