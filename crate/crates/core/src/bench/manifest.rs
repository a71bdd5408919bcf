//! The benchmark manifest: one JSONL record per image, binding paths to
//! class labels, splits, and unseen-type tags.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Openness {
    Seen,
    Unseen,
}

/// Which open-set axis an unseen record exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnseenType {
    None,
    Seed,
    Architecture,
    Dataset,
}

impl UnseenType {
    pub const OPEN: [UnseenType; 3] = [UnseenType::Seed, UnseenType::Architecture, UnseenType::Dataset];

    pub fn tag(&self) -> &'static str {
        match self {
            UnseenType::None => "none",
            UnseenType::Seed => "seed",
            UnseenType::Architecture => "architecture",
            UnseenType::Dataset => "dataset",
        }
    }
}

pub const UNKNOWN_CLASS: i64 = -1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub image_path: String,
    pub class_name: String,
    /// Known class index, or -1 for unknown-model records.
    pub known_class_id: i64,
    pub split: Split,
    pub openness: Openness,
    pub unseen_type: UnseenType,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkManifest {
    pub records: Vec<ManifestRecord>,
    pub global_seed: u64,
    pub k: usize,
}

impl BenchmarkManifest {
    pub fn new(records: Vec<ManifestRecord>, global_seed: u64) -> Self {
        let k = records
            .iter()
            .map(|r| r.known_class_id + 1)
            .max()
            .unwrap_or(0)
            .max(0) as usize;
        BenchmarkManifest { records, global_seed, k }
    }

    /// Structural invariants every emitted manifest must satisfy.
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidSpec("manifest needs at least 2 known classes".into()));
        }
        let mut has_real = false;
        for (i, r) in self.records.iter().enumerate() {
            let err = |msg: String| Err(Error::InvalidSpec(format!("record {i}: {msg}")));
            match r.openness {
                Openness::Unseen => {
                    if r.unseen_type == UnseenType::None {
                        return err("unseen record with unseen_type none".into());
                    }
                    if r.known_class_id != UNKNOWN_CLASS {
                        return err("unseen record with a known class id".into());
                    }
                    if r.split == Split::Train {
                        return err("unseen record in the train split".into());
                    }
                }
                Openness::Seen => {
                    if r.known_class_id < 0 || r.known_class_id as usize >= self.k {
                        return err(format!("seen record with class id {}", r.known_class_id));
                    }
                }
            }
            if r.known_class_id == 0 {
                has_real = true;
                if !r.class_name.starts_with("real") {
                    return err(format!("class 0 must be the real class, got {}", r.class_name));
                }
            }
        }
        if !has_real {
            return Err(Error::InvalidSpec("no real (class 0) records".into()));
        }
        Ok(())
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for r in &self.records {
            serde_json::to_writer(&mut f, r)?;
            f.write_all(b"\n")?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut records = Vec::new();
        for line in f.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line)?);
        }
        Ok(BenchmarkManifest::new(records, 0))
    }

    pub fn train_records(&self) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(|r| r.split == Split::Train)
    }

    pub fn test_records(&self) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(|r| r.split == Split::Test)
    }
}

/// FNV-1a checksum of a file's bytes; used for the rerun-identity notice.
pub fn file_checksum(path: &Path) -> Result<u64> {
    let bytes = std::fs::read(path)?;
    Ok(crate::util::fnv1a(&bytes))
}
