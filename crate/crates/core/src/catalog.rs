//! Dataset catalogs and deterministic split construction.
//!
//! A catalog is a line-delimited JSON manifest of image records. Splits are
//! built with one seeded stream per class (derived from `(seed, purpose,
//! class)`), so selections are independent of class iteration order and
//! reproducible bit-for-bit.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};
use crate::rng::SplitMix64;

/// Which pool an image belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One real image with its label and split tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub class_label: String,
    pub path: String,
    pub split: Split,
}

/// Dataset-level configuration (one JSON object on disk).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub name: String,
    /// Dataset-level generic noun used in every prompt, e.g. "aircraft".
    pub descriptor: String,
    /// Ordered class list; order defines long-tail head→tail ranks.
    pub classes: Vec<String>,
    #[serde(default)]
    pub val_per_class: usize,
    /// Real-image duplication factor for long-tail assembly (long-tail only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duplication_factor_c: Option<u32>,
    /// Per-class total image budget for long-tail assembly.
    #[serde(rename = "total_budget_T", default = "default_total_budget")]
    pub total_budget_t: u32,
}

fn default_total_budget() -> u32 {
    200
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.descriptor.is_empty() {
            return Err(PipelineError::InvalidConfig {
                message: "descriptor is empty".into(),
            });
        }
        if self.classes.is_empty() {
            return Err(PipelineError::InvalidConfig {
                message: "class list is empty".into(),
            });
        }
        let mut seen = BTreeSet::new();
        for class in &self.classes {
            if !seen.insert(class) {
                return Err(PipelineError::InvalidConfig {
                    message: format!("duplicate class {class:?}"),
                });
            }
        }
        if self.total_budget_t == 0 {
            return Err(PipelineError::InvalidConfig {
                message: "total_budget_T must be positive".into(),
            });
        }
        if let Some(c) = self.duplication_factor_c {
            if c == 0 {
                return Err(PipelineError::InvalidConfig {
                    message: "duplication_factor_c must be positive".into(),
                });
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| PipelineError::io(path, e))?;
        let config: DatasetConfig = serde_json::from_slice(&bytes)?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| PipelineError::io(path, e))
    }
}

/// Per-class image counts following an exponential head→tail decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongTailProfile {
    pub imbalance_factor: f64,
    pub n_max: usize,
    pub per_class_counts: Vec<usize>,
}

impl LongTailProfile {
    /// Adopt explicit counts (e.g. the exact profile from prior work) in
    /// place of the formula-derived one.
    pub fn from_counts(counts: Vec<usize>) -> Result<Self> {
        if counts.len() < 2 {
            return Err(PipelineError::InvalidProfile {
                message: "need at least 2 classes".into(),
            });
        }
        if counts.contains(&0) {
            return Err(PipelineError::InvalidProfile {
                message: "all counts must be >= 1".into(),
            });
        }
        if counts.windows(2).any(|w| w[0] < w[1]) {
            return Err(PipelineError::InvalidProfile {
                message: "counts must be non-increasing head to tail".into(),
            });
        }
        let n_max = counts[0];
        let n_min = *counts.last().expect("len checked") as f64;
        Ok(LongTailProfile {
            imbalance_factor: n_max as f64 / n_min,
            n_max,
            per_class_counts: counts,
        })
    }
}

/// Exponential long-tail profile:
/// `count_i = max(1, round(n_max * IF^(-i / (n_classes - 1))))`.
pub fn long_tail_counts(
    n_max: usize,
    imbalance_factor: f64,
    n_classes: usize,
) -> Result<LongTailProfile> {
    if n_max < 1 {
        return Err(PipelineError::InvalidProfile {
            message: "n_max must be >= 1".into(),
        });
    }
    if !imbalance_factor.is_finite() || imbalance_factor < 1.0 {
        return Err(PipelineError::InvalidProfile {
            message: format!("imbalance_factor must be >= 1, got {imbalance_factor}"),
        });
    }
    if n_classes < 2 {
        return Err(PipelineError::InvalidProfile {
            message: "n_classes must be >= 2".into(),
        });
    }
    let counts = (0..n_classes)
        .map(|rank| {
            let exponent = -(rank as f64) / (n_classes as f64 - 1.0);
            let raw = n_max as f64 * imbalance_factor.powf(exponent);
            (raw.round() as usize).max(1)
        })
        .collect();
    Ok(LongTailProfile {
        imbalance_factor,
        n_max,
        per_class_counts: counts,
    })
}

/// Replace path-hostile characters in a class label for filesystem use
/// ("F/A-18" → "F-A-18"). Manifests keep the original label.
pub fn sanitize_class_for_filename(label: &str) -> String {
    label.replace('/', "-")
}

/// Header line for stage-emitted catalog artifacts. User-provided manifests
/// have no header; stage outputs carry one with the upstream digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogHeader {
    pub kind: String,
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upstream_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// A validated catalog: records checked for id uniqueness and known classes,
/// file order preserved.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetCatalog {
    records: Vec<ImageRecord>,
    header: Option<CatalogHeader>,
}

impl DatasetCatalog {
    pub fn from_records(records: Vec<ImageRecord>, config: &DatasetConfig) -> Result<Self> {
        Self::build(records, None, config)
    }

    fn build(
        records: Vec<ImageRecord>,
        header: Option<CatalogHeader>,
        config: &DatasetConfig,
    ) -> Result<Self> {
        let classes: BTreeSet<&String> = config.classes.iter().collect();
        let mut seen = BTreeSet::new();
        for record in &records {
            if !seen.insert(record.image_id.clone()) {
                return Err(PipelineError::DuplicateImageId {
                    image_id: record.image_id.clone(),
                });
            }
            if !classes.contains(&record.class_label) {
                return Err(PipelineError::UnknownClass {
                    image_id: record.image_id.clone(),
                    class_label: record.class_label.clone(),
                });
            }
            if record.path.is_empty() {
                return Err(PipelineError::MalformedRecord {
                    line: 0,
                    message: format!("record {} has an empty path", record.image_id),
                });
            }
        }
        Ok(DatasetCatalog { records, header })
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn header(&self) -> Option<&CatalogHeader> {
        self.header.as_ref()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, image_id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.image_id == image_id)
    }

    /// Records of one class within one split pool, sorted by image_id.
    pub fn pool(&self, class_label: &str, split: Split) -> Vec<&ImageRecord> {
        let mut pool: Vec<&ImageRecord> = self
            .records
            .iter()
            .filter(|r| r.class_label == class_label && r.split == split)
            .collect();
        pool.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        pool
    }

    pub fn split_records(&self, split: Split) -> Vec<&ImageRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }
}

/// Load and validate a catalog manifest (headerless user file or
/// header-carrying stage artifact).
pub fn load_catalog(path: &Path, config: &DatasetConfig) -> Result<DatasetCatalog> {
    if !path.exists() {
        return Err(PipelineError::CatalogNotFound { path: path.into() });
    }
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    let mut header = None;
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| PipelineError::MalformedRecord {
                line: idx + 1,
                message: e.to_string(),
            })?;
        if idx == 0 && value.get("kind").is_some() {
            header = Some(serde_json::from_value(value).map_err(|e| {
                PipelineError::MalformedRecord {
                    line: idx + 1,
                    message: format!("bad header: {e}"),
                }
            })?);
            continue;
        }
        let record: ImageRecord =
            serde_json::from_value(value).map_err(|e| PipelineError::MalformedRecord {
                line: idx + 1,
                message: e.to_string(),
            })?;
        records.push(record);
    }
    if records.is_empty() {
        return Err(PipelineError::EmptyCatalog { path: path.into() });
    }
    DatasetCatalog::build(records, header, config)
}

/// Write a catalog artifact: optional header line followed by one record
/// per line, in record order.
pub fn save_catalog(
    path: &Path,
    records: &[ImageRecord],
    header: Option<&CatalogHeader>,
) -> Result<()> {
    let mut out = String::new();
    if let Some(header) = header {
        out.push_str(&serde_json::to_string(header)?);
        out.push('\n');
    }
    for record in records {
        out.push_str(&serde_json::to_string(record)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| PipelineError::io(path, e))
}

/// Per-class image selections, keyed by class label with image ids sorted.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub per_class: BTreeMap<String, Vec<String>>,
}

impl SplitAssignment {
    pub fn total(&self) -> usize {
        self.per_class.values().map(Vec::len).sum()
    }

    pub fn contains(&self, image_id: &str) -> bool {
        self.per_class
            .values()
            .any(|ids| ids.binary_search_by(|id| id.as_str().cmp(image_id)).is_ok())
    }

    pub fn ids(&self) -> impl Iterator<Item = &String> {
        self.per_class.values().flatten()
    }

    pub fn is_disjoint_from(&self, other: &SplitAssignment) -> bool {
        !self.ids().any(|id| other.contains(id))
    }
}

fn select_per_class(
    catalog: &DatasetCatalog,
    classes: &[String],
    pool_split: Split,
    exclude: Option<&SplitAssignment>,
    count_for: impl Fn(usize) -> usize,
    seed: u64,
    purpose: &str,
) -> Result<SplitAssignment> {
    let mut per_class = BTreeMap::new();
    for (rank, class) in classes.iter().enumerate() {
        let pool: Vec<&ImageRecord> = catalog
            .pool(class, pool_split)
            .into_iter()
            .filter(|r| exclude.is_none_or(|ex| !ex.contains(&r.image_id)))
            .collect();
        let want = count_for(rank);
        if pool.len() < want {
            return Err(PipelineError::InsufficientImages {
                class_label: class.clone(),
                requested: want,
                available: pool.len(),
            });
        }
        let mut rng = SplitMix64::stream(seed, &[purpose.as_bytes(), class.as_bytes()]);
        let picked = rng.sample_without_replacement(pool.len(), want);
        let ids: Vec<String> = picked
            .into_iter()
            .map(|i| pool[i].image_id.clone())
            .collect();
        per_class.insert(class.clone(), ids);
    }
    Ok(SplitAssignment { per_class })
}

/// Select exactly `k` train images per class by seeded uniform sampling
/// without replacement.
pub fn make_fewshot_split(
    catalog: &DatasetCatalog,
    config: &DatasetConfig,
    k: usize,
    seed: u64,
) -> Result<SplitAssignment> {
    select_per_class(
        catalog,
        &config.classes,
        Split::Train,
        None,
        |_| k,
        seed,
        "fewshot",
    )
}

/// Select `profile.per_class_counts[rank]` train images for the class at
/// each head→tail rank (rank = position in `config.classes`).
pub fn make_longtail_split(
    catalog: &DatasetCatalog,
    config: &DatasetConfig,
    profile: &LongTailProfile,
    seed: u64,
) -> Result<SplitAssignment> {
    if profile.per_class_counts.len() != config.classes.len() {
        return Err(PipelineError::InvalidProfile {
            message: format!(
                "profile has {} counts for {} classes",
                profile.per_class_counts.len(),
                config.classes.len()
            ),
        });
    }
    let counts = profile.per_class_counts.clone();
    select_per_class(
        catalog,
        &config.classes,
        Split::Train,
        None,
        move |rank| counts[rank],
        seed,
        "longtail",
    )
}

/// Select `per_class` validation images per class from `pool_split`,
/// disjoint from an existing train assignment.
pub fn make_validation_split(
    catalog: &DatasetCatalog,
    config: &DatasetConfig,
    train: &SplitAssignment,
    per_class: usize,
    seed: u64,
    pool_split: Split,
) -> Result<SplitAssignment> {
    select_per_class(
        catalog,
        &config.classes,
        pool_split,
        Some(train),
        |_| per_class,
        seed,
        "validation",
    )
}

/// Materialize split assignments as a new record list: the selected train
/// records (split=train), selected validation records (split=val), and the
/// catalog's original test records, in that order.
pub fn apply_splits(
    catalog: &DatasetCatalog,
    train: &SplitAssignment,
    val: &SplitAssignment,
) -> Vec<ImageRecord> {
    let mut out = Vec::with_capacity(train.total() + val.total());
    for (assignment, split) in [(train, Split::Train), (val, Split::Val)] {
        for ids in assignment.per_class.values() {
            for id in ids {
                if let Some(record) = catalog.get(id) {
                    let mut record = record.clone();
                    record.split = split;
                    out.push(record);
                }
            }
        }
    }
    for record in catalog.split_records(Split::Test) {
        if !train.contains(&record.image_id) && !val.contains(&record.image_id) {
            out.push(record.clone());
        }
    }
    out
}
