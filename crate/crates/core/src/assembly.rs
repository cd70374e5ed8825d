//! Training-set assembly: mixing real and synthetic images into one
//! manifest, plus the weighted objective arithmetic.
//!
//! Few-shot runs replicate each real image so the real and synthetic
//! halves of the training stream land close to 50/50. Long-tail runs
//! duplicate real images by a constant factor and top every class up to a
//! fixed per-class total with synthetic images.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catalog::ImageRecord;
use crate::error::{PipelineError, Result};

/// Which assembly policy produced a manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssemblyMode {
    Fewshot,
    Longtail,
}

impl AssemblyMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            AssemblyMode::Fewshot => "fewshot",
            AssemblyMode::Longtail => "longtail",
        }
    }
}

impl std::str::FromStr for AssemblyMode {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fewshot" => Ok(AssemblyMode::Fewshot),
            "longtail" => Ok(AssemblyMode::Longtail),
            other => Err(PipelineError::InvalidConfig {
                message: format!("unknown assembly mode {other:?} (expected fewshot or longtail)"),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifestSource {
    Real,
    Synthetic,
}

/// One training item: `copies` is how many times it appears per epoch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub class_label: String,
    pub source: ManifestSource,
    /// Image path for real items; generated-item id for synthetic ones,
    /// resolvable against the generation plan that produced them.
    #[serde(rename = "ref")]
    pub reference: String,
    pub copies: u32,
}

/// A generated image as the assembler sees it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticItem {
    pub id: String,
    pub class_label: String,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestHeader {
    kind: String,
    mode: AssemblyMode,
    lambda: f64,
    mixup: bool,
    cutmix: bool,
    count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    plan_digest: Option<String>,
}

const MANIFEST_KIND: &str = "training_manifest";

/// Complete classifier-training manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingManifest {
    pub mode: AssemblyMode,
    /// Weight on the real-data loss term.
    pub lambda: f64,
    /// Mixup/cutmix are applied separately within the real and synthetic
    /// halves, never across them; the flags just switch them on.
    pub mixup: bool,
    pub cutmix: bool,
    pub plan_digest: Option<String>,
    pub entries: Vec<ManifestEntry>,
}

impl TrainingManifest {
    pub fn real_weight(&self) -> u64 {
        self.entries
            .iter()
            .filter(|e| e.source == ManifestSource::Real)
            .map(|e| e.copies as u64)
            .sum()
    }

    pub fn synthetic_weight(&self) -> u64 {
        self.entries
            .iter()
            .filter(|e| e.source == ManifestSource::Synthetic)
            .map(|e| e.copies as u64)
            .sum()
    }

    /// Fraction of the training stream that is real, counting copies.
    pub fn real_fraction(&self) -> f64 {
        let real = self.real_weight() as f64;
        let total = real + self.synthetic_weight() as f64;
        if total == 0.0 {
            return 0.0;
        }
        real / total
    }

    pub fn to_jsonl_string(&self) -> Result<String> {
        let header = ManifestHeader {
            kind: MANIFEST_KIND.into(),
            mode: self.mode,
            lambda: self.lambda,
            mixup: self.mixup,
            cutmix: self.cutmix,
            count: self.entries.len(),
            plan_digest: self.plan_digest.clone(),
        };
        let mut out = serde_json::to_string(&header)?;
        out.push('\n');
        for entry in &self.entries {
            out.push_str(&serde_json::to_string(entry)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn digest(&self) -> Result<String> {
        Ok(crate::digest::sha256_hex(self.to_jsonl_string()?.as_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl_string()?).map_err(|e| PipelineError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<TrainingManifest> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (idx, header_line) = lines.next().ok_or_else(|| PipelineError::InvalidConfig {
            message: "manifest file is empty".into(),
        })?;
        let header: ManifestHeader =
            serde_json::from_str(header_line).map_err(|e| PipelineError::InvalidConfig {
                message: format!("bad manifest header at line {}: {e}", idx + 1),
            })?;
        if header.kind != MANIFEST_KIND {
            return Err(PipelineError::InvalidConfig {
                message: format!("expected kind {MANIFEST_KIND:?}, found {:?}", header.kind),
            });
        }
        let mut entries = Vec::new();
        for (idx, line) in lines {
            let entry: ManifestEntry =
                serde_json::from_str(line).map_err(|e| PipelineError::InvalidConfig {
                    message: format!("bad manifest entry at line {}: {e}", idx + 1),
                })?;
            if entry.copies == 0 {
                return Err(PipelineError::InvalidConfig {
                    message: format!("manifest entry at line {} has zero copies", idx + 1),
                });
            }
            entries.push(entry);
        }
        if entries.len() != header.count {
            return Err(PipelineError::InvalidConfig {
                message: format!(
                    "manifest header says {} entries, file has {}",
                    header.count,
                    entries.len()
                ),
            });
        }
        Ok(TrainingManifest {
            mode: header.mode,
            lambda: header.lambda,
            mixup: header.mixup,
            cutmix: header.cutmix,
            plan_digest: header.plan_digest,
            entries,
        })
    }
}

/// Default per-class image total for long-tail assembly.
pub const DEFAULT_CLASS_TOTAL: u32 = 200;

/// Long-tail budget: every class is topped up to `total` images, with each
/// real image counting `duplication` times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetConfig {
    pub total: u32,
    pub duplication: u32,
}

impl BudgetConfig {
    pub fn new(total: u32, duplication: u32) -> Result<BudgetConfig> {
        let config = BudgetConfig { total, duplication };
        config.validate()?;
        Ok(config)
    }

    /// The standard per-class total with a dataset-specific duplication
    /// factor.
    pub fn with_default_total(duplication: u32) -> Result<BudgetConfig> {
        BudgetConfig::new(DEFAULT_CLASS_TOTAL, duplication)
    }

    pub fn validate(&self) -> Result<()> {
        if self.duplication == 0 {
            return Err(PipelineError::InvalidBudget {
                message: "duplication factor must be positive".into(),
            });
        }
        if self.total < self.duplication {
            return Err(PipelineError::InvalidBudget {
                message: format!(
                    "per-class total {} is below the duplication factor {}",
                    self.total, self.duplication
                ),
            });
        }
        Ok(())
    }
}

/// How many times to repeat each real image so the real half of the stream
/// is closest to the synthetic half: `max(1, round_half_even(n_syn / n_real))`.
pub fn replication_factor(n_real: usize, n_syn: usize) -> Result<u32> {
    if n_real == 0 {
        return Err(PipelineError::InvalidBudget {
            message: "replication factor needs at least one real image".into(),
        });
    }
    let ratio = n_syn as f64 / n_real as f64;
    Ok((ratio.round_ties_even() as u32).max(1))
}

/// Synthetic images a long-tail class receives:
/// `max(0, total - n_real * duplication)`.
pub fn longtail_synth_budget(n_real: usize, budget: BudgetConfig) -> u32 {
    let used = n_real as i64 * budget.duplication as i64;
    (budget.total as i64 - used).max(0) as u32
}

/// Weighted objective across the two halves:
/// `lambda * loss_real + (1 - lambda) * loss_synthetic`.
pub fn weighted_loss(lambda: f64, loss_real: f64, loss_synthetic: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) || !lambda.is_finite() {
        return Err(PipelineError::LambdaOutOfRange { value: lambda });
    }
    for value in [loss_real, loss_synthetic] {
        if value < 0.0 || !value.is_finite() {
            return Err(PipelineError::NegativeLoss { value });
        }
    }
    Ok(lambda * loss_real + (1.0 - lambda) * loss_synthetic)
}

fn validate_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) || !lambda.is_finite() {
        return Err(PipelineError::LambdaOutOfRange { value: lambda });
    }
    Ok(())
}

fn group_real(real: &[ImageRecord]) -> BTreeMap<&str, Vec<&ImageRecord>> {
    let mut by_class: BTreeMap<&str, Vec<&ImageRecord>> = BTreeMap::new();
    for record in real {
        by_class.entry(record.class_label.as_str()).or_default().push(record);
    }
    by_class
}

fn group_synthetic(synthetic: &[SyntheticItem]) -> BTreeMap<&str, Vec<&SyntheticItem>> {
    let mut by_class: BTreeMap<&str, Vec<&SyntheticItem>> = BTreeMap::new();
    for item in synthetic {
        by_class.entry(item.class_label.as_str()).or_default().push(item);
    }
    by_class
}

fn sort_entries(entries: &mut [ManifestEntry]) {
    entries.sort_by(|a, b| {
        (&a.class_label, a.source, &a.reference).cmp(&(&b.class_label, b.source, &b.reference))
    });
}

/// Few-shot assembly: per class, real images repeat by the replication
/// factor and every synthetic image appears once. Real and synthetic must
/// cover the same classes.
pub fn assemble_fewshot_manifest(
    real: &[ImageRecord],
    synthetic: &[SyntheticItem],
    lambda: f64,
    plan_digest: Option<String>,
) -> Result<TrainingManifest> {
    validate_lambda(lambda)?;
    let real_by_class = group_real(real);
    let syn_by_class = group_synthetic(synthetic);
    check_class_sets_match(&real_by_class, &syn_by_class)?;
    let mut entries = Vec::new();
    for (class, records) in &real_by_class {
        let syn_items = &syn_by_class[class];
        let factor = replication_factor(records.len(), syn_items.len())?;
        for record in records {
            entries.push(ManifestEntry {
                class_label: record.class_label.clone(),
                source: ManifestSource::Real,
                reference: record.path.clone(),
                copies: factor,
            });
        }
        for item in syn_items {
            entries.push(ManifestEntry {
                class_label: item.class_label.clone(),
                source: ManifestSource::Synthetic,
                reference: item.id.clone(),
                copies: 1,
            });
        }
    }
    sort_entries(&mut entries);
    Ok(TrainingManifest {
        mode: AssemblyMode::Fewshot,
        lambda,
        mixup: true,
        cutmix: true,
        plan_digest,
        entries,
    })
}

fn check_class_sets_match(
    real: &BTreeMap<&str, Vec<&ImageRecord>>,
    synthetic: &BTreeMap<&str, Vec<&SyntheticItem>>,
) -> Result<()> {
    let missing: Vec<&str> = real
        .keys()
        .filter(|c| !synthetic.contains_key(*c))
        .copied()
        .collect();
    if !missing.is_empty() {
        return Err(PipelineError::ClassMismatch {
            message: format!("synthetic set is missing {missing:?}"),
        });
    }
    let extra: Vec<&str> = synthetic
        .keys()
        .filter(|c| !real.contains_key(*c))
        .copied()
        .collect();
    if !extra.is_empty() {
        return Err(PipelineError::ClassMismatch {
            message: format!("synthetic set has extra classes {extra:?}"),
        });
    }
    Ok(())
}

/// Long-tail assembly: real images repeat `budget.duplication` times and
/// each class takes synthetic images, in the order given, up to its
/// remaining budget.
pub fn assemble_longtail_manifest(
    real: &[ImageRecord],
    synthetic: &[SyntheticItem],
    budget: BudgetConfig,
    lambda: f64,
    plan_digest: Option<String>,
) -> Result<TrainingManifest> {
    validate_lambda(lambda)?;
    budget.validate()?;
    let real_by_class = group_real(real);
    let syn_by_class = group_synthetic(synthetic);
    for class in syn_by_class.keys() {
        if !real_by_class.contains_key(class) {
            return Err(PipelineError::ClassMismatch {
                message: format!("synthetic items for {class:?} but no real images"),
            });
        }
    }
    let mut entries = Vec::new();
    for (class, records) in &real_by_class {
        for record in records {
            entries.push(ManifestEntry {
                class_label: record.class_label.clone(),
                source: ManifestSource::Real,
                reference: record.path.clone(),
                copies: budget.duplication,
            });
        }
        let needed = longtail_synth_budget(records.len(), budget) as usize;
        if needed == 0 {
            continue;
        }
        let available = syn_by_class.get(class).map_or(0, |v| v.len());
        if available < needed {
            return Err(PipelineError::InsufficientSynthetic {
                class_label: class.to_string(),
                needed,
                available,
            });
        }
        for item in syn_by_class[class].iter().take(needed) {
            entries.push(ManifestEntry {
                class_label: item.class_label.clone(),
                source: ManifestSource::Synthetic,
                reference: item.id.clone(),
                copies: 1,
            });
        }
    }
    sort_entries(&mut entries);
    Ok(TrainingManifest {
        mode: AssemblyMode::Longtail,
        lambda,
        mixup: true,
        cutmix: true,
        plan_digest,
        entries,
    })
}

/// Mode-dispatching front door: few-shot ignores the budget, long-tail
/// requires one.
pub fn assemble_manifest(
    real: &[ImageRecord],
    synthetic: &[SyntheticItem],
    lambda: f64,
    mode: AssemblyMode,
    budget: Option<BudgetConfig>,
    plan_digest: Option<String>,
) -> Result<TrainingManifest> {
    match mode {
        AssemblyMode::Fewshot => assemble_fewshot_manifest(real, synthetic, lambda, plan_digest),
        AssemblyMode::Longtail => {
            let budget = budget.ok_or_else(|| PipelineError::InvalidBudget {
                message: "long-tail assembly needs a budget".into(),
            })?;
            assemble_longtail_manifest(real, synthetic, budget, lambda, plan_digest)
        }
    }
}
