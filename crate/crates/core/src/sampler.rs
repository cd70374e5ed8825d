//! Generation planning: choosing a (background, pose) context for every
//! synthetic image and rendering its prompt.
//!
//! Three context policies:
//!   none          - each class cycles its own extracted contexts in order
//!   class_level   - contexts drawn uniformly from the class's own entries
//!   dataset_level - contexts drawn uniformly from the whole bank, which
//!                   breaks the class-context association found in the
//!                   real data
//!
//! Dataset-level draws approximate averaging the class-conditional image
//! distribution over the dataset-wide context distribution, i.e. sampling
//! the context marginal instead of the class-conditional context.
//!
//! Each class consumes its own seeded stream derived from (seed, "plan",
//! class), so adding a class to the budget map never reshuffles the plans
//! of existing classes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bank::CaptionBank;
use crate::error::{PipelineError, Result};
use crate::prompt::{render_class_only_caption, render_training_caption, CaptionSlots};
use crate::rng::{stable_hash64, SplitMix64};

/// How the context for each synthetic image is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginalizationMode {
    None,
    ClassLevel,
    DatasetLevel,
}

impl MarginalizationMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            MarginalizationMode::None => "none",
            MarginalizationMode::ClassLevel => "class_level",
            MarginalizationMode::DatasetLevel => "dataset_level",
        }
    }
}

impl std::str::FromStr for MarginalizationMode {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(MarginalizationMode::None),
            "class" | "class_level" => Ok(MarginalizationMode::ClassLevel),
            "dataset" | "dataset_level" => Ok(MarginalizationMode::DatasetLevel),
            other => Err(PipelineError::InvalidConfig {
                message: format!(
                    "unknown marginalization mode {other:?} (expected none, class, or dataset)"
                ),
            }),
        }
    }
}

/// One (background, pose) context.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ContextPair {
    pub background: String,
    pub pose: String,
}

/// Draws context pairs from a bank under one policy. Holds the per-class
/// cycle cursors used by the `None` policy.
pub struct PairSampler {
    mode: MarginalizationMode,
    by_class: BTreeMap<String, Vec<ContextPair>>,
    all: Vec<ContextPair>,
    cursors: BTreeMap<String, usize>,
}

impl PairSampler {
    pub fn new(bank: &CaptionBank, mode: MarginalizationMode) -> Result<Self> {
        if bank.is_empty() {
            return Err(PipelineError::EmptyBank);
        }
        let mut by_class: BTreeMap<String, Vec<ContextPair>> = BTreeMap::new();
        let mut all = Vec::with_capacity(bank.len());
        for entry in bank.entries() {
            let pair = ContextPair {
                background: entry.background.clone(),
                pose: entry.pose.clone(),
            };
            by_class
                .entry(entry.class_label.clone())
                .or_default()
                .push(pair.clone());
            all.push(pair);
        }
        Ok(PairSampler {
            mode,
            by_class,
            all,
            cursors: BTreeMap::new(),
        })
    }

    pub fn mode(&self) -> MarginalizationMode {
        self.mode
    }

    /// Draw the next context for `class_label`, advancing `rng` (and the
    /// class cursor under the `None` policy).
    pub fn sample_pair(&mut self, class_label: &str, rng: &mut SplitMix64) -> Result<ContextPair> {
        match self.mode {
            MarginalizationMode::None => {
                let pairs = self.by_class.get(class_label).ok_or_else(|| {
                    PipelineError::NoEntriesForClass {
                        class_label: class_label.to_string(),
                    }
                })?;
                let cursor = self.cursors.entry(class_label.to_string()).or_insert(0);
                let pair = pairs[*cursor % pairs.len()].clone();
                *cursor += 1;
                Ok(pair)
            }
            MarginalizationMode::ClassLevel => {
                let pairs = self.by_class.get(class_label).ok_or_else(|| {
                    PipelineError::NoEntriesForClass {
                        class_label: class_label.to_string(),
                    }
                })?;
                Ok(pairs[rng.next_below(pairs.len() as u64) as usize].clone())
            }
            MarginalizationMode::DatasetLevel => {
                Ok(self.all[rng.next_below(self.all.len() as u64) as usize].clone())
            }
        }
    }

    pub fn has_class(&self, class_label: &str) -> bool {
        self.by_class.contains_key(class_label)
    }
}

/// One planned synthetic image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanItem {
    pub index: usize,
    pub class_label: String,
    pub background: String,
    pub pose: String,
    pub seed: u64,
    pub prompt: String,
}

impl PlanItem {
    pub fn pair(&self) -> (&str, &str) {
        (self.background.as_str(), self.pose.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PlanHeader {
    kind: String,
    mode: MarginalizationMode,
    global_seed: u64,
    bank_digest: String,
    descriptor: String,
    class_only_prompts: bool,
    count: usize,
}

const PLAN_KIND: &str = "generation_plan";

/// Ordered list of planned items plus everything needed to reproduce them.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationPlan {
    pub mode: MarginalizationMode,
    pub global_seed: u64,
    pub bank_digest: String,
    pub descriptor: String,
    pub class_only_prompts: bool,
    pub items: Vec<PlanItem>,
}

impl GenerationPlan {
    pub fn to_jsonl_string(&self) -> Result<String> {
        let header = PlanHeader {
            kind: PLAN_KIND.into(),
            mode: self.mode,
            global_seed: self.global_seed,
            bank_digest: self.bank_digest.clone(),
            descriptor: self.descriptor.clone(),
            class_only_prompts: self.class_only_prompts,
            count: self.items.len(),
        };
        let mut out = serde_json::to_string(&header)?;
        out.push('\n');
        for item in &self.items {
            out.push_str(&serde_json::to_string(item)?);
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

    pub fn load(path: &Path) -> Result<GenerationPlan> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let mut header: Option<PlanHeader> = None;
        let mut items = Vec::new();
        let mut last_line = 0;
        for (idx, line) in text.lines().enumerate() {
            last_line = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            if header.is_none() {
                let parsed: PlanHeader =
                    serde_json::from_str(line).map_err(|e| PipelineError::MalformedPlan {
                        line: idx + 1,
                        message: format!("bad header: {e}"),
                    })?;
                if parsed.kind != PLAN_KIND {
                    return Err(PipelineError::MalformedPlan {
                        line: idx + 1,
                        message: format!("expected kind {PLAN_KIND:?}, found {:?}", parsed.kind),
                    });
                }
                header = Some(parsed);
                continue;
            }
            let item: PlanItem =
                serde_json::from_str(line).map_err(|e| PipelineError::MalformedPlan {
                    line: idx + 1,
                    message: format!("bad item: {e}"),
                })?;
            items.push(item);
        }
        let header = header.ok_or_else(|| PipelineError::MalformedPlan {
            line: 1,
            message: "plan file is empty".into(),
        })?;
        if items.len() != header.count {
            return Err(PipelineError::MalformedPlan {
                line: last_line,
                message: format!("header says {} items, file has {}", header.count, items.len()),
            });
        }
        if items.is_empty() {
            return Err(PipelineError::EmptyPlan);
        }
        Ok(GenerationPlan {
            mode: header.mode,
            global_seed: header.global_seed,
            bank_digest: header.bank_digest,
            descriptor: header.descriptor,
            class_only_prompts: header.class_only_prompts,
            items,
        })
    }

    /// Confirm the plan was built from exactly this bank: digest must match
    /// and every item's context must exist verbatim in the bank (within the
    /// item's class for class-scoped policies).
    pub fn verify_against_bank(&self, bank: &CaptionBank) -> Result<()> {
        let actual = bank.digest()?;
        if actual != self.bank_digest {
            return Err(PipelineError::DigestMismatch {
                artifact: "caption bank".into(),
                expected: self.bank_digest.clone(),
                actual,
            });
        }
        for item in &self.items {
            let scope = match self.mode {
                MarginalizationMode::DatasetLevel => None,
                _ => Some(item.class_label.as_str()),
            };
            if !bank.contains_pair(scope, &item.background, &item.pose) {
                return Err(PipelineError::MalformedPlan {
                    line: item.index + 2,
                    message: format!(
                        "item {} uses a context absent from the bank: ({:?}, {:?})",
                        item.index, item.background, item.pose
                    ),
                });
            }
        }
        Ok(())
    }
}

/// Deterministic per-item generation seed.
fn item_seed(global_seed: u64, class_label: &str, item_in_class: u64) -> u64 {
    stable_hash64(&[
        b"item_seed",
        &global_seed.to_le_bytes(),
        class_label.as_bytes(),
        &item_in_class.to_le_bytes(),
    ])
}

/// Build the full plan: `budgets` maps each class to its synthetic image
/// count. With `class_only_prompts` the context pair is still drawn and
/// recorded, but the prompt omits it.
pub fn build_generation_plan(
    bank: &CaptionBank,
    descriptor: &str,
    budgets: &BTreeMap<String, usize>,
    mode: MarginalizationMode,
    global_seed: u64,
    class_only_prompts: bool,
) -> Result<GenerationPlan> {
    let mut sampler = PairSampler::new(bank, mode)?;
    for class in budgets.keys() {
        if !sampler.has_class(class) {
            return Err(PipelineError::BudgetUnknownClass {
                class_label: class.clone(),
            });
        }
    }
    let mut items = Vec::with_capacity(budgets.values().sum());
    for (class, &budget) in budgets {
        let mut rng = SplitMix64::stream(global_seed, &[b"plan", class.as_bytes()]);
        for j in 0..budget {
            let pair = sampler.sample_pair(class, &mut rng)?;
            let prompt = if class_only_prompts {
                render_class_only_caption(descriptor, class)?
            } else {
                let slots =
                    CaptionSlots::new(descriptor, class, &pair.background, &pair.pose)?;
                render_training_caption(&slots)?
            };
            items.push(PlanItem {
                index: items.len(),
                class_label: class.clone(),
                background: pair.background,
                pose: pair.pose,
                seed: item_seed(global_seed, class, j as u64),
                prompt,
            });
        }
    }
    if items.is_empty() {
        return Err(PipelineError::EmptyPlan);
    }
    Ok(GenerationPlan {
        mode,
        global_seed,
        bank_digest: bank.digest()?,
        descriptor: descriptor.to_string(),
        class_only_prompts,
        items,
    })
}

/// Plug-in mutual information (nats) between class label and context pair
/// over a set of observations. Zero when contexts are assigned
/// independently of class; ln(k) when k equally frequent classes each use
/// a private context.
pub fn empirical_pair_class_mi<'a, I>(observations: I) -> f64
where
    I: IntoIterator<Item = (&'a str, (&'a str, &'a str))>,
{
    let mut joint: BTreeMap<(&str, (&str, &str)), f64> = BTreeMap::new();
    let mut class_marginal: BTreeMap<&str, f64> = BTreeMap::new();
    let mut pair_marginal: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    let mut total = 0.0f64;
    for (class, pair) in observations {
        *joint.entry((class, pair)).or_insert(0.0) += 1.0;
        *class_marginal.entry(class).or_insert(0.0) += 1.0;
        *pair_marginal.entry(pair).or_insert(0.0) += 1.0;
        total += 1.0;
    }
    if total == 0.0 {
        return 0.0;
    }
    let mut mi = 0.0;
    for ((class, pair), count) in &joint {
        let p_joint = count / total;
        let p_class = class_marginal[class] / total;
        let p_pair = pair_marginal[pair] / total;
        mi += p_joint * (p_joint / (p_class * p_pair)).ln();
    }
    mi.max(0.0)
}

/// MI between class and context over a plan's items.
pub fn plan_pair_class_mi(items: &[PlanItem]) -> f64 {
    empirical_pair_class_mi(
        items
            .iter()
            .map(|item| (item.class_label.as_str(), item.pair())),
    )
}
