//! Caption bank: per-image background and pose phrases extracted by a
//! captioning backend.
//!
//! The bank is the empirical context distribution later sampled by the
//! generation planner, so duplicates are kept deliberately: frequent
//! contexts should stay frequent. Extraction failures degrade to a
//! recorded placeholder instead of aborting a long batch run.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{bounded_map, CaptionBackend, CaptionRequest};
use crate::catalog::ImageRecord;
use crate::error::{PipelineError, Result};
use crate::prompt::{render_extraction_prompt, AttributeKind};

/// Attribute text recorded when extraction fails or normalizes to nothing.
pub const FALLBACK_ATTRIBUTE: &str = "plain";

/// One image's extracted context attributes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankEntry {
    pub image_id: String,
    pub class_label: String,
    pub background: String,
    pub pose: String,
    /// True when either attribute fell back to the placeholder.
    #[serde(default)]
    pub degraded: bool,
}

/// Header line of a bank artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankHeader {
    pub kind: String,
    pub source_dataset: String,
    pub captioner_name: String,
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog_digest: Option<String>,
}

const BANK_KIND: &str = "caption_bank";

/// Summary counts over a bank. All fields are zero for an empty bank.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankStats {
    /// Entry count per class label.
    pub per_class: BTreeMap<String, usize>,
    /// Distinct (background, pose) pairs under exact string equality.
    pub distinct_pairs: usize,
    /// Entries where at least one attribute fell back to the placeholder.
    pub degraded: usize,
}

/// Ordered collection of bank entries plus provenance of how they were made.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionBank {
    pub source_dataset: String,
    pub captioner_name: String,
    pub catalog_digest: Option<String>,
    entries: Vec<BankEntry>,
}

impl CaptionBank {
    /// Wrap entries, sorting them by image_id into canonical order.
    pub fn new(
        source_dataset: &str,
        captioner_name: &str,
        catalog_digest: Option<String>,
        mut entries: Vec<BankEntry>,
    ) -> Self {
        entries.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        CaptionBank {
            source_dataset: source_dataset.to_string(),
            captioner_name: captioner_name.to_string(),
            catalog_digest,
            entries,
        }
    }

    pub fn entries(&self) -> &[BankEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn classes(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.class_label.as_str()).collect()
    }

    pub fn entries_for_class(&self, class_label: &str) -> Vec<&BankEntry> {
        self.entries
            .iter()
            .filter(|e| e.class_label == class_label)
            .collect()
    }

    pub fn get(&self, image_id: &str) -> Option<&BankEntry> {
        self.entries
            .binary_search_by(|e| e.image_id.as_str().cmp(image_id))
            .ok()
            .map(|i| &self.entries[i])
    }

    /// (background, pose) pairs with multiplicity, optionally class-scoped.
    pub fn pairs(&self, class_label: Option<&str>) -> Vec<(&str, &str)> {
        self.entries
            .iter()
            .filter(|e| class_label.is_none_or(|c| e.class_label == c))
            .map(|e| (e.background.as_str(), e.pose.as_str()))
            .collect()
    }

    pub fn contains_pair(&self, class_label: Option<&str>, background: &str, pose: &str) -> bool {
        self.pairs(class_label)
            .iter()
            .any(|&(b, p)| b == background && p == pose)
    }

    /// Per-class entry counts, distinct pair count, and degraded count.
    pub fn stats(&self) -> BankStats {
        let mut per_class: BTreeMap<String, usize> = BTreeMap::new();
        let mut pairs = BTreeSet::new();
        let mut degraded = 0;
        for entry in &self.entries {
            *per_class.entry(entry.class_label.clone()).or_insert(0) += 1;
            pairs.insert((entry.background.as_str(), entry.pose.as_str()));
            if entry.degraded {
                degraded += 1;
            }
        }
        BankStats {
            per_class,
            distinct_pairs: pairs.len(),
            degraded,
        }
    }

    /// Canonical serialized form, used for both saving and digesting.
    pub fn to_jsonl_string(&self) -> Result<String> {
        let header = BankHeader {
            kind: BANK_KIND.into(),
            source_dataset: self.source_dataset.clone(),
            captioner_name: self.captioner_name.clone(),
            count: self.entries.len(),
            catalog_digest: self.catalog_digest.clone(),
        };
        let mut out = serde_json::to_string(&header)?;
        out.push('\n');
        for entry in &self.entries {
            out.push_str(&serde_json::to_string(entry)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Digest of the canonical serialized form.
    pub fn digest(&self) -> Result<String> {
        Ok(crate::digest::sha256_hex(self.to_jsonl_string()?.as_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl_string()?).map_err(|e| PipelineError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<CaptionBank> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let mut header: Option<BankHeader> = None;
        let mut entries = Vec::new();
        let mut last_line = 0;
        for (idx, line) in text.lines().enumerate() {
            last_line = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            if header.is_none() {
                let parsed: BankHeader =
                    serde_json::from_str(line).map_err(|e| PipelineError::MalformedBank {
                        line: idx + 1,
                        message: format!("bad header: {e}"),
                    })?;
                if parsed.kind != BANK_KIND {
                    return Err(PipelineError::MalformedBank {
                        line: idx + 1,
                        message: format!("expected kind {BANK_KIND:?}, found {:?}", parsed.kind),
                    });
                }
                header = Some(parsed);
                continue;
            }
            let entry: BankEntry =
                serde_json::from_str(line).map_err(|e| PipelineError::MalformedBank {
                    line: idx + 1,
                    message: format!("bad entry: {e}"),
                })?;
            entries.push(entry);
        }
        let header = header.ok_or_else(|| PipelineError::MalformedBank {
            line: 1,
            message: "bank file is empty".into(),
        })?;
        if entries.len() != header.count {
            return Err(PipelineError::MalformedBank {
                line: last_line,
                message: format!(
                    "header says {} entries, file has {}",
                    header.count,
                    entries.len()
                ),
            });
        }
        Ok(CaptionBank::new(
            &header.source_dataset,
            &header.captioner_name,
            header.catalog_digest,
            entries,
        ))
    }

    /// Check the bank and a record set describe the same images: every
    /// entry has its record (same id and class) and every record has its
    /// entry.
    pub fn verify_against_records(&self, records: &[ImageRecord]) -> Result<()> {
        for entry in &self.entries {
            let matched = records
                .iter()
                .any(|r| r.image_id == entry.image_id && r.class_label == entry.class_label);
            if !matched {
                return Err(PipelineError::BankEntryNotInCatalog {
                    image_id: entry.image_id.clone(),
                });
            }
        }
        for record in records {
            if self.get(&record.image_id).is_none() {
                return Err(PipelineError::BankMissingImage {
                    image_id: record.image_id.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Canonicalize raw captioner output: newlines become spaces, whitespace
/// runs collapse, edges are trimmed, one trailing period is dropped.
pub fn normalize_attribute(raw: &str) -> Result<String> {
    let mut flat = String::with_capacity(raw.len());
    let mut last_was_space = true;
    for ch in raw.chars() {
        if ch.is_whitespace() {
            if !last_was_space {
                flat.push(' ');
                last_was_space = true;
            }
        } else {
            flat.push(ch);
            last_was_space = false;
        }
    }
    let mut text = flat.trim().to_string();
    if text.ends_with('.') {
        text.pop();
        text = text.trim().to_string();
    }
    if text.is_empty() {
        return Err(PipelineError::EmptyAttribute {
            raw: raw.to_string(),
        });
    }
    Ok(text)
}

/// Extract both attributes for every record. Backend failures and empty
/// captions degrade that attribute to [`FALLBACK_ATTRIBUTE`]; unreadable
/// images abort, since they indicate a broken catalog rather than a flaky
/// captioner.
#[allow(clippy::too_many_arguments)]
pub fn build_bank(
    records: &[ImageRecord],
    descriptor: &str,
    source_dataset: &str,
    backend: &dyn CaptionBackend,
    captioner_name: &str,
    catalog_digest: Option<String>,
    max_in_flight: usize,
    load_image: impl Fn(&ImageRecord) -> io::Result<Vec<u8>> + Sync,
) -> Result<CaptionBank> {
    let background_prompt = render_extraction_prompt(AttributeKind::Background, descriptor)?;
    let pose_prompt = render_extraction_prompt(AttributeKind::Pose, descriptor)?;

    let results: Vec<Result<BankEntry>> = bounded_map(records, max_in_flight, |record| {
        let image_bytes = load_image(record)
            .map_err(|e| PipelineError::io(Path::new(&record.path), e))?;
        let mut degraded = false;
        let mut extract = |prompt: &str| -> String {
            let outcome = backend
                .caption(&CaptionRequest {
                    image_id: record.image_id.clone(),
                    image_bytes: image_bytes.clone(),
                    prompt: prompt.to_string(),
                })
                .map_err(PipelineError::from)
                .and_then(|response| normalize_attribute(&response.text));
            match outcome {
                Ok(text) => text,
                Err(_) => {
                    degraded = true;
                    FALLBACK_ATTRIBUTE.to_string()
                }
            }
        };
        let background = extract(&background_prompt);
        let pose = extract(&pose_prompt);
        Ok(BankEntry {
            image_id: record.image_id.clone(),
            class_label: record.class_label.clone(),
            background,
            pose,
            degraded,
        })
    });

    let mut entries = Vec::with_capacity(results.len());
    for result in results {
        entries.push(result?);
    }
    Ok(CaptionBank::new(
        source_dataset,
        captioner_name,
        catalog_digest,
        entries,
    ))
}

/// Image loader that resolves record paths against a root directory.
pub fn fs_image_loader(root: &Path) -> impl Fn(&ImageRecord) -> io::Result<Vec<u8>> + Sync {
    let root: PathBuf = root.to_path_buf();
    move |record: &ImageRecord| {
        let path = Path::new(&record.path);
        let resolved = if path.is_absolute() {
            path.to_path_buf()
        } else {
            root.join(path)
        };
        fs::read(resolved)
    }
}
