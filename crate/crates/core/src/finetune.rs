//! Fine-tune job emission: the (image path, caption) pairs and
//! hyperparameters handed to a diffusion training service.
//!
//! The job is a single JSON document so external trainers can consume it
//! without this crate. Captions are re-rendered from the bank at emission
//! time, which keeps the job consistent with the bank by construction;
//! `validate` re-parses them as a defense against hand-edited files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bank::CaptionBank;
use crate::catalog::ImageRecord;
use crate::error::{PipelineError, Result};
use crate::prompt::{parse_training_caption, render_training_caption, CaptionSlots};

/// LoRA fine-tune settings. The defaults are the tuned values used for
/// every dataset; runs override only what they sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FineTuneHyperparams {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: u32,
    pub batch_size: u32,
    pub scheduler: String,
    pub warmup_steps: u32,
    pub max_grad_norm: f64,
    pub lora_rank: u32,
    pub mixed_precision: bool,
    /// Module groups the LoRA adapters attach to.
    pub lora_targets: Vec<String>,
}

impl Default for FineTuneHyperparams {
    fn default() -> Self {
        FineTuneHyperparams {
            learning_rate: 1e-4,
            weight_decay: 1e-2,
            epochs: 400,
            batch_size: 80,
            scheduler: "cosine".into(),
            warmup_steps: 100,
            max_grad_norm: 1.0,
            lora_rank: 16,
            mixed_precision: false,
            lora_targets: vec!["unet-attention".into(), "text-encoder-attention".into()],
        }
    }
}

impl FineTuneHyperparams {
    /// Every out-of-range field, described one per entry.
    pub fn violations(&self) -> Vec<String> {
        let mut found = Vec::new();
        let positive = [
            ("learning_rate", self.learning_rate),
            ("max_grad_norm", self.max_grad_norm),
        ];
        for (field, value) in positive {
            if !value.is_finite() || value <= 0.0 {
                found.push(format!("hyperparams.{field} must be positive, got {value}"));
            }
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            found.push(format!(
                "hyperparams.weight_decay must be non-negative, got {}",
                self.weight_decay
            ));
        }
        let positive_ints = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("lora_rank", self.lora_rank),
        ];
        for (field, value) in positive_ints {
            if value == 0 {
                found.push(format!("hyperparams.{field} must be positive"));
            }
        }
        if self.scheduler.is_empty() {
            found.push("hyperparams.scheduler is empty".into());
        }
        found
    }

    /// Fail on the first violation.
    pub fn validate(&self) -> Result<()> {
        match self.violations().into_iter().next() {
            Some(message) => Err(PipelineError::InvalidJob { message }),
            None => Ok(()),
        }
    }
}

/// One training example: where the image lives and what caption it trains on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainPair {
    pub image_id: String,
    pub path: String,
    pub caption: String,
}

/// Digests of the artifacts this job was derived from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobProvenance {
    pub bank_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog_digest: Option<String>,
}

/// Complete fine-tune request for one (dataset, base model) combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneJob {
    pub base_model_id: String,
    pub descriptor: String,
    pub hyperparams: FineTuneHyperparams,
    pub pairs: Vec<TrainPair>,
    pub provenance: JobProvenance,
}

impl FineTuneJob {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| PipelineError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<FineTuneJob> {
        let bytes = fs::read(path).map_err(|e| PipelineError::UnreadableJob {
            message: format!("{}: {e}", path.display()),
        })?;
        serde_json::from_slice(&bytes).map_err(|e| PipelineError::UnreadableJob {
            message: format!("{}: {e}", path.display()),
        })
    }

    /// Structural checks: hyperparameters in range, at least one pair, and
    /// every caption parseable back into template slots with this job's
    /// descriptor. Returns every violation found, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut found = Vec::new();
        if self.base_model_id.is_empty() {
            found.push("base_model_id is empty".into());
        }
        found.extend(self.hyperparams.violations());
        if self.pairs.is_empty() {
            found.push("job has no training pairs".into());
        }
        for pair in &self.pairs {
            match parse_training_caption(&pair.caption) {
                None => found.push(format!(
                    "template mismatch for {}: {:?}",
                    pair.image_id, pair.caption
                )),
                Some(slots) if slots.descriptor != self.descriptor => found.push(format!(
                    "caption for {} uses descriptor {:?}, job says {:?}",
                    pair.image_id, slots.descriptor, self.descriptor
                )),
                Some(_) => {}
            }
            if pair.path.is_empty() {
                found.push(format!("pair {} has an empty image path", pair.image_id));
            }
        }
        found
    }

    /// Fail on the first violation.
    pub fn validate(&self) -> Result<()> {
        match self.violations().into_iter().next() {
            Some(message) => Err(PipelineError::InvalidJob { message }),
            None => Ok(()),
        }
    }

    /// Strong provenance check for a loaded job: the bank digest must match
    /// and every caption must parse into slots that name this bank's entry
    /// for that image.
    pub fn verify_against_bank(&self, bank: &CaptionBank) -> Result<()> {
        let actual = bank.digest()?;
        if actual != self.provenance.bank_digest {
            return Err(PipelineError::DigestMismatch {
                artifact: "caption bank".into(),
                expected: self.provenance.bank_digest.clone(),
                actual,
            });
        }
        for pair in &self.pairs {
            let slots = parse_training_caption(&pair.caption).ok_or_else(|| {
                PipelineError::InvalidJob {
                    message: format!("caption for {} is not template-shaped", pair.image_id),
                }
            })?;
            let entry = bank.get(&pair.image_id).ok_or_else(|| {
                PipelineError::BankMissingImage {
                    image_id: pair.image_id.clone(),
                }
            })?;
            if entry.class_label != slots.classname
                || entry.background != slots.background
                || entry.pose != slots.pose
            {
                return Err(PipelineError::InvalidJob {
                    message: format!(
                        "caption for {} disagrees with its bank entry",
                        pair.image_id
                    ),
                });
            }
        }
        Ok(())
    }
}

/// Emit the job for a set of training records: one pair per image, captions
/// rendered from the bank's attributes for that image. The bank and records
/// must cover exactly the same images.
pub fn build_finetune_job(
    bank: &CaptionBank,
    records: &[ImageRecord],
    descriptor: &str,
    base_model_id: &str,
    hyperparams: FineTuneHyperparams,
    catalog_digest: Option<String>,
) -> Result<FineTuneJob> {
    hyperparams.validate()?;
    bank.verify_against_records(records)?;
    let mut pairs = Vec::with_capacity(bank.len());
    for entry in bank.entries() {
        let record = records
            .iter()
            .find(|r| r.image_id == entry.image_id)
            .ok_or_else(|| PipelineError::BankEntryNotInCatalog {
                image_id: entry.image_id.clone(),
            })?;
        let slots = CaptionSlots::new(
            descriptor,
            &entry.class_label,
            &entry.background,
            &entry.pose,
        )?;
        pairs.push(TrainPair {
            image_id: entry.image_id.clone(),
            path: record.path.clone(),
            caption: render_training_caption(&slots)?,
        });
    }
    let job = FineTuneJob {
        base_model_id: base_model_id.to_string(),
        descriptor: descriptor.to_string(),
        hyperparams,
        pairs,
        provenance: JobProvenance {
            bank_digest: bank.digest()?,
            catalog_digest,
        },
    };
    job.validate()?;
    Ok(job)
}

/// Load a job file and report every invariant violation in it. Unreadable
/// or unparseable files are errors; a readable job that breaks rules is Ok
/// with a non-empty report.
pub fn validate_job(path: &Path) -> Result<Vec<String>> {
    Ok(FineTuneJob::load(path)?.violations())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::BankEntry;
    use crate::catalog::Split;

    fn toy_bank() -> CaptionBank {
        CaptionBank::new(
            "toy",
            "cap",
            None,
            vec![
                BankEntry {
                    image_id: "finch_000".into(),
                    class_label: "finch".into(),
                    background: "forest".into(),
                    pose: "perched".into(),
                    degraded: false,
                },
                BankEntry {
                    image_id: "gull_000".into(),
                    class_label: "gull".into(),
                    background: "ocean".into(),
                    pose: "soaring".into(),
                    degraded: false,
                },
            ],
        )
    }

    fn toy_records() -> Vec<ImageRecord> {
        vec![
            ImageRecord {
                image_id: "finch_000".into(),
                class_label: "finch".into(),
                path: "images/finch/000.jpg".into(),
                split: Split::Train,
            },
            ImageRecord {
                image_id: "gull_000".into(),
                class_label: "gull".into(),
                path: "images/gull/000.jpg".into(),
                split: Split::Train,
            },
        ]
    }

    #[test]
    fn defaults_are_the_tuned_training_settings() {
        let hp = FineTuneHyperparams::default();
        assert_eq!(hp.learning_rate, 1e-4);
        assert_eq!(hp.weight_decay, 1e-2);
        assert_eq!(hp.epochs, 400);
        assert_eq!(hp.batch_size, 80);
        assert_eq!(hp.scheduler, "cosine");
        assert_eq!(hp.warmup_steps, 100);
        assert_eq!(hp.max_grad_norm, 1.0);
        assert_eq!(hp.lora_rank, 16);
        assert!(!hp.mixed_precision);
        let from_empty: FineTuneHyperparams = serde_json::from_str("{}").unwrap();
        assert_eq!(from_empty, hp);
    }

    #[test]
    fn job_renders_one_template_caption_per_entry() {
        let job = build_finetune_job(
            &toy_bank(),
            &toy_records(),
            "bird",
            "diffusion-base-v1",
            FineTuneHyperparams::default(),
            None,
        )
        .unwrap();
        assert_eq!(job.pairs.len(), 2);
        assert_eq!(
            job.pairs[0].caption,
            "a bird photo of a finch in the forest background with the perched pose"
        );
        assert_eq!(job.pairs[0].path, "images/finch/000.jpg");
        job.validate().unwrap();
        job.verify_against_bank(&toy_bank()).unwrap();
    }

    #[test]
    fn bank_and_records_must_cover_the_same_images() {
        let err = build_finetune_job(
            &toy_bank(),
            &toy_records()[..1],
            "bird",
            "diffusion-base-v1",
            FineTuneHyperparams::default(),
            None,
        )
        .unwrap_err();
        assert!(matches!(err, PipelineError::BankEntryNotInCatalog { .. }));

        let mut records = toy_records();
        records.push(ImageRecord {
            image_id: "gull_001".into(),
            class_label: "gull".into(),
            path: "images/gull/001.jpg".into(),
            split: Split::Train,
        });
        let err = build_finetune_job(
            &toy_bank(),
            &records,
            "bird",
            "diffusion-base-v1",
            FineTuneHyperparams::default(),
            None,
        )
        .unwrap_err();
        match err {
            PipelineError::BankMissingImage { image_id } => assert_eq!(image_id, "gull_001"),
            other => panic!("expected BankMissingImage, got {other:?}"),
        }
    }

    #[test]
    fn validation_names_the_offending_field() {
        let hp = FineTuneHyperparams {
            lora_rank: 0,
            ..FineTuneHyperparams::default()
        };
        let err = hp.validate().unwrap_err();
        assert!(err.to_string().contains("lora_rank"));

        let hp = FineTuneHyperparams {
            learning_rate: -1.0,
            ..FineTuneHyperparams::default()
        };
        assert!(hp.validate().unwrap_err().to_string().contains("learning_rate"));

        let mut job = build_finetune_job(
            &toy_bank(),
            &toy_records(),
            "bird",
            "diffusion-base-v1",
            FineTuneHyperparams::default(),
            None,
        )
        .unwrap();
        job.pairs[0].caption = "a finch on a branch".into();
        let err = job.validate().unwrap_err();
        assert!(err.to_string().contains("template mismatch"));
    }

    #[test]
    fn file_validation_reports_every_violation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("job.json");
        let mut job = build_finetune_job(
            &toy_bank(),
            &toy_records(),
            "bird",
            "diffusion-base-v1",
            FineTuneHyperparams::default(),
            None,
        )
        .unwrap();
        job.save(&path).unwrap();
        assert_eq!(validate_job(&path).unwrap(), Vec::<String>::new());

        job.pairs[0].caption = "a finch on a branch".into();
        job.hyperparams.lora_rank = 0;
        job.save(&path).unwrap();
        let report = validate_job(&path).unwrap();
        assert_eq!(report.len(), 2);
        assert!(report.iter().any(|v| v.contains("template mismatch")));
        assert!(report.iter().any(|v| v.contains("lora_rank")));

        assert!(matches!(
            validate_job(&dir.path().join("missing.json")),
            Err(PipelineError::UnreadableJob { .. })
        ));
    }

    #[test]
    fn job_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("job.json");
        let job = build_finetune_job(
            &toy_bank(),
            &toy_records(),
            "bird",
            "diffusion-base-v1",
            FineTuneHyperparams::default(),
            Some("cat-digest".into()),
        )
        .unwrap();
        job.save(&path).unwrap();
        let loaded = FineTuneJob::load(&path).unwrap();
        assert_eq!(loaded, job);

        assert!(matches!(
            FineTuneJob::load(&dir.path().join("missing.json")),
            Err(PipelineError::UnreadableJob { .. })
        ));
        std::fs::write(&path, "{not json").unwrap();
        assert!(matches!(
            FineTuneJob::load(&path),
            Err(PipelineError::UnreadableJob { .. })
        ));
    }

    #[test]
    fn verify_catches_tampered_captions_and_banks() {
        let bank = toy_bank();
        let mut job = build_finetune_job(
            &bank,
            &toy_records(),
            "bird",
            "diffusion-base-v1",
            FineTuneHyperparams::default(),
            None,
        )
        .unwrap();

        job.pairs[0].caption =
            "a bird photo of a finch in the desert background with the perched pose".into();
        let err = job.verify_against_bank(&bank).unwrap_err();
        assert!(matches!(err, PipelineError::InvalidJob { .. }));

        let job = build_finetune_job(
            &bank,
            &toy_records(),
            "bird",
            "diffusion-base-v1",
            FineTuneHyperparams::default(),
            None,
        )
        .unwrap();
        let other_bank = CaptionBank::new("toy", "cap", None, bank.entries()[..1].to_vec());
        assert!(matches!(
            job.verify_against_bank(&other_bank),
            Err(PipelineError::DigestMismatch { .. })
        ));
    }
}
