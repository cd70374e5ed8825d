//! Plan execution: turning every plan item into image bytes and recording
//! what was produced.
//!
//! Unlike captioning, generation does not degrade on failure: a missing
//! image would silently shrink a class's budget, so any item that still
//! fails after retries aborts the stage.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assembly::SyntheticItem;
use crate::backend::{dispatch_plan, BackendError, GenerationBackend, GenerationParams};
use crate::catalog::sanitize_class_for_filename;
use crate::error::{PipelineError, Result};
use crate::sampler::GenerationPlan;

/// One generated image: where it went and exactly what produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub index: usize,
    pub id: String,
    pub class_label: String,
    pub prompt: String,
    pub seed: u64,
    /// Path relative to the run's output directory.
    pub path: String,
    pub payload_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GenerationSetHeader {
    kind: String,
    plan_digest: String,
    backend_name: String,
    params: GenerationParams,
    count: usize,
}

const GENERATION_KIND: &str = "generation_set";

/// The generation stage's artifact: one record per plan item, plan order.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationSet {
    pub plan_digest: String,
    pub backend_name: String,
    pub params: GenerationParams,
    pub records: Vec<GenerationRecord>,
}

impl GenerationSet {
    pub fn to_jsonl_string(&self) -> Result<String> {
        let header = GenerationSetHeader {
            kind: GENERATION_KIND.into(),
            plan_digest: self.plan_digest.clone(),
            backend_name: self.backend_name.clone(),
            params: self.params.clone(),
            count: self.records.len(),
        };
        let mut out = serde_json::to_string(&header)?;
        out.push('\n');
        for record in &self.records {
            out.push_str(&serde_json::to_string(record)?);
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

    pub fn load(path: &Path) -> Result<GenerationSet> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let mut header: Option<GenerationSetHeader> = None;
        let mut records = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            if header.is_none() {
                let parsed: GenerationSetHeader =
                    serde_json::from_str(line).map_err(|e| PipelineError::InvalidConfig {
                        message: format!("bad generation header at line {}: {e}", idx + 1),
                    })?;
                if parsed.kind != GENERATION_KIND {
                    return Err(PipelineError::InvalidConfig {
                        message: format!(
                            "expected kind {GENERATION_KIND:?}, found {:?}",
                            parsed.kind
                        ),
                    });
                }
                header = Some(parsed);
                continue;
            }
            let record: GenerationRecord =
                serde_json::from_str(line).map_err(|e| PipelineError::InvalidConfig {
                    message: format!("bad generation record at line {}: {e}", idx + 1),
                })?;
            records.push(record);
        }
        let header = header.ok_or_else(|| PipelineError::InvalidConfig {
            message: "generation file is empty".into(),
        })?;
        if records.len() != header.count {
            return Err(PipelineError::InvalidConfig {
                message: format!(
                    "generation header says {} records, file has {}",
                    header.count,
                    records.len()
                ),
            });
        }
        Ok(GenerationSet {
            plan_digest: header.plan_digest,
            backend_name: header.backend_name,
            params: header.params,
            records,
        })
    }

    /// Confirm this set was produced from exactly `plan`: digest, count,
    /// and per-item (class, prompt, seed) all line up.
    pub fn verify_against_plan(&self, plan: &GenerationPlan) -> Result<()> {
        let actual = plan.digest()?;
        if actual != self.plan_digest {
            return Err(PipelineError::DigestMismatch {
                artifact: "generation plan".into(),
                expected: self.plan_digest.clone(),
                actual,
            });
        }
        if self.records.len() != plan.items.len() {
            return Err(PipelineError::InvalidConfig {
                message: format!(
                    "generation set has {} records for a {}-item plan",
                    self.records.len(),
                    plan.items.len()
                ),
            });
        }
        for (record, item) in self.records.iter().zip(&plan.items) {
            if record.index != item.index
                || record.class_label != item.class_label
                || record.prompt != item.prompt
                || record.seed != item.seed
            {
                return Err(PipelineError::InvalidConfig {
                    message: format!("generation record {} disagrees with the plan", record.index),
                });
            }
        }
        Ok(())
    }

    /// Recompute every payload digest from disk, refusing edited images.
    pub fn verify_payloads(&self, root: &Path) -> Result<()> {
        for record in &self.records {
            crate::digest::verify_digest(
                &root.join(&record.path),
                &record.payload_digest,
                &format!("generated image {}", record.id),
            )?;
        }
        Ok(())
    }

    pub fn to_synthetic_items(&self) -> Vec<SyntheticItem> {
        self.records
            .iter()
            .map(|r| SyntheticItem {
                id: r.id.clone(),
                class_label: r.class_label.clone(),
                path: r.path.clone(),
            })
            .collect()
    }
}

/// Generate every plan item's payload in plan order. Failures are
/// itemized by [`dispatch_plan`]; this stage wrapper refuses to write a
/// partial set, reporting how many items failed and the first error.
pub fn execute_plan(
    plan: &GenerationPlan,
    backend: &dyn GenerationBackend,
    params: &GenerationParams,
    max_in_flight: usize,
) -> Result<Vec<Vec<u8>>> {
    let results = dispatch_plan(plan, params, backend, max_in_flight);
    let failed: Vec<usize> = results
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.is_err().then_some(i))
        .collect();
    if let Some(&first) = failed.first() {
        let mut err = results[first].as_ref().expect_err("indexed as failed").clone();
        let summary = format!(
            "{} of {} plan items failed, first at index {first}: ",
            failed.len(),
            results.len()
        );
        match &mut err {
            BackendError::Transport { message, .. }
            | BackendError::Http { message, .. }
            | BackendError::Protocol { message }
            | BackendError::Config { message } => *message = format!("{summary}{message}"),
        }
        return Err(PipelineError::Backend(err));
    }
    Ok(results
        .into_iter()
        .map(|r| r.expect("failures were screened"))
        .collect())
}

/// Write payloads under `root/images/<class>/<index>.png` and assemble the
/// stage artifact.
pub fn write_generation_set(
    plan: &GenerationPlan,
    payloads: &[Vec<u8>],
    backend_name: &str,
    params: &GenerationParams,
    root: &Path,
) -> Result<GenerationSet> {
    if payloads.len() != plan.items.len() {
        return Err(PipelineError::InvalidConfig {
            message: format!(
                "{} payloads for a {}-item plan",
                payloads.len(),
                plan.items.len()
            ),
        });
    }
    let mut records = Vec::with_capacity(plan.items.len());
    for (item, payload) in plan.items.iter().zip(payloads) {
        let class_dir = sanitize_class_for_filename(&item.class_label);
        let rel_path = format!("images/{class_dir}/{:06}.png", item.index);
        let full_path = root.join(&rel_path);
        if let Some(parent) = full_path.parent() {
            fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
        }
        fs::write(&full_path, payload).map_err(|e| PipelineError::io(&full_path, e))?;
        records.push(GenerationRecord {
            index: item.index,
            id: format!("syn_{:06}", item.index),
            class_label: item.class_label.clone(),
            prompt: item.prompt.clone(),
            seed: item.seed,
            path: rel_path,
            payload_digest: crate::digest::sha256_hex(payload),
        });
    }
    Ok(GenerationSet {
        plan_digest: plan.digest()?,
        backend_name: backend_name.to_string(),
        params: params.clone(),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{BackendError, GenerationRequest, StubGenerator};
    use crate::bank::{BankEntry, CaptionBank};
    use crate::sampler::{build_generation_plan, MarginalizationMode};
    use std::collections::BTreeMap;

    fn toy_plan() -> GenerationPlan {
        let bank = CaptionBank::new(
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
                    image_id: "gull/0".into(),
                    class_label: "gull/s".into(),
                    background: "ocean".into(),
                    pose: "soaring".into(),
                    degraded: false,
                },
            ],
        );
        let budgets: BTreeMap<String, usize> =
            [("finch".to_string(), 3), ("gull/s".to_string(), 2)]
                .into_iter()
                .collect();
        build_generation_plan(
            &bank,
            "bird",
            &budgets,
            MarginalizationMode::None,
            5,
            false,
        )
        .unwrap()
    }

    #[test]
    fn execute_and_write_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let plan = toy_plan();
        let backend = StubGenerator::new("toy-generator");
        let params = GenerationParams::default();
        let payloads = execute_plan(&plan, &backend, &params, 2).unwrap();
        assert_eq!(payloads.len(), 5);

        let set =
            write_generation_set(&plan, &payloads, "stub", &params, dir.path()).unwrap();
        set.verify_against_plan(&plan).unwrap();
        set.verify_payloads(dir.path()).unwrap();
        assert!(set.records[3].path.starts_with("images/gull-s/"));

        let artifact = dir.path().join("generation.jsonl");
        set.save(&artifact).unwrap();
        let loaded = GenerationSet::load(&artifact).unwrap();
        assert_eq!(loaded, set);

        let items = set.to_synthetic_items();
        assert_eq!(items.len(), 5);
        assert_eq!(items[0].id, "syn_000000");
        assert_eq!(items[0].class_label, "finch");
    }

    #[test]
    fn repeated_execution_is_byte_identical() {
        let plan = toy_plan();
        let backend = StubGenerator::new("toy-generator");
        let params = GenerationParams::default();
        let a = execute_plan(&plan, &backend, &params, 1).unwrap();
        let b = execute_plan(&plan, &backend, &params, 4).unwrap();
        assert_eq!(a, b);
    }

    struct FailingGenerator;

    impl GenerationBackend for FailingGenerator {
        fn generate(&self, request: &GenerationRequest) -> Result<Vec<u8>, BackendError> {
            if request.seed.is_multiple_of(2) {
                Ok(b"ok".to_vec())
            } else {
                Err(BackendError::Http {
                    attempts: 4,
                    status: 500,
                    message: "boom".into(),
                })
            }
        }
        fn name(&self) -> &str {
            "failing"
        }
    }

    #[test]
    fn persistent_failure_aborts_the_stage() {
        let plan = toy_plan();
        let result = execute_plan(&plan, &FailingGenerator, &GenerationParams::default(), 2);
        assert!(matches!(result, Err(PipelineError::Backend(_))));
    }

    #[test]
    fn tampered_payload_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let plan = toy_plan();
        let backend = StubGenerator::new("toy-generator");
        let params = GenerationParams::default();
        let payloads = execute_plan(&plan, &backend, &params, 2).unwrap();
        let set =
            write_generation_set(&plan, &payloads, "stub", &params, dir.path()).unwrap();

        std::fs::write(dir.path().join(&set.records[0].path), b"edited").unwrap();
        assert!(matches!(
            set.verify_payloads(dir.path()),
            Err(PipelineError::DigestMismatch { .. })
        ));
    }

    #[test]
    fn plan_mismatch_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let plan = toy_plan();
        let backend = StubGenerator::new("toy-generator");
        let params = GenerationParams::default();
        let payloads = execute_plan(&plan, &backend, &params, 2).unwrap();
        let mut set =
            write_generation_set(&plan, &payloads, "stub", &params, dir.path()).unwrap();

        set.records[0].seed ^= 1;
        set.verify_against_plan(&plan).unwrap_err();

        set.plan_digest = "0000".into();
        assert!(matches!(
            set.verify_against_plan(&plan),
            Err(PipelineError::DigestMismatch { .. })
        ));
    }
}
