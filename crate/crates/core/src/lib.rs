//! Synthetic-data pipeline for few-shot and long-tail image classification.
//!
//! Stages, in dependency order: catalog ingest and splits, attribute
//! extraction into a caption bank, fine-tune job emission, generation
//! planning with context marginalization, image generation, training
//! manifest assembly, and per-class distribution scoring. A discrete
//! causal-model module provides exact oracles for validating the
//! marginalization behavior end to end.
//!
//! Every stage is deterministic given its inputs and a seed, and every
//! artifact records the digests of its inputs so downstream stages can
//! refuse stale or edited files.

pub mod assembly;
pub mod backend;
pub mod bank;
pub mod catalog;
pub mod digest;
pub mod error;
pub mod fid;
pub mod finetune;
pub mod generate;
pub mod prompt;
pub mod rng;
pub mod sampler;
pub mod scm;

pub use assembly::{
    AssemblyMode, BudgetConfig, ManifestEntry, ManifestSource, SyntheticItem, TrainingManifest,
};
pub use backend::{
    BackendConfig, BackendError, CaptionBackend, CaptionRequest, CaptionResponse,
    GenerationBackend, GenerationParams, GenerationRequest,
};
pub use bank::{BankEntry, BankStats, CaptionBank};
pub use catalog::{DatasetCatalog, DatasetConfig, ImageRecord, Split, SplitAssignment};
pub use error::{PipelineError, Result};
pub use fid::{ClassFid, FidReport, GaussianStats, ModeEstimate};
pub use finetune::{FineTuneHyperparams, FineTuneJob};
pub use generate::{GenerationRecord, GenerationSet};
pub use prompt::CaptionSlots;
pub use rng::SplitMix64;
pub use sampler::{ContextPair, GenerationPlan, MarginalizationMode, PlanItem};
pub use scm::{DiscreteScm, DrawSample, PipelinePolicy, TrainingDraw};
