//! Crate-wide error type shared by every pipeline stage.

use std::path::PathBuf;

use thiserror::Error;

use crate::backend::BackendError;

/// Errors produced by pipeline stages outside the backend clients.
///
/// Backend transport failures keep their own type ([`BackendError`]) so
/// callers can tell a validation problem apart from a flaky model server;
/// the CLI maps the two onto different exit codes.
#[derive(Debug, Error)]
pub enum PipelineError {
    // ── catalog ──────────────────────────────────────────────────────
    #[error("catalog not found: {path}")]
    CatalogNotFound { path: PathBuf },
    #[error("catalog has no records: {path}")]
    EmptyCatalog { path: PathBuf },
    #[error("malformed catalog record at line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("duplicate image_id in catalog: {image_id}")]
    DuplicateImageId { image_id: String },
    #[error("record {image_id} references unknown class {class_label:?}")]
    UnknownClass {
        image_id: String,
        class_label: String,
    },
    #[error("invalid config: {message}")]
    InvalidConfig { message: String },
    #[error("class {class_label:?} has {available} eligible images, need {requested}")]
    InsufficientImages {
        class_label: String,
        requested: usize,
        available: usize,
    },
    #[error("invalid long-tail profile: {message}")]
    InvalidProfile { message: String },

    // ── prompts ──────────────────────────────────────────────────────
    #[error("prompt slot {slot} is empty")]
    EmptySlot { slot: &'static str },
    #[error("prompt slot {slot} contains a newline or surrounding whitespace: {value:?}")]
    InvalidSlot { slot: &'static str, value: String },

    // ── caption bank ─────────────────────────────────────────────────
    #[error("attribute empty after normalization: {raw:?}")]
    EmptyAttribute { raw: String },
    #[error("malformed bank file at line {line}: {message}")]
    MalformedBank { line: usize, message: String },
    #[error("bank entry {image_id} is not in the catalog train split")]
    BankEntryNotInCatalog { image_id: String },
    #[error("bank is missing an entry for train image {image_id}")]
    BankMissingImage { image_id: String },

    // ── sampler / plans ──────────────────────────────────────────────
    #[error("bank has no entries")]
    EmptyBank,
    #[error("bank has no entries for class {class_label:?}")]
    NoEntriesForClass { class_label: String },
    #[error("budget references unknown class {class_label:?}")]
    BudgetUnknownClass { class_label: String },
    #[error("malformed plan file at line {line}: {message}")]
    MalformedPlan { line: usize, message: String },
    #[error("empty generation plan")]
    EmptyPlan,

    // ── fine-tune jobs ───────────────────────────────────────────────
    #[error("fine-tune job file unreadable: {message}")]
    UnreadableJob { message: String },
    #[error("invalid fine-tune job: {message}")]
    InvalidJob { message: String },

    // ── assembly ─────────────────────────────────────────────────────
    #[error("lambda must lie in [0, 1], got {value}")]
    LambdaOutOfRange { value: f64 },
    #[error("cross-entropy loss must be non-negative, got {value}")]
    NegativeLoss { value: f64 },
    #[error("real and synthetic class sets disagree: {message}")]
    ClassMismatch { message: String },
    #[error("class {class_label:?} needs {needed} synthetic items, only {available} available")]
    InsufficientSynthetic {
        class_label: String,
        needed: usize,
        available: usize,
    },
    #[error("invalid budget config: {message}")]
    InvalidBudget { message: String },

    // ── FID evaluator ────────────────────────────────────────────────
    #[error("feature set needs at least 2 rows, got {rows}")]
    TooFewFeatureRows { rows: usize },
    #[error("feature matrix contains a non-finite value")]
    NonFiniteFeature,
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("covariance square root failed to converge (eigenvalue {min_eigenvalue:e})")]
    CovarianceSqrtFailed { min_eigenvalue: f64 },
    #[error("feature file {path}: {message}")]
    MalformedFeatureFile { path: PathBuf, message: String },

    // ── SCM laboratory ───────────────────────────────────────────────
    #[error("invalid SCM: {message}")]
    InvalidScm { message: String },
    #[error("unknown SCM value {value:?} for variable {variable}")]
    UnknownScmValue { variable: &'static str, value: String },
    #[error("distributions live on different domains ({left} vs {right} atoms)")]
    DomainMismatch { left: usize, right: usize },
    #[error("distribution does not sum to 1 (sum = {sum})")]
    NotNormalized { sum: f64 },
    #[error("empty conditioning set: {message}")]
    EmptyConditioningSet { message: String },
    #[error("training draw invalid: {message}")]
    InvalidDraw { message: String },

    // ── provenance ───────────────────────────────────────────────────
    #[error("digest mismatch for {artifact}: expected {expected}, found {actual}")]
    DigestMismatch {
        artifact: String,
        expected: String,
        actual: String,
    },

    // ── plumbing ─────────────────────────────────────────────────────
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl PipelineError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;
