//! Run configuration: one JSON file drives every subcommand.
//!
//! Relative paths inside the file resolve against the file's own directory,
//! so a run directory can be moved or mounted anywhere. The `--out` flag is
//! the one exception: it is an operator override and resolves against the
//! working directory like any other shell argument.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use synthgen_core::backend::BackendConfig;
use synthgen_core::error::{PipelineError, Result};
use synthgen_core::fid::COVARIANCE_EPS;
use synthgen_core::{AssemblyMode, FineTuneHyperparams, GenerationParams, MarginalizationMode, Split};

/// Long-tail split shape: class counts decay geometrically from `n_max`
/// down to `n_max / imbalance_factor` across the ordered class list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LongtailSplitConfig {
    pub n_max: usize,
    pub imbalance_factor: f64,
}

/// Inputs for the `fid` stage: two index files mapping class labels to
/// per-class feature files (tab-separated, one class per line).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FidInputs {
    pub real_index: PathBuf,
    pub synthetic_index: PathBuf,
    /// Covariance regularizer applied only if the square root fails;
    /// 0 forbids the retry.
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_eps() -> f64 {
    COVARIANCE_EPS
}

/// Everything a pipeline run needs beyond the per-invocation flags.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    /// Dataset description: classes, descriptor, long-tail budgets.
    pub dataset_config: PathBuf,
    /// Headerless image manifest consumed by `ingest`.
    pub source_manifest: PathBuf,
    /// Root for resolving record image paths; defaults to the config dir.
    #[serde(default)]
    pub data_root: Option<PathBuf>,
    /// Directory every stage reads prior artifacts from and writes into.
    pub out_dir: PathBuf,
    /// Master seed; every stage derives its own streams from it.
    pub global_seed: u64,
    pub caption_backend: BackendConfig,
    pub generation_backend: BackendConfig,
    #[serde(default)]
    pub generation_params: GenerationParams,
    #[serde(default = "default_base_model")]
    pub base_model_id: String,
    #[serde(default)]
    pub hyperparams: FineTuneHyperparams,
    /// Context sampling scope: none, class_level, or dataset_level.
    #[serde(default = "default_mode")]
    pub marginalization: MarginalizationMode,
    /// Real-loss weight in [0, 1] for manifest metadata.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Which split and assembly policy the run targets.
    #[serde(default = "default_assembly")]
    pub assembly: AssemblyMode,
    /// Images drawn per class by a few-shot split.
    #[serde(default = "default_fewshot_k")]
    pub fewshot_k: usize,
    /// Synthetic images planned per class under few-shot assembly.
    #[serde(default = "default_synthetic_per_class")]
    pub synthetic_per_class: u32,
    /// Long-tail split shape; required when `assembly` is longtail and
    /// `split` runs.
    #[serde(default)]
    pub longtail_split: Option<LongtailSplitConfig>,
    /// Pool the validation split is carved from.
    #[serde(default = "default_val_pool")]
    pub val_pool: Split,
    /// Drop context slots from generation prompts (ablation switch).
    #[serde(default)]
    pub class_only_prompts: bool,
    /// Feature inputs for the `fid` stage.
    #[serde(default)]
    pub fid: Option<FidInputs>,
}

fn default_base_model() -> String {
    "t2i-base".into()
}

fn default_mode() -> MarginalizationMode {
    MarginalizationMode::DatasetLevel
}

fn default_lambda() -> f64 {
    0.5
}

fn default_assembly() -> AssemblyMode {
    AssemblyMode::Fewshot
}

fn default_fewshot_k() -> usize {
    5
}

fn default_synthetic_per_class() -> u32 {
    100
}

fn default_val_pool() -> Split {
    Split::Train
}

impl RunConfig {
    /// Read a run config and resolve its relative paths against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<RunConfig> {
        if !path.exists() {
            return Err(PipelineError::InvalidConfig {
                message: format!("run config not found: {}", path.display()),
            });
        }
        let bytes = fs::read(path).map_err(|e| PipelineError::io(path, e))?;
        let mut config: RunConfig = serde_json::from_slice(&bytes)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.dataset_config = resolve(base, &config.dataset_config);
        config.source_manifest = resolve(base, &config.source_manifest);
        config.out_dir = resolve(base, &config.out_dir);
        config.data_root = match config.data_root.take() {
            Some(root) => Some(resolve(base, &root)),
            None => Some(base.to_path_buf()),
        };
        if let Some(fid) = config.fid.as_mut() {
            fid.real_index = resolve(base, &fid.real_index);
            fid.synthetic_index = resolve(base, &fid.synthetic_index);
        }
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(PipelineError::LambdaOutOfRange { value: self.lambda });
        }
        if self.base_model_id.is_empty() {
            return Err(PipelineError::InvalidConfig {
                message: "base_model_id is empty".into(),
            });
        }
        Ok(())
    }
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}
