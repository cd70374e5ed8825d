//! Stage implementations behind each subcommand.
//!
//! Every stage reads the artifacts of its predecessors from the output
//! directory, verifies their digest chain, and writes exactly one artifact
//! of its own. Nothing here draws ambient entropy: all randomness flows
//! from the resolved seed.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use synthgen_core::assembly::{assemble_manifest, longtail_synth_budget};
use synthgen_core::backend::{make_caption_backend, make_generation_backend};
use synthgen_core::bank::build_bank;
use synthgen_core::catalog::{
    apply_splits, load_catalog, long_tail_counts, make_fewshot_split, make_longtail_split,
    make_validation_split, save_catalog, CatalogHeader,
};
use synthgen_core::digest::file_digest;
use synthgen_core::error::{PipelineError, Result};
use synthgen_core::fid::{load_feature_index, load_features, per_class_fid};
use synthgen_core::finetune::build_finetune_job;
use synthgen_core::generate::{execute_plan, write_generation_set};
use synthgen_core::sampler::build_generation_plan;
use synthgen_core::scm::{interventional_gap, DiscreteScm, PipelinePolicy, TrainingDraw};
use synthgen_core::{
    AssemblyMode, BudgetConfig, CaptionBank, DatasetCatalog, DatasetConfig, GenerationPlan,
    GenerationSet, ImageRecord, MarginalizationMode, Split,
};

use crate::config::RunConfig;
use crate::{Cli, Command};

/// Print a status line, tolerating a closed pipe (`synthgen ... | head`).
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

// ── artifact names ───────────────────────────────────────────────────

const CATALOG_FILE: &str = "catalog.jsonl";
const SPLIT_FILE: &str = "split.jsonl";
const BANK_FILE: &str = "bank.jsonl";
const JOB_FILE: &str = "finetune_job.json";
const PLAN_FILE: &str = "plan.jsonl";
const GENERATION_FILE: &str = "generation.jsonl";
const MANIFEST_FILE: &str = "manifest.jsonl";
const FID_REPORT_JSON: &str = "fid_report.json";
const FID_REPORT_CSV: &str = "fid_report.csv";
const SCM_DEMO_FILE: &str = "scm_demo.csv";

/// Per-invocation view of the run: config plus flag overrides applied.
struct Ctx {
    run: RunConfig,
    out: PathBuf,
    seed: u64,
    mode: MarginalizationMode,
    lambda: f64,
    budget: Option<u32>,
    dry_run: bool,
}

impl Ctx {
    fn from_cli(cli: &Cli) -> Result<Ctx> {
        let run = RunConfig::load(&cli.config)?;
        let mode = match cli.mode.as_deref() {
            Some(text) => MarginalizationMode::from_str(text)?,
            None => run.marginalization,
        };
        let lambda = cli.lambda.unwrap_or(run.lambda);
        if !(0.0..=1.0).contains(&lambda) {
            return Err(PipelineError::LambdaOutOfRange { value: lambda });
        }
        Ok(Ctx {
            out: cli.out.clone().unwrap_or_else(|| run.out_dir.clone()),
            seed: cli.seed.unwrap_or(run.global_seed),
            mode,
            lambda,
            budget: cli.budget,
            dry_run: cli.dry_run,
            run,
        })
    }

    fn artifact(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Catalog the non-ingest stages read: the split artifact when one
    /// exists, otherwise the ingested catalog.
    fn catalog_path(&self) -> PathBuf {
        let split = self.artifact(SPLIT_FILE);
        if split.exists() {
            split
        } else {
            self.artifact(CATALOG_FILE)
        }
    }

    fn dataset(&self) -> Result<DatasetConfig> {
        DatasetConfig::load(&self.run.dataset_config)
    }

    fn load_stage_catalog(&self, dataset: &DatasetConfig) -> Result<(DatasetCatalog, PathBuf)> {
        let path = self.catalog_path();
        let catalog = load_catalog(&path, dataset)?;
        Ok((catalog, path))
    }

    fn ensure_out_dir(&self) -> Result<()> {
        fs::create_dir_all(&self.out).map_err(|e| PipelineError::io(&self.out, e))
    }

    /// Long-tail budget for this dataset, with `--budget` overriding the
    /// per-class total.
    fn longtail_budget(&self, dataset: &DatasetConfig) -> Result<BudgetConfig> {
        let duplication =
            dataset
                .duplication_factor_c
                .ok_or_else(|| PipelineError::InvalidConfig {
                    message: format!(
                        "dataset {} sets no duplication_factor_c; long-tail assembly needs one",
                        dataset.name
                    ),
                })?;
        BudgetConfig::new(self.budget.unwrap_or(dataset.total_budget_t), duplication)
    }
}

fn train_records(catalog: &DatasetCatalog) -> Vec<ImageRecord> {
    catalog
        .split_records(Split::Train)
        .into_iter()
        .cloned()
        .collect()
}

/// Dispatch one subcommand. `scm-demo` runs without a config file so the
/// causal toys stay usable outside a pipeline directory.
pub fn run(cli: Cli) -> Result<()> {
    if let Command::ScmDemo { model } = &cli.command {
        return scm_demo(&cli, model);
    }
    let ctx = Ctx::from_cli(&cli)?;
    match cli.command {
        Command::Ingest => ingest(&ctx),
        Command::Split => split(&ctx),
        Command::Extract => extract(&ctx),
        Command::FinetuneManifest => finetune_manifest(&ctx),
        Command::Plan => plan(&ctx),
        Command::Generate => generate(&ctx),
        Command::Assemble => assemble(&ctx),
        Command::Fid => fid(&ctx),
        Command::ScmDemo { .. } => unreachable!("handled above"),
    }
}

// ── stages ───────────────────────────────────────────────────────────

fn ingest(ctx: &Ctx) -> Result<()> {
    let dataset = ctx.dataset()?;
    let catalog = load_catalog(&ctx.run.source_manifest, &dataset)?;
    ctx.ensure_out_dir()?;
    let header = CatalogHeader {
        kind: "catalog".into(),
        count: catalog.len(),
        upstream_digest: Some(file_digest(&ctx.run.source_manifest)?),
        note: Some(dataset.name.clone()),
    };
    let path = ctx.artifact(CATALOG_FILE);
    save_catalog(&path, catalog.records(), Some(&header))?;
    say!(
        "ingested {} records across {} classes -> {}",
        catalog.len(),
        dataset.classes.len(),
        path.display()
    );
    Ok(())
}

fn split(ctx: &Ctx) -> Result<()> {
    let dataset = ctx.dataset()?;
    let source = ctx.artifact(CATALOG_FILE);
    let catalog = load_catalog(&source, &dataset)?;
    let train = match ctx.run.assembly {
        AssemblyMode::Fewshot => {
            make_fewshot_split(&catalog, &dataset, ctx.run.fewshot_k, ctx.seed)?
        }
        AssemblyMode::Longtail => {
            let shape =
                ctx.run
                    .longtail_split
                    .as_ref()
                    .ok_or_else(|| PipelineError::InvalidConfig {
                        message: "long-tail split needs longtail_split {n_max, imbalance_factor}"
                            .into(),
                    })?;
            let profile =
                long_tail_counts(shape.n_max, shape.imbalance_factor, dataset.classes.len())?;
            make_longtail_split(&catalog, &dataset, &profile, ctx.seed)?
        }
    };
    let val = make_validation_split(
        &catalog,
        &dataset,
        &train,
        dataset.val_per_class,
        ctx.seed,
        ctx.run.val_pool,
    )?;
    let records = apply_splits(&catalog, &train, &val);
    let header = CatalogHeader {
        kind: "split_catalog".into(),
        count: records.len(),
        upstream_digest: Some(file_digest(&source)?),
        note: Some(dataset.name.clone()),
    };
    let path = ctx.artifact(SPLIT_FILE);
    save_catalog(&path, &records, Some(&header))?;
    say!(
        "split {} train / {} val images -> {}",
        train.total(),
        val.total(),
        path.display()
    );
    Ok(())
}

fn extract(ctx: &Ctx) -> Result<()> {
    let dataset = ctx.dataset()?;
    let (catalog, catalog_path) = ctx.load_stage_catalog(&dataset)?;
    let records = train_records(&catalog);
    let backend = make_caption_backend(&ctx.run.caption_backend)?;
    let root = ctx.run.data_root.clone().unwrap_or_default();
    let bank = build_bank(
        &records,
        &dataset.descriptor,
        &dataset.name,
        backend.as_ref(),
        backend.name(),
        Some(file_digest(&catalog_path)?),
        ctx.run.caption_backend.max_in_flight,
        |record| fs::read(root.join(&record.path)),
    )?;
    let path = ctx.artifact(BANK_FILE);
    bank.save(&path)?;
    let stats = bank.stats();
    say!(
        "extracted {} caption entries, {} distinct context pairs -> {}",
        bank.len(),
        stats.distinct_pairs,
        path.display()
    );
    Ok(())
}

fn finetune_manifest(ctx: &Ctx) -> Result<()> {
    let dataset = ctx.dataset()?;
    let (catalog, catalog_path) = ctx.load_stage_catalog(&dataset)?;
    let bank = CaptionBank::load(&ctx.artifact(BANK_FILE))?;
    let catalog_digest = file_digest(&catalog_path)?;
    check_bank_catalog_digest(&bank, &catalog_digest)?;
    let job = build_finetune_job(
        &bank,
        &train_records(&catalog),
        &dataset.descriptor,
        &ctx.run.base_model_id,
        ctx.run.hyperparams.clone(),
        Some(catalog_digest),
    )?;
    let path = ctx.artifact(JOB_FILE);
    job.save(&path)?;
    say!(
        "fine-tune job: {} caption pairs on {} -> {}",
        job.pairs.len(),
        job.base_model_id,
        path.display()
    );
    Ok(())
}

fn plan(ctx: &Ctx) -> Result<()> {
    let dataset = ctx.dataset()?;
    let bank = CaptionBank::load(&ctx.artifact(BANK_FILE))?;
    let per_class = bank.stats().per_class;
    let budgets: BTreeMap<String, usize> = match ctx.run.assembly {
        AssemblyMode::Fewshot => {
            let count = ctx.budget.unwrap_or(ctx.run.synthetic_per_class) as usize;
            per_class.keys().map(|c| (c.clone(), count)).collect()
        }
        AssemblyMode::Longtail => {
            let budget = ctx.longtail_budget(&dataset)?;
            per_class
                .iter()
                .map(|(c, &n)| (c.clone(), longtail_synth_budget(n, budget) as usize))
                .collect()
        }
    };
    let plan = build_generation_plan(
        &bank,
        &dataset.descriptor,
        &budgets,
        ctx.mode,
        ctx.seed,
        ctx.run.class_only_prompts,
    )?;
    let path = ctx.artifact(PLAN_FILE);
    plan.save(&path)?;
    say!(
        "planned {} generations across {} classes ({} scope) -> {}",
        plan.items.len(),
        budgets.len(),
        plan.mode.as_str(),
        path.display()
    );
    Ok(())
}

fn generate(ctx: &Ctx) -> Result<()> {
    let plan = GenerationPlan::load(&ctx.artifact(PLAN_FILE))?;
    let bank = CaptionBank::load(&ctx.artifact(BANK_FILE))?;
    plan.verify_against_bank(&bank)?;
    if ctx.dry_run {
        say!(
            "dry run: {} items, mode {}, no backend calls",
            plan.items.len(),
            plan.mode.as_str()
        );
        let stdout = std::io::stdout();
        let mut lock = stdout.lock();
        for item in &plan.items {
            // A closed pipe means the reader saw enough; stop quietly.
            if writeln!(
                lock,
                "  [{:06}] {} seed={} prompt={:?}",
                item.index, item.class_label, item.seed, item.prompt
            )
            .is_err()
            {
                break;
            }
        }
        return Ok(());
    }
    let backend = make_generation_backend(&ctx.run.generation_backend)?;
    let payloads = execute_plan(
        &plan,
        backend.as_ref(),
        &ctx.run.generation_params,
        ctx.run.generation_backend.max_in_flight,
    )?;
    let set = write_generation_set(
        &plan,
        &payloads,
        backend.name(),
        &ctx.run.generation_params,
        &ctx.out,
    )?;
    let path = ctx.artifact(GENERATION_FILE);
    set.save(&path)?;
    say!(
        "generated {} images under {} -> {}",
        set.records.len(),
        ctx.out.join("images").display(),
        path.display()
    );
    Ok(())
}

fn assemble(ctx: &Ctx) -> Result<()> {
    let dataset = ctx.dataset()?;
    let (catalog, _) = ctx.load_stage_catalog(&dataset)?;
    let bank = CaptionBank::load(&ctx.artifact(BANK_FILE))?;
    let plan = GenerationPlan::load(&ctx.artifact(PLAN_FILE))?;
    plan.verify_against_bank(&bank)?;
    let set = GenerationSet::load(&ctx.artifact(GENERATION_FILE))?;
    set.verify_against_plan(&plan)?;
    set.verify_payloads(&ctx.out)?;
    let budget = match ctx.run.assembly {
        AssemblyMode::Fewshot => None,
        AssemblyMode::Longtail => Some(ctx.longtail_budget(&dataset)?),
    };
    let manifest = assemble_manifest(
        &train_records(&catalog),
        &set.to_synthetic_items(),
        ctx.lambda,
        ctx.run.assembly,
        budget,
        Some(set.plan_digest.clone()),
    )?;
    let path = ctx.artifact(MANIFEST_FILE);
    manifest.save(&path)?;
    say!(
        "assembled {} manifest entries ({} assembly, lambda {}) -> {}",
        manifest.entries.len(),
        ctx.run.assembly.as_str(),
        ctx.lambda,
        path.display()
    );
    Ok(())
}

fn fid(ctx: &Ctx) -> Result<()> {
    let inputs = ctx
        .run
        .fid
        .as_ref()
        .ok_or_else(|| PipelineError::InvalidConfig {
            message: "fid needs a `fid` config section with real_index and synthetic_index".into(),
        })?;
    let real = load_feature_sets(&inputs.real_index)?;
    let synthetic = load_feature_sets(&inputs.synthetic_index)?;
    let report = per_class_fid(&real, &synthetic, inputs.eps)?;
    ctx.ensure_out_dir()?;

    let json_path = ctx.artifact(FID_REPORT_JSON);
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    fs::write(&json_path, json).map_err(|e| PipelineError::io(&json_path, e))?;

    let mut csv = String::from("class,fid,n_real,n_syn\n");
    for (class, class_fid) in &report.per_class {
        csv.push_str(&format!(
            "{},{:.6},{},{}\n",
            class, class_fid.fid, class_fid.n_real, class_fid.n_syn
        ));
    }
    let csv_path = ctx.artifact(FID_REPORT_CSV);
    fs::write(&csv_path, csv).map_err(|e| PipelineError::io(&csv_path, e))?;

    say!(
        "scored {} classes, score mode {:.1} (count {}) -> {}",
        report.per_class.len(),
        report.mode_estimate.center,
        report.mode_estimate.count,
        csv_path.display()
    );
    Ok(())
}

/// Exercise a built-in causal toy model: for each context policy and sample
/// count, the total-variation distance between the simulated pipeline output
/// and the exact interventional distribution, averaged over classes.
fn scm_demo(cli: &Cli, model: &str) -> Result<()> {
    let scm = DiscreteScm::builtin(model).ok_or_else(|| PipelineError::InvalidConfig {
        message: format!("unknown model {model:?} (expected toy-confounded or toy-noisy)"),
    })?;
    // The run config is optional here; the toys need only a seed and a
    // destination.
    let (out, seed) = match RunConfig::load(&cli.config) {
        Ok(run) => (
            cli.out.clone().unwrap_or(run.out_dir),
            cli.seed.unwrap_or(run.global_seed),
        ),
        Err(_) => (
            cli.out.clone().unwrap_or_else(|| PathBuf::from(".")),
            cli.seed.unwrap_or(0),
        ),
    };
    // Five samples per class: the scarcity regime where observational
    // context reuse stays confounded but dataset-wide marginalization
    // already tracks the interventional distribution.
    let draw = TrainingDraw::class_matched(&scm, 5)?;
    let mut csv = String::from("policy,n_samples,tv_to_interventional\n");
    for &n in &[1_000usize, 10_000, 100_000] {
        for policy in PipelinePolicy::ALL {
            let gaps = interventional_gap(&scm, &draw, policy, n, seed)?;
            let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
            csv.push_str(&format!("{},{},{:.6}\n", policy.as_str(), n, mean));
        }
    }
    fs::create_dir_all(&out).map_err(|e| PipelineError::io(&out, e))?;
    let path = out.join(SCM_DEMO_FILE);
    fs::write(&path, &csv).map_err(|e| PipelineError::io(&path, e))?;
    let _ = write!(std::io::stdout(), "{csv}");
    say!("wrote {}", path.display());
    Ok(())
}

// ── helpers ──────────────────────────────────────────────────────────

/// The bank must descend from the catalog the stage is about to use.
fn check_bank_catalog_digest(bank: &CaptionBank, catalog_digest: &str) -> Result<()> {
    match &bank.catalog_digest {
        Some(expected) if expected == catalog_digest => Ok(()),
        Some(expected) => Err(PipelineError::DigestMismatch {
            artifact: "catalog".into(),
            expected: expected.clone(),
            actual: catalog_digest.to_string(),
        }),
        None => Err(PipelineError::InvalidConfig {
            message: "bank records no catalog digest; rebuild it with `extract`".into(),
        }),
    }
}

/// Load every per-class feature file named by an index. Paths inside the
/// index resolve against the index file's directory.
fn load_feature_sets(index_path: &Path) -> Result<BTreeMap<String, DMatrix<f64>>> {
    let base = index_path.parent().unwrap_or(Path::new("."));
    let mut sets = BTreeMap::new();
    for (class, path) in load_feature_index(index_path)? {
        let resolved = if path.is_absolute() {
            path
        } else {
            base.join(path)
        };
        sets.insert(class, load_features(&resolved)?);
    }
    Ok(sets)
}
