//! `trace train`: split, fit, and persist one model with a full manifest.

use clap::{Args as ClapArgs, ValueEnum};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use trace_core::checkpoint::save_checkpoint;
use trace_core::data::{stratified_split, TabularDataset};
use trace_core::model::TraceConfig;
use trace_core::nnmlp::NnMlpConfig;
use trace_core::train::{seed_stream, train, ModelSpec, OptimizerKind, TrainConfig};
use trace_core::Result;

use crate::manifest::{Outputs, RunManifest};
use crate::util;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Trace,
    Nnmlp,
}

fn parse_optimizer(s: &str) -> std::result::Result<OptimizerKind, String> {
    OptimizerKind::from_str(s).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, ClapArgs)]
pub struct DataFlags {
    /// Dataset CSV matching the schema's column layout.
    #[arg(long)]
    pub data: PathBuf,
    /// Schema JSON describing features and the label column.
    #[arg(long)]
    pub schema: PathBuf,
}

/// Model and fitting hyperparameters, shared by every training command.
#[derive(Debug, Clone, ClapArgs)]
pub struct FitFlags {
    #[arg(long, value_enum, default_value_t = ModelKind::Trace)]
    pub model: ModelKind,
    /// Focal loss weight on the positive class.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Focal loss focusing exponent.
    #[arg(long, default_value_t = 2.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 2e-4)]
    pub lr: f64,
    /// adam or rmsprop.
    #[arg(long, default_value = "adam", value_parser = parse_optimizer)]
    pub optimizer: OptimizerKind,
    /// Decision threshold for the validation report.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, default_value_t = 0.25)]
    pub val_fraction: f64,
    /// Root seed; the split, init, batching, and dropout streams derive
    /// from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Transformer embedding width.
    #[arg(long, default_value_t = 128)]
    pub model_size: usize,
    /// Transformer encoder layers.
    #[arg(long, default_value_t = 1)]
    pub layers: usize,
    /// Transformer attention heads.
    #[arg(long, default_value_t = 2)]
    pub heads: usize,
    /// Transformer feed-forward width as a multiple of the embedding.
    #[arg(long, default_value_t = 4)]
    pub mlp_ratio: usize,
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
    /// One continuous embedder shared by all continuous features.
    #[arg(long)]
    pub shared_continuous_mlp: bool,
    /// Constrained-MLP hidden widths.
    #[arg(long, default_value_t = 64)]
    pub hidden1: usize,
    #[arg(long, default_value_t = 64)]
    pub hidden2: usize,
    /// Replace checkbox groups with per-member categorical features
    /// (the checkbox-embedding ablation arm).
    #[arg(long)]
    pub expand_checkboxes: bool,
    /// Skip standardization of continuous features.
    #[arg(long)]
    pub no_standardize: bool,
}

impl FitFlags {
    pub fn model_spec(&self) -> ModelSpec {
        match self.model {
            ModelKind::Trace => ModelSpec::Trace(TraceConfig {
                model_size: self.model_size,
                n_encoder_layers: self.layers,
                n_heads: self.heads,
                mlp_ratio: self.mlp_ratio,
                dropout: self.dropout,
                shared_continuous_mlp: self.shared_continuous_mlp,
                ..TraceConfig::default()
            }),
            ModelKind::Nnmlp => ModelSpec::NnMlp(NnMlpConfig {
                hidden1: self.hidden1,
                hidden2: self.hidden2,
            }),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.lr,
            batch_size: self.batch_size,
            focal_alpha: self.alpha,
            focal_gamma: self.gamma,
            optimizer: self.optimizer,
            threshold: self.threshold,
            seed: self.seed,
            standardize: !self.no_standardize,
            expand_checkboxes: self.expand_checkboxes,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, ClapArgs)]
pub struct Args {
    #[command(flatten)]
    pub data: DataFlags,
    #[command(flatten)]
    pub fit: FitFlags,
    /// Keep incomplete samples in the training split (default).
    #[arg(long, conflicts_with = "drop_missing")]
    pub keep_missing: bool,
    /// Drop incomplete samples from the training split.
    #[arg(long)]
    pub drop_missing: bool,
    /// Output directory for manifest, checkpoint, history, and report.
    #[arg(long)]
    pub out: PathBuf,
}

/// The whole training pipeline given already-resolved settings; shared
/// with `replay`. Writes the manifest before the first optimizer step.
pub struct ResolvedRun {
    pub dataset: TabularDataset,
    pub data_path: String,
    pub data_sha256: String,
    pub schema_path: String,
    pub val_fraction: f64,
    pub drop_missing: bool,
    pub spec: ModelSpec,
    pub config: TrainConfig,
}

pub fn execute(run: ResolvedRun, out: &Path) -> Result<RunManifest> {
    run.config.validate()?;
    let split_seed = seed_stream(run.config.seed, "split");
    let (full_train, val) = stratified_split(&run.dataset, run.val_fraction, split_seed)?;
    let train_set = if run.drop_missing { full_train.drop_incomplete()? } else { full_train };

    util::create_out_dir(out)?;
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: "train".into(),
        data_path: run.data_path,
        data_sha256: run.data_sha256,
        schema_path: run.schema_path,
        schema_fingerprint: run.dataset.schema().fingerprint(),
        val_fraction: run.val_fraction,
        drop_missing: run.drop_missing,
        train_samples: train_set.len(),
        val_samples: val.len(),
        model: run.spec.clone(),
        train: run.config.clone(),
        outputs: Outputs::default(),
    };
    manifest.write(out)?;

    let outcome = train(&run.spec, &train_set, &val, &run.config)?;

    util::write_bytes(
        &out.join(&manifest.outputs.history),
        outcome.history.to_csv_string().as_bytes(),
    )?;
    save_checkpoint(&outcome.model, out.join(&manifest.outputs.checkpoint))?;
    val.write_csv(out.join(&manifest.outputs.val_csv))?;
    let best = outcome.history.best();
    util::write_bytes(
        &out.join(&manifest.outputs.report),
        util::report_csv(&best.val).as_bytes(),
    )?;

    println!(
        "trained {} for {} epochs on {} samples ({} validation)",
        match run.spec {
            ModelSpec::Trace(_) => "trace",
            ModelSpec::NnMlp(_) => "nnmlp",
        },
        run.config.epochs,
        manifest.train_samples,
        manifest.val_samples,
    );
    println!("best epoch {} (validation F1 {:.4})", best.epoch, best.val.f1);
    util::print_report(&best.val);
    Ok(manifest)
}

pub fn run(args: Args) -> Result<()> {
    let schema = util::load_schema(&args.data.schema)?;
    let dataset = util::load_dataset(&args.data.data, &schema)?;
    let run = ResolvedRun {
        data_path: args.data.data.display().to_string(),
        data_sha256: util::sha256_file(&args.data.data)?,
        schema_path: args.data.schema.display().to_string(),
        dataset,
        val_fraction: args.fit.val_fraction,
        drop_missing: args.drop_missing,
        spec: args.fit.model_spec(),
        config: args.fit.train_config(),
    };
    execute(run, &args.out)?;
    Ok(())
}
