//! Training loop shared by both models: stratified batches, focal loss,
//! seeded optimizers, plateau scheduling on balanced accuracy, and
//! best-epoch selection by validation F1.
//!
//! All randomness flows from one seed through named sub-streams
//! ([`seed_stream`]), so a `(config, data)` pair reproduces its whole
//! trajectory bit for bit.

pub mod loss;
pub mod metrics;
pub mod optim;
pub mod scheduler;

pub use loss::focal_loss;
pub use metrics::{evaluate_probs, report_from_confusion, EvalReport};
pub use optim::{adam_step, rmsprop_step, AdamState, OptimizerKind, OptimizerState, RmsPropState};
pub use scheduler::{PlateauConfig, PlateauScheduler};

use crate::data::{make_batch, DesignMatrix, FeatureSchema, TabularDataset};
use crate::data::stratified_batches;
use crate::error::{Error, Result};
use crate::model::{trace_forward, AttentionCapture, TraceConfig, TraceParams};
use crate::nnmlp::{nnmlp_forward, NnMlpConfig, NnMlpParams};
use crate::tensor::{sigmoid, Tape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::Path;

/// Forward passes over frozen parameters run in chunks of this many samples
/// to bound tape memory.
const EVAL_CHUNK: usize = 256;

/// Derives an independent RNG seed from a base seed and a stream name.
pub fn seed_stream(seed: u64, name: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 is 32 bytes"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub optimizer: OptimizerKind,
    pub scheduler: PlateauConfig,
    pub threshold: f64,
    pub seed: u64,
    /// Standardize continuous features with train-split statistics.
    pub standardize: bool,
    /// Replace checkbox groups with per-member categorical features before
    /// training (the checkbox-embedding ablation arm).
    pub expand_checkboxes: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            learning_rate: 2e-4,
            batch_size: 32,
            focal_alpha: 0.5,
            focal_gamma: 2.0,
            optimizer: OptimizerKind::Adam,
            scheduler: PlateauConfig::default(),
            threshold: 0.5,
            seed: 0,
            standardize: true,
            expand_checkboxes: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive and finite",
                self.learning_rate
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be >= 2".into()));
        }
        if !(self.focal_alpha > 0.0 && self.focal_alpha < 1.0) {
            return Err(Error::Config(format!(
                "focal alpha {} outside (0, 1)",
                self.focal_alpha
            )));
        }
        if !(self.focal_gamma >= 0.0 && self.focal_gamma.is_finite()) {
            return Err(Error::Config(format!(
                "focal gamma {} must be finite and >= 0",
                self.focal_gamma
            )));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!(
                "threshold {} outside (0, 1)",
                self.threshold
            )));
        }
        self.scheduler.validate()
    }
}

/// Continuous-feature preprocessing fitted on the training split and
/// replayed verbatim on any later dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocess {
    pub standardize: bool,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Post-standardization minima used to shift inputs non-negative for
    /// the constrained model; absent for the transformer.
    pub cont_mins: Option<Vec<f64>>,
}

impl Preprocess {
    pub fn fit(train: &TabularDataset, standardize: bool, shift_non_negative: bool) -> Self {
        let nc = train.schema().n_continuous();
        let (means, stds) = if standardize {
            train.standardize_stats()
        } else {
            (vec![0.0; nc], vec![1.0; nc])
        };
        let cont_mins = if shift_non_negative {
            let standardized = train
                .apply_standardization(&means, &stds)
                .expect("stats fitted on the same schema");
            Some(standardized.continuous_mins())
        } else {
            None
        };
        Preprocess { standardize, means, stds, cont_mins }
    }

    pub fn apply(&self, data: &TabularDataset) -> Result<TabularDataset> {
        let mut out = data.apply_standardization(&self.means, &self.stds)?;
        if let Some(mins) = &self.cont_mins {
            out = out.shift_continuous(mins)?;
        }
        Ok(out)
    }
}

/// Which model to train, with its architecture settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum ModelSpec {
    Trace(TraceConfig),
    NnMlp(NnMlpConfig),
}

/// Trained parameters of either model.
#[derive(Debug, Clone)]
pub enum ModelParams {
    Trace { config: TraceConfig, params: TraceParams },
    NnMlp { config: NnMlpConfig, params: NnMlpParams },
}

/// A trained model together with everything needed to score new data:
/// the (possibly checkbox-expanded) schema it runs on, the fingerprint of
/// the raw data schema it accepts, and the fitted preprocessing.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub schema: FeatureSchema,
    pub source_fingerprint: String,
    pub checkbox_expanded: bool,
    pub preprocess: Preprocess,
    pub params: ModelParams,
}

impl FittedModel {
    pub fn kind(&self) -> &'static str {
        match &self.params {
            ModelParams::Trace { .. } => "trace",
            ModelParams::NnMlp { .. } => "nnmlp",
        }
    }

    /// Checks the fingerprint, applies checkbox expansion and
    /// preprocessing; the result is ready for a forward pass.
    pub fn prepare(&self, data: &TabularDataset) -> Result<TabularDataset> {
        let fp = data.schema().fingerprint();
        if fp != self.source_fingerprint {
            return Err(Error::Checkpoint(format!(
                "data schema fingerprint {fp} does not match the fingerprint {} the model was trained on",
                self.source_fingerprint
            )));
        }
        let expanded;
        let view = if self.checkbox_expanded {
            expanded = data.expand_checkboxes()?;
            &expanded
        } else {
            data
        };
        self.preprocess.apply(view)
    }

    pub fn logits(&self, data: &TabularDataset) -> Result<Vec<f64>> {
        let prepared = self.prepare(data)?;
        match &self.params {
            ModelParams::Trace { config, params } => {
                trace_logits(params, config, &prepared, None)
            }
            ModelParams::NnMlp { params, .. } => {
                nnmlp_logits(params, &prepared.one_hot_encode())
            }
        }
    }

    pub fn probabilities(&self, data: &TabularDataset) -> Result<Vec<f64>> {
        Ok(self.logits(data)?.into_iter().map(sigmoid).collect())
    }

    /// Logits plus captured attention; errors for the MLP, which has none.
    pub fn logits_with_attention(
        &self,
        data: &TabularDataset,
    ) -> Result<(Vec<f64>, AttentionCapture)> {
        let prepared = self.prepare(data)?;
        match &self.params {
            ModelParams::Trace { config, params } => {
                let mut capture = AttentionCapture::default();
                let logits = trace_logits(params, config, &prepared, Some(&mut capture))?;
                Ok((logits, capture))
            }
            ModelParams::NnMlp { .. } => {
                Err(Error::Contract("model has no attention".into()))
            }
        }
    }

    pub fn evaluate(&self, data: &TabularDataset, threshold: f64) -> Result<EvalReport> {
        let probs = self.probabilities(data)?;
        evaluate_probs(&probs, data.labels(), threshold)
    }
}

/// Chunked forward pass of frozen transformer parameters over a prepared
/// dataset; optionally concatenates attention captures across chunks.
fn trace_logits(
    params: &TraceParams,
    config: &TraceConfig,
    prepared: &TabularDataset,
    mut capture: Option<&mut AttentionCapture>,
) -> Result<Vec<f64>> {
    let n = prepared.len();
    let mut logits = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let indices: Vec<usize> = (start..end).collect();
        let batch = make_batch(prepared, &indices)?;
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape);
        let mut chunk_capture = capture.as_ref().map(|_| AttentionCapture::default());
        let out = trace_forward(
            &mut tape,
            &batch,
            &vars,
            config,
            chunk_capture.as_mut(),
            None,
        )?;
        logits.extend_from_slice(tape.value(out));
        if let (Some(total), Some(chunk)) = (capture.as_deref_mut(), chunk_capture) {
            merge_capture(total, chunk);
        }
        start = end;
    }
    Ok(logits)
}

fn merge_capture(total: &mut AttentionCapture, chunk: AttentionCapture) {
    if total.layers.is_empty() {
        total.layers = chunk.layers;
        return;
    }
    for (t, c) in total.layers.iter_mut().zip(chunk.layers) {
        debug_assert_eq!(t.heads, c.heads);
        debug_assert_eq!(t.n_tokens, c.n_tokens);
        t.batch += c.batch;
        t.weights.extend(c.weights);
    }
}

/// Chunked forward pass of frozen MLP parameters over a design matrix.
fn nnmlp_logits(params: &NnMlpParams, design: &DesignMatrix) -> Result<Vec<f64>> {
    let n = design.rows;
    let mut logits = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let x: Vec<f64> = (start..end).flat_map(|i| design.row(i).to_vec()).collect();
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape);
        let out = nnmlp_forward(&mut tape, &x, end - start, &vars)?;
        logits.extend_from_slice(tape.value(out));
        start = end;
    }
    Ok(logits)
}

/// One epoch's record in the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean training loss over all samples of the epoch.
    pub loss: f64,
    pub val: EvalReport,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Index into `epochs` of the best epoch (highest validation F1,
    /// earliest on ties).
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch]
    }

    /// CSV with one row per epoch. Values use the shortest round-trip
    /// float form, so identical runs serialize byte-identically.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("epoch,loss,acc,f1,sens,spec,ba,lr\n");
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.epoch,
                r.loss,
                r.val.accuracy,
                r.val.f1,
                r.val.sensitivity,
                r.val.specificity,
                r.val.balanced_accuracy,
                r.lr
            ));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv_string().as_bytes())?;
        Ok(())
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub history: TrainHistory,
    pub model: FittedModel,
}

/// Trains `spec` on `train_set`, validating each epoch on `val_set`, and
/// returns the history plus the best-F1 model.
pub fn train(
    spec: &ModelSpec,
    train_set: &TabularDataset,
    val_set: &TabularDataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let source_fingerprint = train_set.schema().fingerprint();
    if val_set.schema().fingerprint() != source_fingerprint {
        return Err(Error::Contract(
            "training and validation splits use different schemas".into(),
        ));
    }
    if train_set.positive_count() == 0 || train_set.positive_count() == train_set.len() {
        return Err(Error::Dataset("training split needs both classes".into()));
    }
    if val_set.is_empty() {
        return Err(Error::Dataset("validation split is empty".into()));
    }

    let expand = config.expand_checkboxes && train_set.schema().n_checkbox() > 0;
    let (train_x, val_x);
    let (train_view, val_view) = if expand {
        train_x = train_set.expand_checkboxes()?;
        val_x = val_set.expand_checkboxes()?;
        (&train_x, &val_x)
    } else {
        (train_set, val_set)
    };

    let is_nnmlp = matches!(spec, ModelSpec::NnMlp(_));
    let preprocess = Preprocess::fit(train_view, config.standardize, is_nnmlp);
    let train_p = preprocess.apply(train_view)?;
    let val_p = preprocess.apply(val_view)?;

    let init_seed = seed_stream(config.seed, "init");
    let mut trainer = match spec {
        ModelSpec::Trace(tc) => Trainer::Trace {
            config: tc.clone(),
            params: TraceParams::init(train_p.schema(), tc, init_seed)?,
            dropout_rng: ChaCha8Rng::seed_from_u64(seed_stream(config.seed, "dropout")),
        },
        ModelSpec::NnMlp(mc) => {
            let design = train_p.one_hot_encode();
            Trainer::NnMlp {
                config: mc.clone(),
                params: NnMlpParams::init(
                    design.cols,
                    mc,
                    train_p.positive_ratio(),
                    init_seed,
                )?,
                train_design: design,
                val_design: val_p.one_hot_encode(),
            }
        }
    };

    let mut optimizer = OptimizerState::new(config.optimizer);
    let mut sched = PlateauScheduler::new(config.scheduler);
    let mut lr = config.learning_rate;
    let n_train = train_p.len();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ModelParams)> = None;

    for epoch in 1..=config.epochs {
        let batch_seed = seed_stream(config.seed, &format!("batches/{epoch}"));
        let batches = stratified_batches(train_p.labels(), config.batch_size, batch_seed)?;
        let mut loss_sum = 0.0;
        for (bi, indices) in batches.iter().enumerate() {
            let loss = trainer
                .step(&train_p, indices, config, &mut optimizer, lr)
                .map_err(|e| match e {
                    Error::Diverged(msg) => {
                        Error::Diverged(format!("epoch {epoch}, batch {bi}: {msg}"))
                    }
                    other => other,
                })?;
            loss_sum += loss * indices.len() as f64;
        }
        let epoch_loss = loss_sum / n_train as f64;

        let val_logits = trainer.frozen_logits(&val_p)?;
        let probs: Vec<f64> = val_logits.into_iter().map(sigmoid).collect();
        let report = evaluate_probs(&probs, val_p.labels(), config.threshold)?;
        history.push(EpochRecord { epoch, loss: epoch_loss, val: report, lr });

        let improved = match &best {
            None => true,
            Some((best_f1, _, _)) => report.f1 > *best_f1,
        };
        if improved {
            best = Some((report.f1, epoch - 1, trainer.snapshot()));
        }
        lr = sched.update(report.balanced_accuracy, lr);
    }

    let (_, best_epoch, best_params) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        history: TrainHistory { epochs: history, best_epoch },
        model: FittedModel {
            schema: train_p.schema().clone(),
            source_fingerprint,
            checkbox_expanded: expand,
            preprocess,
            params: best_params,
        },
    })
}

/// Harvests gradients in leaf-creation order (the canonical parameter
/// order) and applies one optimizer step.
fn optimize(
    tape: &Tape,
    mut named: Vec<(String, &mut crate::tensor::Tensor)>,
    optimizer: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    let grads: Vec<Vec<f64>> = tape
        .trainable_leaves()
        .iter()
        .map(|&v| tape.grad(v).to_vec())
        .collect();
    let mut tensors: Vec<&mut crate::tensor::Tensor> =
        named.iter_mut().map(|(_, t)| &mut **t).collect();
    optimizer.step(&mut tensors, &grads, lr)
}

/// Model-specific training state.
enum Trainer {
    Trace {
        config: TraceConfig,
        params: TraceParams,
        dropout_rng: ChaCha8Rng,
    },
    NnMlp {
        config: NnMlpConfig,
        params: NnMlpParams,
        train_design: DesignMatrix,
        val_design: DesignMatrix,
    },
}

impl Trainer {
    /// One optimizer step on one batch; returns the batch loss.
    fn step(
        &mut self,
        train_p: &TabularDataset,
        indices: &[usize],
        config: &TrainConfig,
        optimizer: &mut OptimizerState,
        lr: f64,
    ) -> Result<f64> {
        let targets: Vec<f64> =
            indices.iter().map(|&i| f64::from(train_p.label(i))).collect();
        match self {
            Trainer::Trace { config: tc, params, dropout_rng } => {
                let batch = make_batch(train_p, indices)?;
                let mut tape = Tape::new();
                let vars = params.bind(&mut tape);
                let logits =
                    trace_forward(&mut tape, &batch, &vars, tc, None, Some(dropout_rng))?;
                let loss = focal_loss(
                    &mut tape,
                    logits,
                    &targets,
                    config.focal_alpha,
                    config.focal_gamma,
                )?;
                let loss_value = tape.scalar_value(loss);
                if !loss_value.is_finite() {
                    let tensor = tape.first_nonfinite().unwrap_or_else(|| "loss".into());
                    return Err(Error::Diverged(format!(
                        "non-finite value in tensor '{tensor}'"
                    )));
                }
                tape.backward(loss)?;
                optimize(&tape, params.named_mut(), optimizer, lr)?;
                Ok(loss_value)
            }
            Trainer::NnMlp { params, train_design, .. } => {
                let x: Vec<f64> =
                    indices.iter().flat_map(|&i| train_design.row(i).to_vec()).collect();
                let mut tape = Tape::new();
                let vars = params.bind(&mut tape);
                let logits = nnmlp_forward(&mut tape, &x, indices.len(), &vars)?;
                let loss = focal_loss(
                    &mut tape,
                    logits,
                    &targets,
                    config.focal_alpha,
                    config.focal_gamma,
                )?;
                let loss_value = tape.scalar_value(loss);
                if !loss_value.is_finite() {
                    let tensor = tape.first_nonfinite().unwrap_or_else(|| "loss".into());
                    return Err(Error::Diverged(format!(
                        "non-finite value in tensor '{tensor}'"
                    )));
                }
                tape.backward(loss)?;
                optimize(&tape, params.named_mut(), optimizer, lr)?;
                params.project_constraints();
                debug_assert!(params.constraints_ok());
                Ok(loss_value)
            }
        }
    }

    fn frozen_logits(&self, val_p: &TabularDataset) -> Result<Vec<f64>> {
        match self {
            Trainer::Trace { config, params, .. } => trace_logits(params, config, val_p, None),
            Trainer::NnMlp { params, val_design, .. } => nnmlp_logits(params, val_design),
        }
    }

    fn snapshot(&self) -> ModelParams {
        match self {
            Trainer::Trace { config, params, .. } => {
                ModelParams::Trace { config: config.clone(), params: params.clone() }
            }
            Trainer::NnMlp { config, params, .. } => {
                ModelParams::NnMlp { config: config.clone(), params: params.clone() }
            }
        }
    }
}

#[cfg(test)]
mod tests;
