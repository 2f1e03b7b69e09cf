//! Aggregated attention views for a trained transformer.
//!
//! Two read-outs of one captured layer, both stochastic-by-row:
//! - by-sample: one row per scored sample, telling which features that
//!   sample's queries attended to overall;
//! - by-feature: one query-by-key matrix averaged over the whole sample
//!   set, with self-attention on the diagonal.

use crate::data::TabularDataset;
use crate::error::{Error, Result};
use crate::model::{AttentionCapture, AttentionLayer};
use crate::train::FittedModel;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionView {
    BySample,
    ByFeature,
}

impl AttentionView {
    pub fn as_str(&self) -> &'static str {
        match self {
            AttentionView::BySample => "by_sample",
            AttentionView::ByFeature => "by_feature",
        }
    }
}

/// A dense matrix of attention mass with labeled axes. Every row is a
/// convex combination of softmax rows, so entries lie in [0, 1] and each
/// row sums to 1 up to float error.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureAttentionMatrix {
    pub view: AttentionView,
    pub row_labels: Vec<String>,
    /// Key-feature names in canonical token order.
    pub col_labels: Vec<String>,
    pub rows: usize,
    pub cols: usize,
    /// Row-major (rows, cols).
    pub values: Vec<f64>,
}

impl FeatureAttentionMatrix {
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }
}

/// Picks the layer to aggregate: the final one unless an index is given.
fn select_layer(capture: &AttentionCapture, layer: Option<usize>) -> Result<&AttentionLayer> {
    if capture.layers.is_empty() {
        return Err(Error::Contract("attention capture is empty".into()));
    }
    let idx = layer.unwrap_or(capture.layers.len() - 1);
    capture.layers.get(idx).ok_or_else(|| {
        Error::Parameter(format!(
            "layer {idx} out of range, model has {} encoder layers",
            capture.layers.len()
        ))
    })
}

/// Head-averaged attention of one sample: (N, N) row-major.
fn head_mean(att: &AttentionLayer, sample: usize) -> Vec<f64> {
    let n = att.n_tokens;
    let mut out = vec![0.0; n * n];
    for h in 0..att.heads {
        for q in 0..n {
            for k in 0..n {
                out[q * n + k] += att.weight(sample, h, q, k);
            }
        }
    }
    let inv = 1.0 / att.heads as f64;
    for v in &mut out {
        *v *= inv;
    }
    out
}

/// One row per sample: head-averaged attention further averaged over the
/// query axis, i.e. the total attention mass each key feature received.
pub fn by_sample_from_capture(
    capture: &AttentionCapture,
    layer: Option<usize>,
    col_labels: Vec<String>,
    row_labels: Vec<String>,
) -> Result<FeatureAttentionMatrix> {
    let att = select_layer(capture, layer)?;
    let n = att.n_tokens;
    if col_labels.len() != n {
        return Err(Error::Contract(format!(
            "{} column labels for {n} tokens",
            col_labels.len()
        )));
    }
    if row_labels.len() != att.batch {
        return Err(Error::Contract(format!(
            "{} row labels for {} samples",
            row_labels.len(),
            att.batch
        )));
    }
    let mut values = Vec::with_capacity(att.batch * n);
    for s in 0..att.batch {
        let m = head_mean(att, s);
        for k in 0..n {
            let mass: f64 = (0..n).map(|q| m[q * n + k]).sum();
            values.push(mass / n as f64);
        }
    }
    Ok(FeatureAttentionMatrix {
        view: AttentionView::BySample,
        row_labels,
        col_labels,
        rows: att.batch,
        cols: n,
        values,
    })
}

/// Query-by-key matrix: head-averaged attention averaged over samples.
pub fn by_feature_from_capture(
    capture: &AttentionCapture,
    layer: Option<usize>,
    labels: Vec<String>,
) -> Result<FeatureAttentionMatrix> {
    let att = select_layer(capture, layer)?;
    let n = att.n_tokens;
    if labels.len() != n {
        return Err(Error::Contract(format!("{} labels for {n} tokens", labels.len())));
    }
    let mut values = vec![0.0; n * n];
    for s in 0..att.batch {
        for (acc, v) in values.iter_mut().zip(head_mean(att, s)) {
            *acc += v;
        }
    }
    let inv = 1.0 / att.batch as f64;
    for v in &mut values {
        *v *= inv;
    }
    Ok(FeatureAttentionMatrix {
        view: AttentionView::ByFeature,
        row_labels: labels.clone(),
        col_labels: labels,
        rows: n,
        cols: n,
        values,
    })
}

/// Runs the model over `samples` and aggregates per sample. Row labels are
/// the given ids, or the sample position when absent.
pub fn attention_by_sample(
    model: &FittedModel,
    samples: &TabularDataset,
    layer: Option<usize>,
    ids: Option<&[String]>,
) -> Result<FeatureAttentionMatrix> {
    let (_, capture) = model.logits_with_attention(samples)?;
    let row_labels = match ids {
        Some(ids) => ids.to_vec(),
        None => (0..samples.len()).map(|i| i.to_string()).collect(),
    };
    by_sample_from_capture(&capture, layer, model.schema.token_names(), row_labels)
}

/// Runs the model over `samples` and aggregates into one (N, N) matrix.
pub fn attention_by_feature(
    model: &FittedModel,
    samples: &TabularDataset,
    layer: Option<usize>,
) -> Result<FeatureAttentionMatrix> {
    let (_, capture) = model.logits_with_attention(samples)?;
    by_feature_from_capture(&capture, layer, model.schema.token_names())
}

/// Seeded uniform draw of `n` distinct samples; returns the subset and the
/// chosen source indices (ascending) for row labeling.
pub fn select_samples(
    data: &TabularDataset,
    n: usize,
    seed: u64,
) -> Result<(TabularDataset, Vec<usize>)> {
    if n == 0 {
        return Err(Error::Parameter("empty sample set".into()));
    }
    if n > data.len() {
        return Err(Error::Parameter(format!(
            "asked for {n} samples but the dataset has {}",
            data.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..data.len()).collect();
    indices.shuffle(&mut rng);
    indices.truncate(n);
    indices.sort_unstable();
    Ok((data.subset(&indices)?, indices))
}

/// CSV with an `id` label column, key-feature names as the header, and
/// values fixed to 6 decimal places.
pub fn matrix_to_csv_string(matrix: &FeatureAttentionMatrix) -> String {
    let mut out = String::from("id");
    for name in &matrix.col_labels {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for r in 0..matrix.rows {
        out.push_str(&matrix.row_labels[r]);
        for c in 0..matrix.cols {
            out.push_str(&format!(",{:.6}", matrix.at(r, c)));
        }
        out.push('\n');
    }
    out
}

pub fn export_matrix_csv(matrix: &FeatureAttentionMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let with_path =
        |e: std::io::Error| std::io::Error::new(e.kind(), format!("{}: {e}", path.display()));
    let mut f = std::fs::File::create(path).map_err(with_path)?;
    f.write_all(matrix_to_csv_string(matrix).as_bytes()).map_err(with_path)?;
    Ok(())
}

#[cfg(test)]
mod tests;
