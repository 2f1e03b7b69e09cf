//! Schemas, datasets, splits, batching, and synthetic cohorts.

mod dataset;
mod schema;
mod split;
mod synthetic;

pub use dataset::{DesignMatrix, SampleRow, TabularDataset};
pub use schema::{parse_schema, Feature, FeatureKind, FeatureSchema};
pub use split::{stratified_batches, stratified_split, stratified_split_indices};
pub use synthetic::{default_synthetic_schema, generate_synthetic, SyntheticSpec, SyntheticTruth};

use crate::error::{Error, Result};

/// A sample subset materialized column-wise, ready for model forwards.
/// Continuous values carry a parallel presence mask (1 = present); checkbox
/// groups keep raw member bits plus a per-sample missing flag.
#[derive(Debug, Clone)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub labels: Vec<f64>,
    /// (B, N_num) row-major; masked cells hold 0.
    pub cont_values: Vec<f64>,
    /// (B, N_num) row-major; 1.0 = present, 0.0 = missing.
    pub cont_mask: Vec<f64>,
    /// Per categorical feature: B indices in [0, cardinality], 0 = missing.
    pub cat_indices: Vec<Vec<usize>>,
    /// Per checkbox feature: (B, C_i) row-major member bits.
    pub check_bits: Vec<Vec<f64>>,
    /// Per checkbox feature: B missing flags.
    pub check_missing: Vec<Vec<bool>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

pub fn make_batch(dataset: &TabularDataset, indices: &[usize]) -> Result<Batch> {
    if indices.is_empty() {
        return Err(Error::Contract("cannot materialize an empty batch".into()));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= dataset.len()) {
        return Err(Error::Contract(format!(
            "batch index {bad} out of range for {} samples",
            dataset.len()
        )));
    }
    let schema = dataset.schema();
    let b = indices.len();
    let (nc, nk, ncb) = (schema.n_continuous(), schema.n_categorical(), schema.n_checkbox());

    let mut batch = Batch {
        indices: indices.to_vec(),
        labels: indices.iter().map(|&i| dataset.label(i) as f64).collect(),
        cont_values: Vec::with_capacity(b * nc),
        cont_mask: Vec::with_capacity(b * nc),
        cat_indices: vec![Vec::with_capacity(b); nk],
        check_bits: (0..ncb)
            .map(|j| Vec::with_capacity(b * schema.checkbox_options(j)))
            .collect(),
        check_missing: vec![Vec::with_capacity(b); ncb],
    };
    for &i in indices {
        for j in 0..nc {
            let (v, missing) = dataset.cont(i, j);
            batch.cont_values.push(if missing { 0.0 } else { v });
            batch.cont_mask.push(if missing { 0.0 } else { 1.0 });
        }
        for j in 0..nk {
            batch.cat_indices[j].push(dataset.cat(i, j) as usize);
        }
        for j in 0..ncb {
            let missing = dataset.check_missing(i, j);
            batch.check_missing[j].push(missing);
            if missing {
                batch.check_bits[j]
                    .extend(std::iter::repeat(0.0).take(schema.checkbox_options(j)));
            } else {
                batch.check_bits[j].extend(dataset.check_bits(i, j).iter().map(|&v| v as f64));
            }
        }
    }
    Ok(batch)
}
