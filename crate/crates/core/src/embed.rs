//! Modality-specific feature embedders producing the token tensor.
//!
//! Every feature becomes one E-dimensional token:
//! - continuous: a tiny per-feature MLP (1 -> E, SELU, E -> E) whose output
//!   is multiplied by the presence mask, so missing values contribute
//!   nothing and receive no gradient;
//! - categorical: a table lookup with row 0 reserved for missing;
//! - checkbox: sum of the active members' table rows, with an extra final
//!   row used when the whole group is missing (distinct from "none apply").
//!
//! Tokens concatenate as continuous, then checkbox, then categorical, each
//! in schema order; that order is the canonical axis for attention maps.

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::tensor::{Activation, Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Linear-map init used across the model: uniform(-1/sqrt(fan_in), +).
pub(crate) fn linear_init(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let values = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape, values).expect("static shape").trainable()
}

/// Embedding-table init: normal(0, 0.02).
pub(crate) fn table_init(rng: &mut ChaCha8Rng, rows: usize, e: usize) -> Tensor {
    let dist = Normal::new(0.0, 0.02).expect("valid std");
    let values = (0..rows * e).map(|_| dist.sample(rng)).collect();
    Tensor::new(&[rows, e], values).expect("static shape").trainable()
}

/// One continuous feature's MLP: value -> E -> SELU -> E.
#[derive(Debug, Clone)]
pub struct ContinuousBlock {
    pub w1: Tensor, // (E)
    pub b1: Tensor, // (E)
    pub w2: Tensor, // (E, E)
    pub b2: Tensor, // (E)
}

#[derive(Debug, Clone)]
pub struct ContinuousEmbedderParams {
    /// One block per feature, or a single block shared by all features.
    pub blocks: Vec<ContinuousBlock>,
    pub n_features: usize,
}

impl ContinuousEmbedderParams {
    pub fn init(n_features: usize, e: usize, shared: bool, rng: &mut ChaCha8Rng) -> Self {
        let n_blocks = if shared { n_features.min(1) } else { n_features };
        let blocks = (0..n_blocks)
            .map(|_| ContinuousBlock {
                w1: linear_init(rng, &[e], 1),
                b1: linear_init(rng, &[e], 1),
                w2: linear_init(rng, &[e, e], e),
                b2: linear_init(rng, &[e], e),
            })
            .collect();
        ContinuousEmbedderParams { blocks, n_features }
    }

    pub fn shared(&self) -> bool {
        self.blocks.len() == 1 && self.n_features > 1
    }
}

#[derive(Debug, Clone)]
pub struct CategoricalEmbedderParams {
    /// Per feature: (cardinality + 1, E); row 0 is the missing token.
    pub tables: Vec<Tensor>,
}

impl CategoricalEmbedderParams {
    pub fn init(cardinalities: &[usize], e: usize, rng: &mut ChaCha8Rng) -> Self {
        let tables = cardinalities.iter().map(|&c| table_init(rng, c + 1, e)).collect();
        CategoricalEmbedderParams { tables }
    }
}

#[derive(Debug, Clone)]
pub struct CheckboxEmbedderParams {
    /// Per feature: (C + 1, E); the last row is the group-missing token.
    pub tables: Vec<Tensor>,
}

impl CheckboxEmbedderParams {
    pub fn init(options: &[usize], e: usize, rng: &mut ChaCha8Rng) -> Self {
        let tables = options.iter().map(|&c| table_init(rng, c + 1, e)).collect();
        CheckboxEmbedderParams { tables }
    }
}

/// Tape handles for one forward pass, in the same order as the params.
pub struct ContinuousBlockVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

pub struct EmbedVars {
    pub cont_blocks: Vec<ContinuousBlockVars>,
    pub cont_n_features: usize,
    pub check_tables: Vec<Var>,
    pub cat_tables: Vec<Var>,
}

impl EmbedVars {
    fn cont_block(&self, feature: usize) -> &ContinuousBlockVars {
        if self.cont_blocks.len() == 1 {
            &self.cont_blocks[0]
        } else {
            &self.cont_blocks[feature]
        }
    }
}

pub fn bind_embed(
    tape: &mut Tape,
    cont: &ContinuousEmbedderParams,
    check: &CheckboxEmbedderParams,
    cat: &CategoricalEmbedderParams,
) -> EmbedVars {
    EmbedVars {
        cont_blocks: cont
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| ContinuousBlockVars {
                w1: tape.named_leaf(&b.w1, format!("cont.{i}.w1")),
                b1: tape.named_leaf(&b.b1, format!("cont.{i}.b1")),
                w2: tape.named_leaf(&b.w2, format!("cont.{i}.w2")),
                b2: tape.named_leaf(&b.b2, format!("cont.{i}.b2")),
            })
            .collect(),
        cont_n_features: cont.n_features,
        check_tables: check
            .tables
            .iter()
            .enumerate()
            .map(|(i, t)| tape.named_leaf(t, format!("check.{i}.table")))
            .collect(),
        cat_tables: cat
            .tables
            .iter()
            .enumerate()
            .map(|(j, t)| tape.named_leaf(t, format!("cat.{j}.table")))
            .collect(),
    }
}

/// Appends parameter references in the canonical order shared by
/// [`bind_embed`] and the optimizer.
pub fn embed_named<'a>(
    cont: &'a ContinuousEmbedderParams,
    check: &'a CheckboxEmbedderParams,
    cat: &'a CategoricalEmbedderParams,
    out: &mut Vec<(String, &'a Tensor)>,
) {
    for (i, b) in cont.blocks.iter().enumerate() {
        out.push((format!("cont.{i}.w1"), &b.w1));
        out.push((format!("cont.{i}.b1"), &b.b1));
        out.push((format!("cont.{i}.w2"), &b.w2));
        out.push((format!("cont.{i}.b2"), &b.b2));
    }
    for (i, t) in check.tables.iter().enumerate() {
        out.push((format!("check.{i}.table"), t));
    }
    for (j, t) in cat.tables.iter().enumerate() {
        out.push((format!("cat.{j}.table"), t));
    }
}

pub fn embed_named_mut<'a>(
    cont: &'a mut ContinuousEmbedderParams,
    check: &'a mut CheckboxEmbedderParams,
    cat: &'a mut CategoricalEmbedderParams,
    out: &mut Vec<(String, &'a mut Tensor)>,
) {
    for (i, b) in cont.blocks.iter_mut().enumerate() {
        out.push((format!("cont.{i}.w1"), &mut b.w1));
        out.push((format!("cont.{i}.b1"), &mut b.b1));
        out.push((format!("cont.{i}.w2"), &mut b.w2));
        out.push((format!("cont.{i}.b2"), &mut b.b2));
    }
    for (i, t) in check.tables.iter_mut().enumerate() {
        out.push((format!("check.{i}.table"), t));
    }
    for (j, t) in cat.tables.iter_mut().enumerate() {
        out.push((format!("cat.{j}.table"), t));
    }
}

/// (B, N_num) values + presence mask -> (B, N_num, E) tokens. The mask is
/// applied to the MLP output, so a missing cell's raw value cannot reach the
/// token (and its parameters get no gradient from it).
pub fn embed_continuous(
    tape: &mut Tape,
    values: &[f64],
    mask: &[f64],
    batch: usize,
    vars: &EmbedVars,
    e: usize,
) -> Result<Var> {
    let n = vars.cont_n_features;
    if values.len() != batch * n || mask.len() != batch * n {
        return Err(Error::Contract(format!(
            "continuous embedder expected {batch}x{n} values and mask, got {} and {}",
            values.len(),
            mask.len()
        )));
    }
    let mut tokens = Vec::with_capacity(n);
    for i in 0..n {
        let col: Vec<f64> = (0..batch).map(|b| values[b * n + i]).collect();
        let x = tape.constant(&[batch, 1], col)?;
        let block = vars.cont_block(i);
        let w1 = tape.reshape(block.w1, &[1, e])?;
        let h = tape.matmul(x, w1)?;
        let h = tape.add_row_bias(h, block.b1)?;
        let h = tape.activation(h, Activation::Selu);
        let h = tape.matmul(h, block.w2)?;
        let h = tape.add_row_bias(h, block.b2)?;
        // Presence mask broadcast across the embedding axis.
        let mask_col: Vec<f64> =
            (0..batch).flat_map(|b| std::iter::repeat(mask[b * n + i]).take(e)).collect();
        let m = tape.constant(&[batch, e], mask_col)?;
        tokens.push(tape.mul(h, m)?);
    }
    tape.stack_tokens(&tokens)
}

/// Per-feature 1-based indices -> (B, N_cat, E); index 0 selects the missing
/// token row.
pub fn embed_categorical(
    tape: &mut Tape,
    indices: &[Vec<usize>],
    vars: &EmbedVars,
) -> Result<Var> {
    if indices.len() != vars.cat_tables.len() {
        return Err(Error::Contract(format!(
            "categorical embedder expected {} features, got {}",
            vars.cat_tables.len(),
            indices.len()
        )));
    }
    let mut tokens = Vec::with_capacity(indices.len());
    for (j, idx) in indices.iter().enumerate() {
        let rows = tape.shape(vars.cat_tables[j])[0];
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::Contract(format!(
                "categorical index {bad} out of range 0..={}",
                rows - 1
            )));
        }
        tokens.push(tape.gather_rows(vars.cat_tables[j], idx)?);
    }
    tape.stack_tokens(&tokens)
}

/// Per-feature member bits + group-missing flags -> (B, N_check, E).
/// Sum aggregation: token = sum over active members of their table rows,
/// realized as a matmul with the bit vector extended by a missing-indicator
/// column (1 only when the group is missing, which also zeroes the bits).
pub fn embed_checkbox(
    tape: &mut Tape,
    bits: &[Vec<f64>],
    missing: &[Vec<bool>],
    vars: &EmbedVars,
) -> Result<Var> {
    if bits.len() != vars.check_tables.len() || missing.len() != vars.check_tables.len() {
        return Err(Error::Contract(format!(
            "checkbox embedder expected {} features",
            vars.check_tables.len()
        )));
    }
    let mut tokens = Vec::with_capacity(bits.len());
    for (i, feature_bits) in bits.iter().enumerate() {
        let c = tape.shape(vars.check_tables[i])[0] - 1;
        let batch = missing[i].len();
        if feature_bits.len() != batch * c {
            return Err(Error::Contract(format!(
                "checkbox feature {i} expected {batch}x{c} bits, got {}",
                feature_bits.len()
            )));
        }
        if feature_bits.iter().any(|&b| b != 0.0 && b != 1.0) {
            return Err(Error::Contract(format!(
                "checkbox feature {i} has a non-binary bit"
            )));
        }
        let mut extended = Vec::with_capacity(batch * (c + 1));
        for b in 0..batch {
            if missing[i][b] {
                extended.extend(std::iter::repeat(0.0).take(c));
                extended.push(1.0);
            } else {
                extended.extend_from_slice(&feature_bits[b * c..(b + 1) * c]);
                extended.push(0.0);
            }
        }
        let sel = tape.constant(&[batch, c + 1], extended)?;
        tokens.push(tape.matmul(sel, vars.check_tables[i])?);
    }
    tape.stack_tokens(&tokens)
}

/// Full token tensor for a batch: continuous, checkbox, categorical parts
/// concatenated along the token axis. Modalities absent from the schema are
/// skipped.
pub fn embed_tokens(tape: &mut Tape, batch: &Batch, vars: &EmbedVars, e: usize) -> Result<Var> {
    let b = batch.len();
    let mut parts = Vec::new();
    if vars.cont_n_features > 0 {
        parts.push(embed_continuous(tape, &batch.cont_values, &batch.cont_mask, b, vars, e)?);
    }
    if !vars.check_tables.is_empty() {
        parts.push(embed_checkbox(tape, &batch.check_bits, &batch.check_missing, vars)?);
    }
    if !vars.cat_tables.is_empty() {
        parts.push(embed_categorical(tape, &batch.cat_indices, vars)?);
    }
    if parts.is_empty() {
        return Err(Error::Contract("schema has no features to embed".into()));
    }
    for &p in &parts {
        if tape.shape(p)[2] != e || tape.shape(p)[0] != b {
            return Err(Error::Contract(format!(
                "embedding part shape {:?} does not match batch {b} and size {e}",
                tape.shape(p)
            )));
        }
    }
    tape.concat_tokens(&parts)
}

#[cfg(test)]
mod tests;
