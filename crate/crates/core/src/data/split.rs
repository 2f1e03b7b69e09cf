//! Stratified train/validation splitting and class-ratio-preserving batches.

use super::TabularDataset;
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Splits sample indices so each class lands in the validation set at
/// round(count * val_fraction). Index lists come back sorted; the draw is
/// deterministic in `seed`.
pub fn stratified_split_indices(
    labels: &[u8],
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Split(format!(
            "validation fraction must be in (0, 1), got {val_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in [1u8, 0u8] {
        let mut members: Vec<usize> =
            (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        let take = (members.len() as f64 * val_fraction).round() as usize;
        val.extend(members.drain(..take.min(members.len())));
        train.extend(members);
    }
    train.sort_unstable();
    val.sort_unstable();
    for (name, split) in [("training", &train), ("validation", &val)] {
        for class in [0u8, 1u8] {
            if !split.iter().any(|&i| labels[i] == class) {
                return Err(Error::Split(format!(
                    "{name} split has no samples of class {class}"
                )));
            }
        }
    }
    Ok((train, val))
}

pub fn stratified_split(
    dataset: &TabularDataset,
    val_fraction: f64,
    seed: u64,
) -> Result<(TabularDataset, TabularDataset)> {
    let (train_idx, val_idx) = stratified_split_indices(dataset.labels(), val_fraction, seed)?;
    Ok((dataset.subset(&train_idx)?, dataset.subset(&val_idx)?))
}

/// Batches covering every index exactly once per call. While both class
/// pools last, each batch carries round(batch_size * positive_ratio)
/// positives (clamped so both classes appear); whatever remains is shuffled
/// and chunked, so only trailing batches can deviate.
pub fn stratified_batches(
    labels: &[u8],
    batch_size: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(Error::Parameter(format!("batch size must be >= 2, got {batch_size}")));
    }
    let n = labels.len();
    if n == 0 {
        return Err(Error::Dataset("cannot batch an empty index set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<usize> = (0..n).filter(|&i| labels[i] == 1).collect();
    let mut neg: Vec<usize> = (0..n).filter(|&i| labels[i] == 0).collect();
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);

    if batch_size >= n {
        let mut all: Vec<usize> = pos.into_iter().chain(neg).collect();
        all.shuffle(&mut rng);
        return Ok(vec![all]);
    }

    let ratio = pos.len() as f64 / n as f64;
    let quota = {
        let q = (batch_size as f64 * ratio).round() as usize;
        if pos.is_empty() {
            0
        } else if neg.is_empty() {
            batch_size
        } else {
            q.clamp(1, batch_size - 1)
        }
    };

    let mut batches = Vec::new();
    let (mut pi, mut ni) = (0usize, 0usize);
    while pos.len() - pi >= quota && neg.len() - ni >= batch_size - quota {
        let mut batch: Vec<usize> = pos[pi..pi + quota].to_vec();
        batch.extend_from_slice(&neg[ni..ni + (batch_size - quota)]);
        batch.shuffle(&mut rng);
        pi += quota;
        ni += batch_size - quota;
        batches.push(batch);
    }
    let mut leftover: Vec<usize> = pos[pi..].iter().chain(neg[ni..].iter()).copied().collect();
    if !leftover.is_empty() {
        leftover.shuffle(&mut rng);
        for chunk in leftover.chunks(batch_size) {
            batches.push(chunk.to_vec());
        }
    }
    Ok(batches)
}
