//! Synthetic cohorts with disclosed, monotone ground truth.
//!
//! Labels come from a linear score with non-negative coefficients on the
//! continuous and checkbox features (categoricals are distractors), plus a
//! small noise term. The exact top round(ratio * n) scores are labelled
//! positive, so class counts are known in advance and a monotone classifier
//! attains near-perfect separation.

use super::dataset::{SampleRow, TabularDataset};
use super::schema::{Feature, FeatureSchema};
use crate::error::{Error, Result};
use rand::distributions::{Bernoulli, Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub schema: FeatureSchema,
    pub n_samples: usize,
    pub positive_ratio: f64,
    pub seed: u64,
}

/// The generating process, disclosed so tests can verify learnability and
/// monotone structure.
#[derive(Debug, Clone)]
pub struct SyntheticTruth {
    /// Per continuous feature, all >= 0.
    pub cont_weights: Vec<f64>,
    /// Per checkbox feature, per member, all >= 0.
    pub check_weights: Vec<Vec<f64>>,
    /// Scores strictly above this were labelled positive.
    pub threshold: f64,
    /// Realized noisy score per sample.
    pub scores: Vec<f64>,
}

/// A small mixed-modality schema for desk-scale runs: 4 continuous, 3
/// categorical, 2 checkbox groups (9 tokens).
pub fn default_synthetic_schema() -> FeatureSchema {
    FeatureSchema::new(
        "outcome",
        vec![
            Feature::continuous("age"),
            Feature::continuous("bmi"),
            Feature::continuous("exposure_index"),
            Feature::continuous("biomarker"),
            Feature::categorical("sex", 2),
            Feature::categorical("region", 4),
            Feature::categorical("stage", 3),
            Feature::checkbox("ancestry", 5),
            Feature::checkbox("symptoms", 4),
        ],
    )
    .expect("built-in schema is valid")
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(TabularDataset, SyntheticTruth)> {
    if !(spec.positive_ratio > 0.0 && spec.positive_ratio < 1.0) {
        return Err(Error::Parameter(format!(
            "positive ratio must be in (0, 1), got {}",
            spec.positive_ratio
        )));
    }
    let n = spec.n_samples;
    let k = (spec.positive_ratio * n as f64).round() as usize;
    if n < 2 || k == 0 || k >= n {
        return Err(Error::Parameter(format!(
            "{n} samples at ratio {} leave an empty class",
            spec.positive_ratio
        )));
    }
    let schema = &spec.schema;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let cont_w = Uniform::new(0.5, 1.5);
    let cont_weights: Vec<f64> =
        (0..schema.n_continuous()).map(|_| cont_w.sample(&mut rng)).collect();
    let check_w = Uniform::new(0.2, 0.6);
    let check_weights: Vec<Vec<f64>> = (0..schema.n_checkbox())
        .map(|j| (0..schema.checkbox_options(j)).map(|_| check_w.sample(&mut rng)).collect())
        .collect();

    let bit = Bernoulli::new(0.3).expect("valid probability");
    let noise = Normal::new(0.0, 0.02).expect("valid std");
    let mut rows = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    for _ in 0..n {
        let cont: Vec<Option<f64>> =
            (0..schema.n_continuous()).map(|_| Some(rng.gen_range(0.0..1.0))).collect();
        let cat: Vec<u32> = (0..schema.n_categorical())
            .map(|j| rng.gen_range(1..=schema.categorical_cardinality(j)) as u32)
            .collect();
        let checks: Vec<Option<Vec<u8>>> = (0..schema.n_checkbox())
            .map(|j| {
                Some((0..schema.checkbox_options(j)).map(|_| bit.sample(&mut rng) as u8).collect())
            })
            .collect();
        let mut score: f64 = cont
            .iter()
            .zip(&cont_weights)
            .map(|(v, w)| w * v.unwrap())
            .sum();
        for (j, bits) in checks.iter().enumerate() {
            score += bits
                .as_ref()
                .unwrap()
                .iter()
                .zip(&check_weights[j])
                .map(|(&b, w)| w * b as f64)
                .sum::<f64>();
        }
        score += noise.sample(&mut rng);
        scores.push(score);
        rows.push(SampleRow { cont, cat, checks, label: 0 });
    }

    // Exact top-k scores become positive; ties (measure zero) broken by index.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    for &i in &order[..k] {
        rows[i].label = 1;
    }
    let threshold = (scores[order[k - 1]] + scores[order[k]]) / 2.0;

    let dataset = TabularDataset::from_rows(schema.clone(), rows)?;
    Ok((dataset, SyntheticTruth { cont_weights, check_weights, threshold, scores }))
}
