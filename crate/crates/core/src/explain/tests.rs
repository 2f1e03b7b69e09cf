use super::*;
use crate::data::{default_synthetic_schema, generate_synthetic, stratified_split, SyntheticSpec};
use crate::model::TraceConfig;
use crate::train::{train, ModelSpec, TrainConfig};

fn layer(batch: usize, heads: usize, n: usize, weights: Vec<f64>) -> AttentionCapture {
    assert_eq!(weights.len(), batch * heads * n * n);
    AttentionCapture { layers: vec![AttentionLayer { batch, heads, n_tokens: n, weights }] }
}

fn labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("f{i}")).collect()
}

fn tiny_model() -> (crate::train::FittedModel, crate::data::TabularDataset) {
    let (data, _) = generate_synthetic(&SyntheticSpec {
        schema: default_synthetic_schema(),
        n_samples: 120,
        positive_ratio: 0.3,
        seed: 21,
    })
    .unwrap();
    let (tr, va) = stratified_split(&data, 0.25, 21).unwrap();
    let spec = ModelSpec::Trace(TraceConfig {
        model_size: 8,
        n_encoder_layers: 2,
        n_heads: 2,
        mlp_ratio: 2,
        ..TraceConfig::default()
    });
    let cfg = TrainConfig { epochs: 2, batch_size: 16, seed: 21, ..TrainConfig::default() };
    (train(&spec, &tr, &va, &cfg).unwrap().model, va)
}

#[test]
fn hand_oracle_two_query_rows_average_per_key() {
    // One sample, one head, N=2, query rows [0.9, 0.1] and [0.5, 0.5]:
    // per-key mass over queries is ((0.9+0.5)/2, (0.1+0.5)/2) = (0.7, 0.3).
    let capture = layer(1, 1, 2, vec![0.9, 0.1, 0.5, 0.5]);
    let m =
        by_sample_from_capture(&capture, None, labels(2), vec!["s0".into()]).unwrap();
    assert_eq!((m.rows, m.cols), (1, 2));
    assert!((m.at(0, 0) - 0.7).abs() < 1e-15);
    assert!((m.at(0, 1) - 0.3).abs() < 1e-15);
}

#[test]
fn uniform_attention_yields_uniform_cells() {
    let n = 4;
    let capture = layer(3, 2, n, vec![1.0 / n as f64; 3 * 2 * n * n]);
    let m = by_sample_from_capture(&capture, None, labels(n), labels(3)).unwrap();
    for v in &m.values {
        assert!((v - 0.25).abs() < 1e-15);
    }
    let f = by_feature_from_capture(&capture, None, labels(n)).unwrap();
    for v in &f.values {
        assert!((v - 0.25).abs() < 1e-15);
    }
}

#[test]
fn by_feature_of_one_sample_is_its_head_average_exactly() {
    // Two heads whose mean is computable by hand.
    let h0 = vec![1.0, 0.0, 0.25, 0.75];
    let h1 = vec![0.5, 0.5, 0.75, 0.25];
    let weights: Vec<f64> = h0.iter().chain(&h1).copied().collect();
    let capture = layer(1, 2, 2, weights);
    let f = by_feature_from_capture(&capture, None, labels(2)).unwrap();
    assert_eq!(f.values, vec![0.75, 0.25, 0.5, 0.5]);
    assert_eq!(f.row_labels, f.col_labels);
}

#[test]
fn duplicate_samples_leave_the_feature_view_unchanged() {
    let one = vec![0.9, 0.1, 0.5, 0.5, 0.2, 0.8, 0.6, 0.4];
    let twice: Vec<f64> = one.iter().chain(&one).copied().collect();
    let a = by_feature_from_capture(&layer(1, 2, 2, one), None, labels(2)).unwrap();
    let b = by_feature_from_capture(&layer(2, 2, 2, twice), None, labels(2)).unwrap();
    assert_eq!(a.values, b.values);
}

#[test]
fn feature_view_matches_per_sample_loop_oracle() {
    let (model, va) = tiny_model();
    let f = attention_by_feature(&model, &va, None).unwrap();

    // Oracle: score each sample alone and average the resulting matrices.
    let n = f.cols;
    let mut acc = vec![0.0; n * n];
    for i in 0..va.len() {
        let single = va.subset(&[i]).unwrap();
        let m = attention_by_feature(&model, &single, None).unwrap();
        for (a, v) in acc.iter_mut().zip(&m.values) {
            *a += v;
        }
    }
    for (a, v) in acc.iter().zip(&f.values) {
        assert!((a / va.len() as f64 - v).abs() < 1e-12);
    }
}

#[test]
fn head_and_sample_averaging_commute() {
    let (model, va) = tiny_model();
    let (_, capture) = model.logits_with_attention(&va).unwrap();
    let att = capture.layers.last().unwrap();
    let n = att.n_tokens;

    // Average over samples first, heads second.
    let mut swapped = vec![0.0; n * n];
    for h in 0..att.heads {
        let mut per_head = vec![0.0; n * n];
        for s in 0..att.batch {
            for q in 0..n {
                for k in 0..n {
                    per_head[q * n + k] += att.weight(s, h, q, k);
                }
            }
        }
        for (acc, v) in swapped.iter_mut().zip(&per_head) {
            *acc += v / att.batch as f64;
        }
    }
    for v in &mut swapped {
        *v /= att.heads as f64;
    }

    let f = attention_by_feature(&model, &va, None).unwrap();
    for (a, b) in swapped.iter().zip(&f.values) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn trained_model_views_are_stochastic_and_labeled() {
    let (model, va) = tiny_model();
    let names = model.schema.token_names();

    let s = attention_by_sample(&model, &va, None, None).unwrap();
    assert_eq!((s.rows, s.cols), (va.len(), names.len()));
    assert_eq!(s.col_labels, names);
    assert_eq!(s.row_labels[0], "0");

    let f = attention_by_feature(&model, &va, None).unwrap();
    assert_eq!((f.rows, f.cols), (names.len(), names.len()));

    for m in [&s, &f] {
        for r in 0..m.rows {
            let sum: f64 = m.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-6, "row {r} sums to {sum}");
            assert!(m.row(r).iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}

#[test]
fn layer_selection_defaults_to_final_and_checks_bounds() {
    let (model, va) = tiny_model();
    let def = attention_by_feature(&model, &va, None).unwrap();
    let last = attention_by_feature(&model, &va, Some(1)).unwrap();
    let first = attention_by_feature(&model, &va, Some(0)).unwrap();
    assert_eq!(def.values, last.values);
    assert_ne!(def.values, first.values);
    assert!(matches!(
        attention_by_feature(&model, &va, Some(2)),
        Err(Error::Parameter(_))
    ));
}

#[test]
fn sample_selection_is_seeded_and_rejects_empty() {
    let (_, va) = tiny_model();
    let (a, ia) = select_samples(&va, 10, 3).unwrap();
    let (_, ib) = select_samples(&va, 10, 3).unwrap();
    let (_, ic) = select_samples(&va, 10, 4).unwrap();
    assert_eq!(ia, ib);
    assert_ne!(ia, ic);
    assert_eq!(a.len(), 10);
    assert!(ia.windows(2).all(|w| w[0] < w[1]), "indices ascend: {ia:?}");
    assert!(matches!(select_samples(&va, 0, 3), Err(Error::Parameter(_))));
    assert!(matches!(select_samples(&va, va.len() + 1, 3), Err(Error::Parameter(_))));
}

#[test]
fn csv_round_trips_at_six_decimals() {
    let capture = layer(2, 1, 2, vec![0.9, 0.1, 0.5, 0.5, 0.25, 0.75, 1.0 / 3.0, 2.0 / 3.0]);
    let m = by_sample_from_capture(
        &capture,
        None,
        vec!["age".into(), "stage".into()],
        vec!["17".into(), "42".into()],
    )
    .unwrap();
    let csv = matrix_to_csv_string(&m);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "id,age,stage");
    assert_eq!(lines.len(), 3);

    let mut reader = csv::Reader::from_reader(csv.as_bytes());
    for (r, record) in reader.records().enumerate() {
        let record = record.unwrap();
        assert_eq!(&record[0], m.row_labels[r].as_str());
        for c in 0..m.cols {
            let parsed: f64 = record[c + 1].parse().unwrap();
            assert!((parsed - m.at(r, c)).abs() <= 5e-7);
        }
    }
}
