use super::*;
use crate::data::{default_synthetic_schema, generate_synthetic, stratified_split, SyntheticSpec};
use crate::model::TraceConfig;
use crate::nnmlp::NnMlpConfig;

fn cohort(n: usize, seed: u64) -> TabularDataset {
    let (data, _) = generate_synthetic(&SyntheticSpec {
        schema: default_synthetic_schema(),
        n_samples: n,
        positive_ratio: 0.3,
        seed,
    })
    .unwrap();
    data
}

fn splits(n: usize, seed: u64) -> (TabularDataset, TabularDataset) {
    stratified_split(&cohort(n, seed), 0.25, seed).unwrap()
}

fn quick_config() -> TrainConfig {
    TrainConfig {
        epochs: 6,
        learning_rate: 5e-3,
        batch_size: 32,
        seed: 11,
        ..TrainConfig::default()
    }
}

fn tiny_trace() -> ModelSpec {
    ModelSpec::Trace(TraceConfig {
        model_size: 8,
        n_encoder_layers: 1,
        n_heads: 2,
        mlp_ratio: 2,
        dropout: 0.1,
        ..TraceConfig::default()
    })
}

fn small_mlp() -> ModelSpec {
    ModelSpec::NnMlp(NnMlpConfig { hidden1: 16, hidden2: 8 })
}

#[test]
fn seed_streams_are_deterministic_and_distinct() {
    assert_eq!(seed_stream(7, "init"), seed_stream(7, "init"));
    assert_ne!(seed_stream(7, "init"), seed_stream(7, "dropout"));
    assert_ne!(seed_stream(7, "init"), seed_stream(8, "init"));
    assert_ne!(seed_stream(7, "batches/1"), seed_stream(7, "batches/2"));
}

#[test]
fn config_validation_rejects_bad_fields() {
    assert!(TrainConfig::default().validate().is_ok());
    let cases: Vec<(&str, TrainConfig)> = vec![
        ("epochs", TrainConfig { epochs: 0, ..TrainConfig::default() }),
        ("learning rate", TrainConfig { learning_rate: 0.0, ..TrainConfig::default() }),
        ("learning rate", TrainConfig { learning_rate: f64::NAN, ..TrainConfig::default() }),
        ("batch size", TrainConfig { batch_size: 1, ..TrainConfig::default() }),
        ("alpha", TrainConfig { focal_alpha: 1.0, ..TrainConfig::default() }),
        ("gamma", TrainConfig { focal_gamma: -0.5, ..TrainConfig::default() }),
        ("threshold", TrainConfig { threshold: 0.0, ..TrainConfig::default() }),
    ];
    for (what, cfg) in cases {
        assert!(cfg.validate().is_err(), "{what} should be rejected");
    }
}

#[test]
fn preprocess_disabled_is_identity() {
    let data = cohort(80, 3);
    let pre = Preprocess::fit(&data, false, false);
    assert!(pre.means.iter().all(|&m| m == 0.0));
    assert!(pre.stds.iter().all(|&s| s == 1.0));
    assert!(pre.cont_mins.is_none());
    let out = pre.apply(&data).unwrap();
    assert_eq!(out.one_hot_encode().values, data.one_hot_encode().values);
}

#[test]
fn preprocess_standardizes_with_train_statistics() {
    let data = cohort(200, 4);
    let pre = Preprocess::fit(&data, true, false);
    let (means, stds) = pre.apply(&data).unwrap().standardize_stats();
    for m in means {
        assert!(m.abs() < 1e-9, "post-standardization mean {m}");
    }
    for s in stds {
        assert!((s - 1.0).abs() < 1e-9, "post-standardization std {s}");
    }
}

#[test]
fn preprocess_shift_makes_training_inputs_non_negative_with_zero_min() {
    let data = cohort(150, 5);
    let pre = Preprocess::fit(&data, true, true);
    let shifted = pre.apply(&data).unwrap();
    for (j, min) in shifted.continuous_mins().iter().enumerate() {
        assert_eq!(*min, 0.0, "feature {j} min after shift");
    }
}

#[test]
fn training_is_bitwise_deterministic() {
    let (tr, va) = splits(240, 1);
    let cfg = quick_config();
    let a = train(&small_mlp(), &tr, &va, &cfg).unwrap();
    let b = train(&small_mlp(), &tr, &va, &cfg).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.history.to_csv_string(), b.history.to_csv_string());
    assert_eq!(a.model.logits(&va).unwrap(), b.model.logits(&va).unwrap());

    let other = train(&small_mlp(), &tr, &va, &TrainConfig { seed: 12, ..cfg }).unwrap();
    assert_ne!(a.history, other.history, "a different seed should change the trajectory");
}

#[test]
fn best_epoch_is_highest_f1_earliest_tie() {
    let (tr, va) = splits(240, 2);
    let out = train(&small_mlp(), &tr, &va, &quick_config()).unwrap();
    let h = &out.history;
    let mut want = 0;
    for (i, r) in h.epochs.iter().enumerate() {
        if r.val.f1 > h.epochs[want].val.f1 {
            want = i;
        }
    }
    assert_eq!(h.best_epoch, want);
    assert_eq!(h.best().epoch, want + 1);
}

#[test]
fn returned_model_reproduces_best_epoch_validation_report() {
    let (tr, va) = splits(240, 6);
    let cfg = quick_config();
    let out = train(&small_mlp(), &tr, &va, &cfg).unwrap();
    let replay = out.model.evaluate(&va, cfg.threshold).unwrap();
    assert_eq!(replay, out.history.best().val);
}

#[test]
fn nnmlp_constraints_hold_after_training() {
    // The step function also debug-asserts the constraints after every
    // single update, so running this test exercises the per-step check.
    let (tr, va) = splits(240, 7);
    let out = train(&small_mlp(), &tr, &va, &quick_config()).unwrap();
    match &out.model.params {
        ModelParams::NnMlp { params, .. } => assert!(params.constraints_ok()),
        _ => panic!("expected the constrained model"),
    }
}

#[test]
fn trace_training_is_deterministic_and_exposes_attention() {
    let (tr, va) = splits(120, 8);
    let cfg = TrainConfig { epochs: 3, batch_size: 16, ..quick_config() };
    let a = train(&tiny_trace(), &tr, &va, &cfg).unwrap();
    let b = train(&tiny_trace(), &tr, &va, &cfg).unwrap();
    assert_eq!(a.history, b.history);

    let (logits, capture) = a.model.logits_with_attention(&va).unwrap();
    assert_eq!(logits.len(), va.len());
    assert_eq!(capture.layers.len(), 1);
    let att = &capture.layers[0];
    assert_eq!((att.batch, att.heads), (va.len(), 2));
    for s in 0..att.batch {
        for h in 0..att.heads {
            for q in 0..att.n_tokens {
                let row: f64 = (0..att.n_tokens).map(|k| att.weight(s, h, q, k)).sum();
                assert!((row - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn learning_rate_column_is_non_increasing() {
    let (tr, va) = splits(240, 9);
    let cfg = TrainConfig {
        epochs: 8,
        scheduler: PlateauConfig { patience: 2, ..PlateauConfig::default() },
        ..quick_config()
    };
    let out = train(&small_mlp(), &tr, &va, &cfg).unwrap();
    for w in out.history.epochs.windows(2) {
        assert!(w[1].lr <= w[0].lr);
    }
    assert_eq!(out.history.epochs[0].lr, cfg.learning_rate);
}

#[test]
fn divergence_reports_epoch_batch_and_tensor() {
    let (tr, va) = splits(64, 10);
    let cfg = TrainConfig {
        learning_rate: 1e300, // one update overflows the next forward pass
        batch_size: 16,
        ..quick_config()
    };
    let err = train(&tiny_trace(), &tr, &va, &cfg).unwrap_err();
    match err {
        Error::Diverged(msg) => {
            assert!(msg.starts_with("epoch 1, batch "), "{msg}");
            assert!(msg.contains("non-finite value in tensor '"), "{msg}");
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn history_csv_has_header_and_one_row_per_epoch() {
    let (tr, va) = splits(240, 12);
    let cfg = quick_config();
    let out = train(&small_mlp(), &tr, &va, &cfg).unwrap();
    let csv = out.history.to_csv_string();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,loss,acc,f1,sens,spec,ba,lr");
    assert_eq!(lines.len(), cfg.epochs + 1);
    for (i, line) in lines[1..].iter().enumerate() {
        assert_eq!(line.split(',').count(), 8);
        assert!(line.starts_with(&format!("{},", i + 1)));
    }
}

#[test]
fn rejects_degenerate_splits() {
    let (tr, va) = splits(80, 13);
    let spec = small_mlp();
    let cfg = quick_config();

    let positives: Vec<usize> =
        (0..tr.len()).filter(|&i| tr.label(i) == 1).collect();
    let one_class = tr.subset(&positives).unwrap();
    assert!(matches!(
        train(&spec, &one_class, &va, &cfg),
        Err(Error::Dataset(_))
    ));

    let reshaped = va.expand_checkboxes().unwrap();
    assert!(matches!(train(&spec, &tr, &reshaped, &cfg), Err(Error::Contract(_))));
}

#[test]
fn scoring_rejects_mismatched_schema_fingerprints() {
    let (tr, va) = splits(120, 14);
    let out = train(&small_mlp(), &tr, &va, &quick_config()).unwrap();
    let foreign = va.expand_checkboxes().unwrap();
    match out.model.logits(&foreign) {
        Err(Error::Checkpoint(msg)) => assert!(msg.contains("fingerprint"), "{msg}"),
        other => panic!("expected a fingerprint mismatch, got {other:?}"),
    }
}

#[test]
fn constrained_model_has_no_attention() {
    let (tr, va) = splits(120, 15);
    let out = train(&small_mlp(), &tr, &va, &quick_config()).unwrap();
    match out.model.logits_with_attention(&va) {
        Err(Error::Contract(msg)) => assert_eq!(msg, "model has no attention"),
        other => panic!("expected the no-attention error, got {other:?}"),
    }
}

#[test]
fn checkbox_expansion_round_trips_through_scoring() {
    let (tr, va) = splits(160, 16);
    let cfg = TrainConfig { expand_checkboxes: true, ..quick_config() };
    let out = train(&small_mlp(), &tr, &va, &cfg).unwrap();
    assert!(out.model.checkbox_expanded);
    assert!(out.model.schema.n_checkbox() == 0);
    // Scoring still accepts the raw (unexpanded) layout and expands inside.
    let replay = out.model.evaluate(&va, cfg.threshold).unwrap();
    assert_eq!(replay, out.history.best().val);
}

#[test]
fn probabilities_are_sigmoid_of_logits() {
    let (tr, va) = splits(120, 17);
    let out = train(&small_mlp(), &tr, &va, &quick_config()).unwrap();
    let logits = out.model.logits(&va).unwrap();
    let probs = out.model.probabilities(&va).unwrap();
    for (z, p) in logits.iter().zip(&probs) {
        assert_eq!(sigmoid(*z), *p);
        assert!(*p > 0.0 && *p < 1.0);
    }
}
