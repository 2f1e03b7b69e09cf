use super::*;
use crate::data::{default_synthetic_schema, generate_synthetic, SyntheticSpec, TabularDataset};
use crate::model::TraceConfig;
use serde_json::Value;

fn cohort(seed: u64) -> TabularDataset {
    generate_synthetic(&SyntheticSpec {
        schema: default_synthetic_schema(),
        n_samples: 60,
        positive_ratio: 0.3,
        seed,
    })
    .unwrap()
    .0
}

fn trace_model() -> (FittedModel, TabularDataset) {
    let data = cohort(31);
    let schema = data.schema().clone();
    let config = TraceConfig {
        model_size: 8,
        n_heads: 2,
        mlp_ratio: 2,
        ..TraceConfig::default()
    };
    let params = TraceParams::init(&schema, &config, 7).unwrap();
    let model = FittedModel {
        source_fingerprint: schema.fingerprint(),
        schema,
        checkbox_expanded: false,
        preprocess: Preprocess::fit(&data, true, false),
        params: ModelParams::Trace { config, params },
    };
    (model, data)
}

fn nnmlp_model() -> (FittedModel, TabularDataset) {
    let data = cohort(32);
    let schema = data.schema().clone();
    let config = NnMlpConfig { hidden1: 8, hidden2: 4 };
    let preprocess = Preprocess::fit(&data, true, true);
    let d = preprocess.apply(&data).unwrap().one_hot_encode().cols;
    let params = NnMlpParams::init(d, &config, 0.3, 7).unwrap();
    let model = FittedModel {
        source_fingerprint: schema.fingerprint(),
        schema,
        checkbox_expanded: false,
        preprocess,
        params: ModelParams::NnMlp { config, params },
    };
    (model, data)
}

#[test]
fn trace_round_trip_is_bitwise() {
    let (model, data) = trace_model();
    let text = to_json_string(&model).unwrap();
    let back = from_json_str(&text).unwrap();

    assert_eq!(back.kind(), "trace");
    assert_eq!(back.preprocess, model.preprocess);
    assert_eq!(back.source_fingerprint, model.source_fingerprint);
    assert_eq!(back.logits(&data).unwrap(), model.logits(&data).unwrap());

    let (_, a) = model.logits_with_attention(&data).unwrap();
    let (_, b) = back.logits_with_attention(&data).unwrap();
    assert_eq!(a, b);

    // save -> load -> save reproduces the file byte for byte.
    assert_eq!(to_json_string(&back).unwrap(), text);
}

#[test]
fn nnmlp_round_trip_is_bitwise_and_validates_signs() {
    let (model, data) = nnmlp_model();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_checkpoint(&model, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();

    assert_eq!(back.kind(), "nnmlp");
    assert_eq!(back.logits(&data).unwrap(), model.logits(&data).unwrap());
    match &back.params {
        ModelParams::NnMlp { params, .. } => assert!(params.constraints_ok()),
        _ => panic!("expected the constrained model"),
    }
}

#[test]
fn serialization_is_deterministic() {
    let (model, _) = trace_model();
    assert_eq!(to_json_string(&model).unwrap(), to_json_string(&model).unwrap());
}

#[test]
fn missing_file_reports_its_path() {
    let err = load_checkpoint("/nonexistent/model.json").unwrap_err();
    match err {
        Error::Io(e) => assert!(e.to_string().contains("/nonexistent/model.json")),
        other => panic!("expected an i/o error, got {other:?}"),
    }
}

fn tampered(text: &str, tamper: impl FnOnce(&mut Value)) -> crate::error::Result<FittedModel> {
    let mut v: Value = serde_json::from_str(text).unwrap();
    tamper(&mut v);
    from_json_str(&v.to_string())
}

fn expect_checkpoint_error<T: std::fmt::Debug>(
    result: crate::error::Result<T>,
    needle: &str,
) {
    match result {
        Err(Error::Checkpoint(msg)) => {
            assert!(msg.contains(needle), "message {msg:?} lacks {needle:?}")
        }
        Err(other) => panic!("expected a checkpoint error with {needle:?}, got {other:?}"),
        Ok(_) => panic!("expected a checkpoint error with {needle:?}, got a value"),
    }
}

#[test]
fn rejects_tampered_documents() {
    let (model, _) = trace_model();
    let text = to_json_string(&model).unwrap();

    expect_checkpoint_error(from_json_str("not json"), "malformed");
    expect_checkpoint_error(
        tampered(&text, |v| v["format_version"] = 99.into()),
        "format version",
    );
    expect_checkpoint_error(
        tampered(&text, |v| v["kind"] = "forest".into()),
        "unknown model kind",
    );
    expect_checkpoint_error(
        tampered(&text, |v| v["source_fingerprint"] = "deadbeef".into()),
        "fingerprint",
    );
    expect_checkpoint_error(
        tampered(&text, |v| {
            v["tensors"].as_array_mut().unwrap().remove(0);
        }),
        "missing tensor",
    );
    expect_checkpoint_error(
        tampered(&text, |v| v["tensors"][0]["shape"] = serde_json::json!([1, 1])),
        "shape",
    );
    expect_checkpoint_error(
        tampered(&text, |v| {
            let copy = v["tensors"][0].clone();
            v["tensors"].as_array_mut().unwrap().push(copy);
        }),
        "duplicate",
    );
    expect_checkpoint_error(
        tampered(&text, |v| {
            let mut ghost = v["tensors"][0].clone();
            ghost["name"] = "ghost".into();
            v["tensors"].as_array_mut().unwrap().push(ghost);
        }),
        "unexpected tensor 'ghost'",
    );
    expect_checkpoint_error(
        tampered(&text, |v| {
            v.as_object_mut().unwrap().remove("trace_config");
        }),
        "lacks its config",
    );
}

#[test]
fn negative_weight_fails_the_sign_check_on_load() {
    let (model, _) = nnmlp_model();
    let text = to_json_string(&model).unwrap();
    expect_checkpoint_error(
        tampered(&text, |v| {
            let tensors = v["tensors"].as_array_mut().unwrap();
            let w1 = tensors.iter_mut().find(|t| t["name"] == "w1").unwrap();
            w1["values"][0] = (-1.0).into();
        }),
        "sign constraints",
    );
}

#[test]
fn non_finite_parameters_refuse_to_save() {
    let (mut model, _) = trace_model();
    if let ModelParams::Trace { params, .. } = &mut model.params {
        let mut named = params.named_mut();
        named[0].1.values_mut()[0] = f64::NAN;
    }
    expect_checkpoint_error(to_json_string(&model), "non-finite");
}
