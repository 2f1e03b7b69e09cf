//! Checkpoint files: a trained model serialized to JSON and restored
//! exactly.
//!
//! Floats are written in shortest round-trip form, so save → load → save
//! reproduces parameters (and therefore predictions) bit for bit. Loading
//! re-validates everything it can: configs, tensor names and shapes against
//! the schema, finiteness, and the sign constraints of the constrained
//! model.

use crate::data::FeatureSchema;
use crate::error::{Error, Result};
use crate::model::{TraceConfig, TraceParams};
use crate::nnmlp::{NnMlpConfig, NnMlpParams};
use crate::train::{FittedModel, ModelParams, Preprocess};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

/// Bumped on any breaking change to the container layout.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorDoc {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointDoc {
    format_version: u32,
    /// "trace" or "nnmlp".
    kind: String,
    /// Fingerprint of the raw data schema the model accepts.
    source_fingerprint: String,
    /// Whether checkbox groups were expanded before training; when true,
    /// `schema` is the expanded layout.
    checkbox_expanded: bool,
    schema: FeatureSchema,
    preprocess: Preprocess,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    trace_config: Option<TraceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nnmlp_config: Option<NnMlpConfig>,
    /// Parameters in canonical order.
    tensors: Vec<TensorDoc>,
}

fn to_doc(model: &FittedModel) -> Result<CheckpointDoc> {
    let (trace_config, nnmlp_config, named) = match &model.params {
        ModelParams::Trace { config, params } => (Some(config.clone()), None, params.named()),
        ModelParams::NnMlp { config, params } => (None, Some(config.clone()), params.named()),
    };
    let mut tensors = Vec::with_capacity(named.len());
    for (name, t) in named {
        if !t.is_finite() {
            return Err(Error::Checkpoint(format!(
                "tensor '{name}' holds a non-finite value; refusing to save"
            )));
        }
        tensors.push(TensorDoc {
            name,
            shape: t.shape().to_vec(),
            values: t.values().to_vec(),
        });
    }
    Ok(CheckpointDoc {
        format_version: FORMAT_VERSION,
        kind: model.kind().to_string(),
        source_fingerprint: model.source_fingerprint.clone(),
        checkbox_expanded: model.checkbox_expanded,
        schema: model.schema.clone(),
        preprocess: model.preprocess.clone(),
        trace_config,
        nnmlp_config,
        tensors,
    })
}

/// Copies stored tensors into freshly constructed parameters, insisting on
/// an exact one-to-one match of names and shapes.
fn fill_named(
    doc_tensors: Vec<TensorDoc>,
    named: Vec<(String, &mut crate::tensor::Tensor)>,
) -> Result<()> {
    let mut stored: HashMap<String, TensorDoc> = HashMap::with_capacity(doc_tensors.len());
    for t in doc_tensors {
        if stored.insert(t.name.clone(), t).is_some() {
            return Err(Error::Checkpoint("duplicate tensor name in checkpoint".into()));
        }
    }
    for (name, tensor) in named {
        let doc = stored
            .remove(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor '{name}'")))?;
        if doc.shape != tensor.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor '{name}' has shape {:?}, expected {:?}",
                doc.shape,
                tensor.shape()
            )));
        }
        if doc.values.len() != tensor.numel() {
            return Err(Error::Checkpoint(format!(
                "tensor '{name}' carries {} values for {} slots",
                doc.values.len(),
                tensor.numel()
            )));
        }
        if doc.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint(format!("tensor '{name}' holds a non-finite value")));
        }
        tensor.values_mut().copy_from_slice(&doc.values);
    }
    if let Some(extra) = stored.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor '{extra}'")));
    }
    Ok(())
}

fn from_doc(doc: CheckpointDoc) -> Result<FittedModel> {
    if doc.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {} not supported (this build reads {FORMAT_VERSION})",
            doc.format_version
        )));
    }
    if !doc.checkbox_expanded && doc.schema.fingerprint() != doc.source_fingerprint {
        return Err(Error::Checkpoint(
            "schema does not match the stored source fingerprint".into(),
        ));
    }
    let params = match doc.kind.as_str() {
        "trace" => {
            let config = doc
                .trace_config
                .ok_or_else(|| Error::Checkpoint("trace checkpoint lacks its config".into()))?;
            config.validate()?;
            let mut params = TraceParams::init(&doc.schema, &config, 0)?;
            fill_named(doc.tensors, params.named_mut())?;
            ModelParams::Trace { config, params }
        }
        "nnmlp" => {
            let config = doc
                .nnmlp_config
                .ok_or_else(|| Error::Checkpoint("nnmlp checkpoint lacks its config".into()))?;
            config.validate()?;
            let d = doc
                .tensors
                .iter()
                .find(|t| t.name == "w1")
                .map(|t| t.shape.first().copied().unwrap_or(0))
                .ok_or_else(|| Error::Checkpoint("missing tensor 'w1'".into()))?;
            let mut params = NnMlpParams::init(d, &config, 0.5, 0)?;
            fill_named(doc.tensors, params.named_mut())?;
            if !params.constraints_ok() {
                return Err(Error::Checkpoint(
                    "stored parameters violate the sign constraints".into(),
                ));
            }
            ModelParams::NnMlp { config, params }
        }
        other => {
            return Err(Error::Checkpoint(format!("unknown model kind '{other}'")));
        }
    };
    Ok(FittedModel {
        schema: doc.schema,
        source_fingerprint: doc.source_fingerprint,
        checkbox_expanded: doc.checkbox_expanded,
        preprocess: doc.preprocess,
        params,
    })
}

/// Serializes a model to the JSON container (deterministic byte output).
pub fn to_json_string(model: &FittedModel) -> Result<String> {
    let doc = to_doc(model)?;
    Ok(serde_json::to_string(&doc).expect("checkpoint doc serializes"))
}

/// Parses and validates a JSON container.
pub fn from_json_str(text: &str) -> Result<FittedModel> {
    let doc: CheckpointDoc = serde_json::from_str(text)
        .map_err(|e| Error::Checkpoint(format!("malformed checkpoint: {e}")))?;
    from_doc(doc)
}

pub fn save_checkpoint(model: &FittedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = to_json_string(model)?;
    std::fs::write(path, text)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<FittedModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    from_json_str(&text)
}

#[cfg(test)]
mod tests;
