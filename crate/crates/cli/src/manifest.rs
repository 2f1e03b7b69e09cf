//! The run manifest: every input, resolved setting, and output path of a
//! training run, written before the first optimizer step. A manifest plus
//! the referenced files is sufficient to reproduce the run bit for bit
//! (see the `replay` command). No timestamps: reruns must be byte-identical.

use serde::{Deserialize, Serialize};
use std::path::Path;
use trace_core::train::{ModelSpec, TrainConfig};
use trace_core::{Error, Result};

use crate::util;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "model.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const VAL_FILE: &str = "val.csv";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub data_path: String,
    pub data_sha256: String,
    pub schema_path: String,
    pub schema_fingerprint: String,
    pub val_fraction: f64,
    pub drop_missing: bool,
    pub train_samples: usize,
    pub val_samples: usize,
    pub model: ModelSpec,
    pub train: TrainConfig,
    /// Output file names, relative to the manifest's directory.
    pub outputs: Outputs,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Outputs {
    pub checkpoint: String,
    pub history: String,
    pub report: String,
    pub val_csv: String,
}

impl Default for Outputs {
    fn default() -> Self {
        Outputs {
            checkpoint: CHECKPOINT_FILE.into(),
            history: HISTORY_FILE.into(),
            report: REPORT_FILE.into(),
            val_csv: VAL_FILE.into(),
        }
    }
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        text
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        util::write_bytes(&dir.join(MANIFEST_FILE), self.to_json().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        serde_json::from_str(&util::read_to_string(path)?)
            .map_err(|e| Error::Config(format!("malformed manifest: {e}")))
    }
}
