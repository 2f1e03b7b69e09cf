//! Shared plumbing: file loading with path context, hashing, report output.

use sha2::{Digest, Sha256};
use std::path::Path;
use trace_core::data::{parse_schema, FeatureSchema, TabularDataset};
use trace_core::train::EvalReport;
use trace_core::{Error, Result};

/// Wraps an I/O error with the path it happened on.
pub fn io_at(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

pub fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| io_at(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| io_at(path, e))
}

pub fn load_schema(path: &Path) -> Result<FeatureSchema> {
    parse_schema(&read_to_string(path)?)
}

pub fn load_dataset(data: &Path, schema: &FeatureSchema) -> Result<TabularDataset> {
    let file = std::fs::File::open(data).map_err(|e| io_at(data, e))?;
    TabularDataset::from_csv_reader(file, schema)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(std::fs::read(path).map_err(|e| io_at(path, e))?.as_slice()))
}

/// Comma-separated floats ("0,0.1,0.5") with a per-value range check.
pub fn parse_float_list(text: &str, what: &str, lo: f64, hi: f64) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        let v: f64 = part
            .parse()
            .map_err(|_| Error::Parameter(format!("{what} '{part}' is not numeric")))?;
        if !(lo..=hi).contains(&v) {
            return Err(Error::Parameter(format!("{what} {v} outside [{lo}, {hi}]")));
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(Error::Parameter(format!("empty {what} list")));
    }
    Ok(out)
}

pub const REPORT_HEADER: &str =
    "tp,fp,tn,fn,accuracy,precision,f1,sensitivity,specificity,balanced_accuracy";

pub fn report_csv_row(r: &EvalReport) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        r.tp,
        r.fp,
        r.tn,
        r.fn_,
        r.accuracy,
        r.precision,
        r.f1,
        r.sensitivity,
        r.specificity,
        r.balanced_accuracy
    )
}

pub fn report_csv(r: &EvalReport) -> String {
    format!("{REPORT_HEADER}\n{}\n", report_csv_row(r))
}

pub fn print_report(r: &EvalReport) {
    println!("tp {}  fp {}  tn {}  fn {}", r.tp, r.fp, r.tn, r.fn_);
    println!(
        "accuracy {:.4}  precision {:.4}  f1 {:.4}",
        r.accuracy, r.precision, r.f1
    );
    println!(
        "sensitivity {:.4}  specificity {:.4}  balanced accuracy {:.4}",
        r.sensitivity, r.specificity, r.balanced_accuracy
    );
}

pub fn create_out_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| io_at(path, e))
}
