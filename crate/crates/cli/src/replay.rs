//! `trace replay`: re-run a training manifest and optionally verify that
//! the rerun reproduces the original outputs byte for byte.

use clap::Args as ClapArgs;
use std::path::{Path, PathBuf};
use trace_core::{Error, Result};

use crate::manifest::{RunManifest, MANIFEST_FILE};
use crate::train_cmd::{execute, ResolvedRun};
use crate::util;

#[derive(Debug, ClapArgs)]
pub struct Args {
    /// Manifest of the run to reproduce.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory for the rerun's outputs.
    #[arg(long)]
    pub out: PathBuf,
    /// Compare rerun outputs against the originals next to the manifest.
    #[arg(long)]
    pub check: bool,
}

pub fn run(args: Args) -> Result<()> {
    let manifest = RunManifest::read(&args.manifest)?;
    if manifest.command != "train" {
        return Err(Error::Config(format!(
            "cannot replay a '{}' manifest",
            manifest.command
        )));
    }
    let data_path = Path::new(&manifest.data_path);
    let schema_path = Path::new(&manifest.schema_path);
    let data_sha = util::sha256_file(data_path)?;
    if data_sha != manifest.data_sha256 {
        return Err(Error::Config(format!(
            "data file {} hash {} does not match the manifest's {}",
            manifest.data_path, data_sha, manifest.data_sha256
        )));
    }
    let schema = util::load_schema(schema_path)?;
    if schema.fingerprint() != manifest.schema_fingerprint {
        return Err(Error::Config(
            "schema file no longer matches the manifest's fingerprint".into(),
        ));
    }
    let dataset = util::load_dataset(data_path, &schema)?;

    execute(
        ResolvedRun {
            dataset,
            data_path: manifest.data_path.clone(),
            data_sha256: manifest.data_sha256.clone(),
            schema_path: manifest.schema_path.clone(),
            val_fraction: manifest.val_fraction,
            drop_missing: manifest.drop_missing,
            spec: manifest.model.clone(),
            config: manifest.train.clone(),
        },
        &args.out,
    )?;

    if args.check {
        let original_dir = args.manifest.parent().unwrap_or_else(|| Path::new("."));
        let files = [
            MANIFEST_FILE.to_string(),
            manifest.outputs.history.clone(),
            manifest.outputs.checkpoint.clone(),
            manifest.outputs.report.clone(),
            manifest.outputs.val_csv.clone(),
        ];
        for file in &files {
            let original = std::fs::read(original_dir.join(file))
                .map_err(|e| util::io_at(&original_dir.join(file), e))?;
            let rerun = std::fs::read(args.out.join(file))
                .map_err(|e| util::io_at(&args.out.join(file), e))?;
            if original != rerun {
                return Err(Error::Contract(format!("replay mismatch in {file}")));
            }
        }
        println!("replay outputs match the originals");
    }
    Ok(())
}
