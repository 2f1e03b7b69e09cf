//! `trace eval`: score a checkpoint on a dataset and report the confusion
//! metrics. The checkpoint refuses data whose schema fingerprint differs
//! from the one it was trained on.

use clap::Args as ClapArgs;
use std::path::PathBuf;
use trace_core::checkpoint::load_checkpoint;
use trace_core::Result;

use crate::train_cmd::DataFlags;
use crate::util;

#[derive(Debug, ClapArgs)]
pub struct Args {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataFlags,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Optional path for the report CSV (printed either way).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: Args) -> Result<()> {
    let model = load_checkpoint(&args.checkpoint)?;
    let schema = util::load_schema(&args.data.schema)?;
    let dataset = util::load_dataset(&args.data.data, &schema)?;
    let report = model.evaluate(&dataset, args.threshold)?;
    util::print_report(&report);
    if let Some(out) = &args.out {
        util::write_bytes(out, util::report_csv(&report).as_bytes())?;
    }
    Ok(())
}
