//! `trace attention`: export aggregated attention maps from a trained
//! transformer checkpoint. Refuses constrained-MLP checkpoints, which have
//! no attention to export.

use clap::{Args as ClapArgs, ValueEnum};
use std::path::PathBuf;
use trace_core::checkpoint::load_checkpoint;
use trace_core::explain::{
    attention_by_feature, attention_by_sample, export_matrix_csv, select_samples,
};
use trace_core::train::seed_stream;
use trace_core::Result;

use crate::train_cmd::DataFlags;
use crate::util;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum View {
    /// One row per sample: attention mass per key feature.
    BySample,
    /// Query-by-key matrix averaged over samples.
    ByFeature,
}

#[derive(Debug, ClapArgs)]
pub struct Args {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataFlags,
    #[arg(long, value_enum)]
    pub view: View,
    /// How many samples to draw (seeded, without replacement).
    /// by-sample defaults to 100; by-feature uses the whole dataset.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Encoder layer to read (default: the final layer).
    #[arg(long)]
    pub layer: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for attention_<view>.csv.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: Args) -> Result<()> {
    let model = load_checkpoint(&args.checkpoint)?;
    let schema = util::load_schema(&args.data.schema)?;
    let dataset = util::load_dataset(&args.data.data, &schema)?;

    let matrix = match args.view {
        View::BySample => {
            let n = args.samples.unwrap_or(100);
            let (subset, indices) =
                select_samples(&dataset, n, seed_stream(args.seed, "samples"))?;
            let ids: Vec<String> = indices.iter().map(ToString::to_string).collect();
            attention_by_sample(&model, &subset, args.layer, Some(&ids))?
        }
        View::ByFeature => match args.samples {
            Some(n) => {
                let (subset, _) =
                    select_samples(&dataset, n, seed_stream(args.seed, "samples"))?;
                attention_by_feature(&model, &subset, args.layer)?
            }
            None => attention_by_feature(&model, &dataset, args.layer)?,
        },
    };

    util::create_out_dir(&args.out)?;
    let path = args.out.join(format!("attention_{}.csv", matrix.view.as_str()));
    export_matrix_csv(&matrix, &path)?;
    println!("wrote {} ({} rows x {} columns)", path.display(), matrix.rows, matrix.cols);
    Ok(())
}
