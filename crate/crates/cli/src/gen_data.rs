//! `trace gen-data`: write a synthetic cohort for experiments and tests.

use clap::Args as ClapArgs;
use std::path::PathBuf;
use trace_core::data::{default_synthetic_schema, generate_synthetic, SyntheticSpec};
use trace_core::Result;

use crate::util;

#[derive(Debug, ClapArgs)]
pub struct Args {
    #[arg(long, default_value_t = 2000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0.1)]
    pub positive_ratio: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of cells to blank out after generation (0 = complete data).
    #[arg(long, default_value_t = 0.0)]
    pub missing: f64,
    /// Output directory for data.csv and schema.json.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: Args) -> Result<()> {
    let schema = default_synthetic_schema();
    let (mut data, _) = generate_synthetic(&SyntheticSpec {
        schema: schema.clone(),
        n_samples: args.samples,
        positive_ratio: args.positive_ratio,
        seed: args.seed,
    })?;
    if args.missing > 0.0 {
        data = data.simulate_missing(args.missing, args.seed)?;
    }

    util::create_out_dir(&args.out)?;
    let mut schema_json = serde_json::to_string_pretty(&schema).expect("schema serializes");
    schema_json.push('\n');
    util::write_bytes(&args.out.join("schema.json"), schema_json.as_bytes())?;
    data.write_csv(args.out.join("data.csv"))?;
    println!(
        "wrote {} samples ({} positive) to {}",
        data.len(),
        data.positive_count(),
        args.out.display()
    );
    Ok(())
}
