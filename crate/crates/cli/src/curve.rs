//! `trace missing-curve`: degrade the training split with simulated missing
//! values at several ratios and chart validation F1/BA against the ratio.
//! The validation split stays untouched, so arms differ only in training
//! data quality.

use clap::Args as ClapArgs;
use std::path::PathBuf;
use trace_core::data::stratified_split;
use trace_core::train::{seed_stream, train};
use trace_core::Result;

use crate::train_cmd::{DataFlags, FitFlags};
use crate::util;

#[derive(Debug, ClapArgs)]
pub struct Args {
    #[command(flatten)]
    pub data: DataFlags,
    #[command(flatten)]
    pub fit: FitFlags,
    /// Comma-separated missing ratios, each in [0, 0.5].
    #[arg(long, default_value = "0,0.1,0.2,0.3,0.4,0.5")]
    pub ratios: String,
    /// Training runs per ratio; repeat r uses root seed `--seed + r`, so
    /// the ratio-0 arm of repeat 0 reproduces a plain `trace train`.
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    /// Output directory for curve.csv.
    #[arg(long)]
    pub out: PathBuf,
}

struct Row {
    ratio: f64,
    repeat: usize,
    f1: f64,
    ba: f64,
}

pub fn run(args: Args) -> Result<()> {
    let ratios = util::parse_float_list(&args.ratios, "missing ratio", 0.0, 0.5)?;
    if args.repeats == 0 {
        return Err(trace_core::Error::Parameter("repeats must be >= 1".into()));
    }
    let schema = util::load_schema(&args.data.schema)?;
    let dataset = util::load_dataset(&args.data.data, &schema)?;
    let spec = args.fit.model_spec();

    let mut rows: Vec<Row> = Vec::new();
    for repeat in 0..args.repeats {
        let base = args.fit.seed + repeat as u64;
        let (train_set, val) =
            stratified_split(&dataset, args.fit.val_fraction, seed_stream(base, "split"))?;
        for &ratio in &ratios {
            let degraded = if ratio > 0.0 {
                train_set.simulate_missing(ratio, seed_stream(base, &format!("missing/{ratio}")))?
            } else {
                train_set.clone()
            };
            let mut config = args.fit.train_config();
            config.seed = base;
            let outcome = train(&spec, &degraded, &val, &config)?;
            let best = outcome.history.best();
            rows.push(Row { ratio, repeat, f1: best.val.f1, ba: best.val.balanced_accuracy });
        }
    }

    let mut csv = String::from("ratio,repeat,f1,ba\n");
    for &ratio in &ratios {
        for row in rows.iter().filter(|r| r.ratio == ratio) {
            csv.push_str(&format!("{},{},{},{}\n", row.ratio, row.repeat, row.f1, row.ba));
        }
    }
    for &ratio in &ratios {
        let of_ratio: Vec<&Row> = rows.iter().filter(|r| r.ratio == ratio).collect();
        let n = of_ratio.len() as f64;
        let f1 = of_ratio.iter().map(|r| r.f1).sum::<f64>() / n;
        let ba = of_ratio.iter().map(|r| r.ba).sum::<f64>() / n;
        csv.push_str(&format!("{ratio},mean,{f1},{ba}\n"));
        println!("ratio {ratio}: mean F1 {f1:.4}, mean BA {ba:.4} over {} repeats", of_ratio.len());
    }

    util::create_out_dir(&args.out)?;
    util::write_bytes(&args.out.join("curve.csv"), csv.as_bytes())?;
    Ok(())
}
