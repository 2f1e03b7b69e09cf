//! `trace ablate-missing`: does keeping incomplete samples during training
//! help? Trains a keep arm (full training split) and a drop arm
//! (complete samples only) per focal alpha, evaluating both on the same
//! complete-only validation set.

use clap::Args as ClapArgs;
use std::path::PathBuf;
use trace_core::data::{stratified_split, TabularDataset};
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
    /// Comma-separated focal alpha values, one keep/drop pair each.
    #[arg(long, default_value = "0.5,0.9")]
    pub alphas: String,
    /// Repeats; repeat r uses root seed `--seed + r`.
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    /// Output directory for ablation.csv.
    #[arg(long)]
    pub out: PathBuf,
}

struct Row {
    alpha: f64,
    arm: &'static str,
    repeat: usize,
    train_samples: usize,
    f1: f64,
    ba: f64,
    val_sha256: String,
}

pub fn run(args: Args) -> Result<()> {
    let alphas = util::parse_float_list(&args.alphas, "alpha", 0.0, 1.0)?;
    if args.repeats == 0 {
        return Err(trace_core::Error::Parameter("repeats must be >= 1".into()));
    }
    let schema = util::load_schema(&args.data.schema)?;
    let dataset = util::load_dataset(&args.data.data, &schema)?;
    let spec = args.fit.model_spec();

    let mut rows: Vec<Row> = Vec::new();
    let mut any_incomplete = false;
    for repeat in 0..args.repeats {
        let base = args.fit.seed + repeat as u64;
        let (train_full, val) =
            stratified_split(&dataset, args.fit.val_fraction, seed_stream(base, "split"))?;
        // Both arms score against the identical complete-only validation set.
        let val_complete = val.drop_incomplete()?;
        let val_sha256 = util::sha256_hex(val_complete.to_csv_string().as_bytes());

        let train_complete = train_full.drop_incomplete()?;
        let incomplete = train_complete.len() < train_full.len();
        any_incomplete |= incomplete;
        let arms: Vec<(&'static str, &TabularDataset)> = if incomplete {
            vec![("keep", &train_full), ("drop", &train_complete)]
        } else {
            vec![("keep", &train_full)]
        };

        for &alpha in &alphas {
            for (arm, set) in &arms {
                let mut config = args.fit.train_config();
                config.focal_alpha = alpha;
                config.seed = base;
                let outcome = train(&spec, set, &val_complete, &config)?;
                let best = outcome.history.best();
                rows.push(Row {
                    alpha,
                    arm,
                    repeat,
                    train_samples: set.len(),
                    f1: best.val.f1,
                    ba: best.val.balanced_accuracy,
                    val_sha256: val_sha256.clone(),
                });
            }
        }
    }
    if !any_incomplete {
        eprintln!(
            "warning: training split has no incomplete samples; \
             writing the keep arm only"
        );
    }

    let mut csv = String::from("alpha,arm,repeat,train_samples,f1,ba,val_sha256\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.alpha, row.arm, row.repeat, row.train_samples, row.f1, row.ba, row.val_sha256
        ));
    }
    for &alpha in &alphas {
        for arm in ["keep", "drop"] {
            let of: Vec<&Row> =
                rows.iter().filter(|r| r.alpha == alpha && r.arm == arm).collect();
            if of.is_empty() {
                continue;
            }
            let n = of.len() as f64;
            let f1 = of.iter().map(|r| r.f1).sum::<f64>() / n;
            let ba = of.iter().map(|r| r.ba).sum::<f64>() / n;
            let samples = of.iter().map(|r| r.train_samples).sum::<usize>() as f64 / n;
            csv.push_str(&format!("{alpha},{arm},mean,{samples},{f1},{ba},\n"));
            println!(
                "alpha {alpha} {arm}: mean F1 {f1:.4}, mean BA {ba:.4} \
                 ({samples} training samples)"
            );
        }
    }

    util::create_out_dir(&args.out)?;
    util::write_bytes(&args.out.join("ablation.csv"), csv.as_bytes())?;
    Ok(())
}
