//! `trace`: train and inspect tabular risk models from the command line.
//!
//! Every command is deterministic given its flags: identical inputs, flags,
//! and seed produce byte-identical output files. Randomness flows from
//! `--seed` through named sub-streams, so changing one stage (say, missing-
//! value simulation) never perturbs another (say, parameter init).
//!
//! Exit codes: 0 success, 1 validation or contract failure, 2 I/O failure.

mod ablate;
mod attention;
mod curve;
mod eval;
mod gen_data;
mod manifest;
mod replay;
mod train_cmd;
mod util;

use clap::Parser;
use std::process::ExitCode;
use trace_core::Error;

#[derive(Parser)]
#[command(name = "trace", version, about = "Tabular clinical risk models")]
enum Cli {
    /// Generate a synthetic cohort (data.csv + schema.json).
    GenData(gen_data::Args),
    /// Train a model; writes manifest, checkpoint, history, report, val split.
    Train(train_cmd::Args),
    /// Evaluate a checkpoint on a dataset.
    Eval(eval::Args),
    /// F1/BA as a function of simulated missing-value ratio.
    MissingCurve(curve::Args),
    /// Train with vs without incomplete samples, same validation set.
    AblateMissing(ablate::Args),
    /// Export aggregated attention maps from a trained transformer.
    Attention(attention::Args),
    /// Re-run a training manifest and optionally compare outputs.
    Replay(replay::Args),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
        Err(e) => {
            // --help / --version land here.
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    let result = match cli {
        Cli::GenData(args) => gen_data::run(args),
        Cli::Train(args) => train_cmd::run(args),
        Cli::Eval(args) => eval::run(args),
        Cli::MissingCurve(args) => curve::run(args),
        Cli::AblateMissing(args) => ablate::run(args),
        Cli::Attention(args) => attention::run(args),
        Cli::Replay(args) => replay::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Io(_) => 2,
                _ => 1,
            })
        }
    }
}
