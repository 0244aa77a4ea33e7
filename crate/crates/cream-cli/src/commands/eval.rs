use std::path::PathBuf;

use clap::Parser;
use cream_core::evalbench::evaluate_model;
use cream_core::net::load_checkpoint;
use cream_core::objectives::MetricsReport;
use cream_core::scenegen::{Dataset, Split};

use super::runtime_error;
use crate::manifest::RunManifest;
use crate::CmdError;

#[derive(Parser)]
pub struct Args {
    /// Checkpoint to evaluate.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Split to evaluate: train or test.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Treat ground truth beyond this depth (meters) as invalid.
    #[arg(long)]
    pub cap: Option<f64>,
    /// Output directory for eval.csv, per_sample.csv and manifest.txt.
    #[arg(long, default_value = "eval-out")]
    pub out: PathBuf,
}

pub fn run(args: Args) -> Result<(), CmdError> {
    let split = Split::parse(&args.split)
        .ok_or_else(|| CmdError::usage(format!("unknown split {:?}", args.split)))?;

    let mut manifest = RunManifest::new("eval");
    manifest.config("ckpt", args.ckpt.display());
    manifest.config("data", args.data.display());
    manifest.config("split", &args.split);
    manifest.config("cap", args.cap.map(|c| c.to_string()).unwrap_or_default());
    manifest.config("out", args.out.display());
    manifest.input(&args.ckpt)?;
    manifest.input(&args.data.join("manifest.csv"))?;

    let net = load_checkpoint(&args.ckpt).map_err(runtime_error)?;
    let dataset = Dataset::open(&args.data).map_err(runtime_error)?;
    let outcome = evaluate_model(&net, &dataset, split, args.cap).map_err(runtime_error)?;

    std::fs::create_dir_all(&args.out)
        .map_err(|e| CmdError::runtime(format!("cannot create {}: {e}", args.out.display())))?;
    let eval_csv = args.out.join("eval.csv");
    std::fs::write(
        &eval_csv,
        format!("{}\n{}\n", MetricsReport::CSV_HEADER, outcome.pooled.csv_row()),
    )
    .map_err(|e| CmdError::runtime(e.to_string()))?;
    let per_sample_csv = args.out.join("per_sample.csv");
    std::fs::write(&per_sample_csv, outcome.per_sample_csv())
        .map_err(|e| CmdError::runtime(e.to_string()))?;
    manifest.output(&eval_csv);
    manifest.output(&per_sample_csv);
    manifest.write(&args.out, 0)?;

    println!("{}", MetricsReport::CSV_HEADER);
    println!("{}", outcome.pooled.csv_row());
    Ok(())
}
