use std::path::PathBuf;

use clap::Parser;
use cream_core::evalbench::{ate, AlignMode, Trajectory};

use super::runtime_error;
use crate::manifest::RunManifest;
use crate::CmdError;

#[derive(Parser)]
pub struct Args {
    /// Estimated trajectory ("timestamp tx ty tz qx qy qz qw" per line).
    #[arg(long)]
    pub est: PathBuf,
    /// Ground-truth trajectory, same format.
    #[arg(long)]
    pub gt: PathBuf,
    /// Alignment group: rigid or similarity.
    #[arg(long, default_value = "rigid")]
    pub mode: String,
    /// Timestamp association window in seconds.
    #[arg(long, default_value_t = 0.02)]
    pub max_dt: f64,
    /// Output directory for ate.csv and manifest.txt.
    #[arg(long, default_value = "ate-out")]
    pub out: PathBuf,
}

pub fn run(args: Args) -> Result<(), CmdError> {
    let mode = AlignMode::parse(&args.mode)
        .ok_or_else(|| CmdError::usage(format!("unknown mode {:?} (rigid, similarity)", args.mode)))?;

    let mut manifest = RunManifest::new("ate");
    manifest.config("est", args.est.display());
    manifest.config("gt", args.gt.display());
    manifest.config("mode", &args.mode);
    manifest.config("max_dt", args.max_dt);
    manifest.config("out", args.out.display());
    manifest.input(&args.est)?;
    manifest.input(&args.gt)?;

    let est = Trajectory::load(&args.est).map_err(runtime_error)?;
    let gt = Trajectory::load(&args.gt).map_err(runtime_error)?;
    let error_m = ate(&est, &gt, mode, args.max_dt).map_err(runtime_error)?;

    std::fs::create_dir_all(&args.out)
        .map_err(|e| CmdError::runtime(format!("cannot create {}: {e}", args.out.display())))?;
    let csv_path = args.out.join("ate.csv");
    std::fs::write(&csv_path, format!("mode,max_dt,ate_m\n{},{},{error_m}\n", args.mode, args.max_dt))
        .map_err(|e| CmdError::runtime(e.to_string()))?;
    manifest.output(&csv_path);
    manifest.write(&args.out, 0)?;

    println!("{error_m}");
    Ok(())
}
