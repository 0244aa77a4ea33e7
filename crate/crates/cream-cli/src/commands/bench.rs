use std::path::PathBuf;

use clap::Parser;
use cream_core::evalbench::{benchmark_fps, BenchResult, BENCH_RESOLUTIONS};
use cream_core::net::load_checkpoint;

use super::{parse_resolution, runtime_error};
use crate::manifest::RunManifest;
use crate::CmdError;

#[derive(Parser)]
pub struct Args {
    /// Checkpoint whose network is benchmarked.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Resolution WxH; omitted = the four standard rows (640x480, 320x240,
    /// 640x192, 320x96).
    #[arg(long)]
    pub res: Option<String>,
    /// Timed runs per resolution.
    #[arg(long, default_value_t = 50)]
    pub runs: usize,
    /// Untimed warmup iterations before the timed runs.
    #[arg(long, default_value_t = 10)]
    pub warmup: usize,
    /// Output directory for bench.csv and manifest.txt.
    #[arg(long, default_value = "bench-out")]
    pub out: PathBuf,
}

pub fn run(args: Args) -> Result<(), CmdError> {
    let resolutions: Vec<(usize, usize)> = match &args.res {
        Some(r) => vec![parse_resolution(r)?],
        None => BENCH_RESOLUTIONS.to_vec(),
    };

    let mut manifest = RunManifest::new("bench");
    manifest.config("ckpt", args.ckpt.display());
    manifest.config(
        "res",
        args.res.clone().unwrap_or_else(|| "table".to_string()),
    );
    manifest.config("runs", args.runs);
    manifest.config("warmup", args.warmup);
    manifest.config("out", args.out.display());
    manifest.input(&args.ckpt)?;

    let net = load_checkpoint(&args.ckpt).map_err(runtime_error)?;

    let mut csv = String::from("# timing: forward pass only, batch 1, single-threaded\n");
    csv.push_str(BenchResult::CSV_HEADER);
    csv.push('\n');
    println!("Average FPS over {} runs (min, max), forward pass only:", args.runs);
    let mut results = Vec::new();
    for (w, h) in resolutions {
        let r = benchmark_fps(&net, w, h, args.runs, args.warmup).map_err(runtime_error)?;
        println!("  {:>4}x{:<4} {}", w, h, r.table_cell());
        csv.push_str(&r.csv_row());
        csv.push('\n');
        results.push(r);
    }

    std::fs::create_dir_all(&args.out)
        .map_err(|e| CmdError::runtime(format!("cannot create {}: {e}", args.out.display())))?;
    let csv_path = args.out.join("bench.csv");
    std::fs::write(&csv_path, csv).map_err(|e| CmdError::runtime(e.to_string()))?;
    manifest.output(&csv_path);
    manifest.write(&args.out, 0)?;
    Ok(())
}
