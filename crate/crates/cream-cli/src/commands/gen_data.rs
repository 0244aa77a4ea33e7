use std::path::PathBuf;

use clap::Parser;
use cream_core::scenegen::{generate_dataset, SceneSpec};

use super::{parse_resolution, runtime_error};
use crate::manifest::RunManifest;
use crate::CmdError;

#[derive(Parser)]
pub struct Args {
    /// Generator seed; identical seeds reproduce identical datasets.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Resolution as WxH, divisible by 8 (e.g. 64x48, 320x240).
    #[arg(long, default_value = "64x48")]
    pub res: String,
    /// Number of training samples.
    #[arg(long, default_value_t = 64)]
    pub train: usize,
    /// Number of test samples.
    #[arg(long, default_value_t = 16)]
    pub test: usize,
    /// Depth-range preset: indoor (0.5-10 m) or outdoor (2-50 m).
    #[arg(long, default_value = "indoor")]
    pub preset: String,
    /// Fraction of depth pixels zeroed as sensor holes (0 to 0.15).
    #[arg(long)]
    pub p_hole: Option<f32>,
    /// Output directory for images and manifest.csv.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: Args) -> Result<(), CmdError> {
    let (w, h) = parse_resolution(&args.res)?;
    let mut spec = match args.preset.as_str() {
        "indoor" => SceneSpec::indoor(args.seed, w, h),
        "outdoor" => SceneSpec::outdoor(args.seed, w, h),
        other => return Err(CmdError::usage(format!("unknown preset {other:?}"))),
    };
    if let Some(p) = args.p_hole {
        spec.p_hole = p;
    }
    spec.validate().map_err(|e| CmdError::usage(e.to_string()))?;

    let mut manifest = RunManifest::new("gen-data");
    manifest.config("seed", args.seed);
    manifest.config("res", &args.res);
    manifest.config("train", args.train);
    manifest.config("test", args.test);
    manifest.config("preset", &args.preset);
    manifest.config("p_hole", spec.p_hole);
    manifest.config("out", args.out.display());

    generate_dataset(&spec, args.train, args.test, &args.out).map_err(runtime_error)?;
    manifest.output(&args.out.join("manifest.csv"));
    manifest.write(&args.out, 0)?;
    println!(
        "wrote {} train + {} test samples at {}x{} to {}",
        args.train,
        args.test,
        w,
        h,
        args.out.display()
    );
    Ok(())
}
