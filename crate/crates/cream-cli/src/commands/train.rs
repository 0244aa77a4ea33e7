use std::path::PathBuf;

use clap::Parser;
use cream_core::scenegen::Dataset;
use cream_core::trainer::{train, write_history_csv, NetArch, Regime, TrainConfig};

use super::{runtime_error, train_error};
use crate::configfile::ConfigFile;
use crate::manifest::RunManifest;
use crate::CmdError;

#[derive(Parser)]
pub struct TrainArgs {
    /// Training regime: r, t, tr or t+tr.
    #[arg(long)]
    pub regime: String,
    /// Dataset directory (from gen-data or converted real data).
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory for checkpoints, history.csv and manifest.txt.
    #[arg(long)]
    pub out: PathBuf,
    /// Teacher checkpoint (required for regimes t, tr, t+tr).
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Total epoch budget (regimes r, t, tr).
    #[arg(long)]
    pub epochs: Option<u32>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub base_lr: Option<f64>,
    /// Epochs between learning-rate halvings.
    #[arg(long)]
    pub halve_every: Option<u32>,
    /// Tensor-phase cap (t) / exact tensor-phase length (t+tr).
    #[arg(long)]
    pub tensor_epochs: Option<u32>,
    /// Depth fine-tune epochs after transplant (t+tr).
    #[arg(long)]
    pub finetune_epochs: Option<u32>,
    /// key=value config file; explicit flags win over its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Parser)]
pub struct TeacherArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory for checkpoints, history.csv and manifest.txt.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<u32>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub base_lr: Option<f64>,
    #[arg(long)]
    pub halve_every: Option<u32>,
    /// key=value config file; explicit flags win over its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn load_config(path: &Option<PathBuf>) -> Result<ConfigFile, CmdError> {
    match path {
        Some(p) => ConfigFile::load(p),
        None => Ok(ConfigFile::empty()),
    }
}

fn run_training(
    command: &'static str,
    config: TrainConfig,
    data: &PathBuf,
    out: &PathBuf,
    config_file: &Option<PathBuf>,
) -> Result<(), CmdError> {
    let mut manifest = RunManifest::new(command);
    manifest.config("regime", config.regime.as_str());
    manifest.config(
        "arch",
        match config.arch {
            NetArch::Condensed => "condensed",
            NetArch::Teacher => "teacher",
        },
    );
    manifest.config("data", data.display());
    manifest.config("out", out.display());
    manifest.config("seed", config.seed);
    manifest.config("epochs", config.epochs);
    manifest.config("batch", config.batch_size);
    manifest.config("base_lr", config.base_lr);
    manifest.config("halve_every", config.halve_every);
    manifest.config("tensor_epochs", config.tensor_phase_epochs);
    manifest.config("finetune_epochs", config.finetune_epochs);
    manifest.input(&data.join("manifest.csv"))?;
    if let Some(t) = &config.teacher_ckpt {
        manifest.config("teacher", t.display());
        manifest.input(t)?;
    }
    if let Some(c) = config_file {
        manifest.input(c)?;
    }

    let dataset = Dataset::open(data).map_err(runtime_error)?;
    let (_, history) = match train(&config, &dataset) {
        Ok(r) => r,
        Err(e) => {
            let err = train_error(e);
            manifest.write(out, err.code).ok();
            return Err(err);
        }
    };

    let history_path = out.join("history.csv");
    write_history_csv(&history, &history_path).map_err(train_error)?;
    manifest.output(&history_path);
    manifest.output(&out.join("best.crmw"));
    manifest.write(out, 0)?;

    if let Some(last) = history.records.last() {
        println!(
            "trained {} epochs; final val rms_lin {:.4} m (history: {})",
            history.records.len(),
            last.val.rms_lin,
            history_path.display()
        );
    } else {
        println!("trained 0 epochs (nothing to do)");
    }
    Ok(())
}

pub fn run_student(args: TrainArgs) -> Result<(), CmdError> {
    let regime = Regime::parse(&args.regime)
        .ok_or_else(|| CmdError::usage(format!("unknown regime {:?} (r, t, tr, t+tr)", args.regime)))?;
    let file = load_config(&args.config)?;

    let mut config = TrainConfig::new(regime, file.resolve(args.seed, "seed", 0)?);
    config.epochs = file.resolve(args.epochs, "epochs", 30)?;
    config.batch_size = file.resolve(args.batch, "batch", 12)?;
    config.base_lr = file.resolve(args.base_lr, "base_lr", 1e-4)?;
    config.halve_every = file.resolve(args.halve_every, "halve_every", 2)?;
    config.tensor_phase_epochs = file.resolve(args.tensor_epochs, "tensor_epochs", 20)?;
    config.finetune_epochs = file.resolve(args.finetune_epochs, "finetune_epochs", 5)?;
    config.teacher_ckpt = args
        .teacher
        .or_else(|| file.get("teacher").map(PathBuf::from));
    config.out_dir = Some(args.out.clone());

    if regime.needs_teacher() && config.teacher_ckpt.is_none() {
        return Err(CmdError::usage(format!(
            "regime {} requires --teacher CKPT",
            regime.as_str()
        )));
    }
    run_training("train", config, &args.data, &args.out, &args.config)
}

pub fn run_teacher(args: TeacherArgs) -> Result<(), CmdError> {
    let file = load_config(&args.config)?;
    let mut config = TrainConfig::new(Regime::R, file.resolve(args.seed, "seed", 0)?);
    config.arch = NetArch::Teacher;
    config.epochs = file.resolve(args.epochs, "epochs", 30)?;
    config.batch_size = file.resolve(args.batch, "batch", 12)?;
    config.base_lr = file.resolve(args.base_lr, "base_lr", 1e-4)?;
    config.halve_every = file.resolve(args.halve_every, "halve_every", 2)?;
    config.out_dir = Some(args.out.clone());
    run_training("train-teacher", config, &args.data, &args.out, &args.config)
}
