//! `cream` - condensed real-time depth models: dataset generation,
//! teacher/student training, evaluation, tensor analysis, FPS benchmarking
//! and trajectory error.

mod commands;
mod configfile;
mod manifest;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "cream",
    version,
    about = "Condensed real-time depth prediction models",
    long_about = "Train and evaluate condensed depth-prediction networks with \
teacher-student knowledge transfer. Subcommands cover synthetic dataset \
generation, the four training regimes (r, t, tr, t+tr), metric evaluation, \
penultimate-tensor analysis, forward-pass FPS benchmarking and absolute \
trajectory error."
)]
struct Cli {
    /// Worker threads (1 = deterministic reference mode). Falls back to the
    /// CREAM_THREADS environment variable, then to the machine core count.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic RGB-D dataset.
    GenData(commands::gen_data::Args),
    /// Train a condensed (student) network in one of the four regimes.
    Train(commands::train::TrainArgs),
    /// Train the higher-capacity teacher network (depth loss).
    TrainTeacher(commands::train::TeacherArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(commands::eval::Args),
    /// Benchmark forward-pass FPS (50 timed runs per resolution).
    Bench(commands::bench::Args),
    /// Emit the penultimate-tensor analysis panel for one sample.
    Analyze(commands::analyze::Args),
    /// Absolute trajectory error between two trajectory files.
    Ate(commands::ate::Args),
}

/// Command failure with its process exit code: 2 for bad flags or config,
/// 1 for runtime failures.
pub struct CmdError {
    pub message: String,
    pub code: i32,
}

impl CmdError {
    pub fn usage(message: impl Into<String>) -> Self {
        CmdError {
            message: message.into(),
            code: 2,
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        CmdError {
            message: message.into(),
            code: 1,
        }
    }
}

fn resolve_threads(flag: Option<usize>) -> usize {
    flag.or_else(|| {
        std::env::var("CREAM_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    })
    .unwrap_or(0)
}

fn main() {
    let cli = Cli::parse();
    cream_core::runtime::set_threads(resolve_threads(cli.threads));
    let result = match cli.command {
        Command::GenData(args) => commands::gen_data::run(args),
        Command::Train(args) => commands::train::run_student(args),
        Command::TrainTeacher(args) => commands::train::run_teacher(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::Bench(args) => commands::bench::run(args),
        Command::Analyze(args) => commands::analyze::run(args),
        Command::Ate(args) => commands::ate::run(args),
    };
    match result {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {}", e.message);
            std::process::exit(e.code);
        }
    }
}
