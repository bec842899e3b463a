//! `meshalign` command line: synthetic pair generation, mesh-based
//! alignment, evaluation, and the correlation-kernel benchmark.

mod commands;
mod opts;

use clap::{Parser, Subcommand};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "meshalign",
    version,
    about = "Mesh-based image alignment with contextual correlation"
)]
struct Cli {
    /// Thread cap for data-parallel kernels (default: all cores;
    /// MESHALIGN_THREADS is honored when the flag is absent)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic corner-perturbation pairs from source images
    Synth(commands::SynthArgs),
    /// Align a target image onto a reference image
    Align(commands::AlignArgs),
    /// Evaluate pairs: 4-pt RMSE against ground truth or overlap PSNR/SSIM
    Eval(commands::EvalArgs),
    /// Compare the cost-volume and contextual-correlation kernels
    Bench(commands::BenchArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    opts::init_threads(cli.threads);
    let result = match &cli.command {
        Command::Synth(args) => commands::cmd_synth(args),
        Command::Align(args) => commands::cmd_align(args),
        Command::Eval(args) => commands::cmd_eval(args),
        Command::Bench(args) => commands::cmd_bench(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
