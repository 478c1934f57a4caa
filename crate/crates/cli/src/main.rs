use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod run;

/// Synthetic shell radiography, single-view reconstruction and surface
/// feature extraction.
#[derive(Debug, Parser)]
#[command(name = "shellforge", version)]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "SHELLFORGE_THREADS")]
    threads: Option<usize>,

    /// Append a stage record to <RUN>/stages.jsonl for `report`.
    #[arg(long, global = true)]
    run: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample shell models and write volume / radiograph pairs with a manifest.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        /// Voxel grid resolution.
        #[arg(long)]
        resolution: Option<usize>,
        /// Number of samples.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Voxelize a shell model (or read a volume) and project it.
    Project {
        #[command(flatten)]
        common: Common,
        /// Existing volume to project instead of the configured model.
        #[arg(long)]
        volume: Option<PathBuf>,
        #[arg(long)]
        resolution: Option<usize>,
        /// Also write the voxelized volume.
        #[arg(long)]
        save_volume: bool,
    },
    /// Blur, noise, quantize and gain-modulate a radiograph.
    Degrade {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Divide a radiograph by a heavily blurred copy of itself.
    Flatfield {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        /// Blur width in pixels (defaults to an eighth of the width).
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Train the reconstruction network on a generated dataset.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory written by `generate`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Reconstruct a density volume from one radiograph.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Mesh, cluster and fit the surfaces of a volume.
    Extract {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
    /// Summarize the stages recorded under --run.
    Report {
        #[command(flatten)]
        common: Common,
    },
    /// Run the analytic oracle checks.
    Selftest,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be >= 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::dispatch(cli.command, cli.run.as_deref()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
