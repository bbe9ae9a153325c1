use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hdet::harness::{self, Overrides, OUT_DIR_ENV};
use hdet::ExecutionMode;

#[derive(Parser)]
#[command(name = "hdet", version, about = "Deterministic multi-replica training simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write `<name>.csv` and `<name>.summary`.
    Run {
        /// JSON config; may name a preset under the `preset` key.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = OUT_DIR_ENV, default_value = "runs")]
        out: PathBuf,
        #[arg(long)]
        mode: Option<ExecutionMode>,
        /// Output file stem; defaults to the preset name.
        #[arg(long)]
        name: Option<String>,
    },
    /// Compare metrics files of runs with the same objective and seed.
    Compare {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long, env = OUT_DIR_ENV, default_value = "runs")]
        out: PathBuf,
    },
    /// List presets, or print one as JSON.
    Presets {
        #[arg(long)]
        show: Option<String>,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<(), harness::HarnessError> {
    match command {
        Command::Run { config, preset, seed, out, mode, name } => {
            if config.is_none() && preset.is_none() {
                return Err(harness::HarnessError::Config("give --config, --preset or both".into()));
            }
            let cfg = harness::load_config(config.as_deref(), &Overrides { preset, seed, mode, name })?;
            let report = harness::run_experiment(&cfg, &out)?;
            print!("{}", report.summary.to_text());
            println!("metrics={}", report.metrics_path.display());
        }
        Command::Compare { files, out } => {
            let cmp = harness::compare(&files, &out)?;
            print!("{}", cmp.report);
            println!("plot data: {} {}", cmp.loss_curves_path.display(), cmp.lr_curves_path.display());
        }
        Command::Presets { show: Some(name) } => {
            println!("{}", serde_json::to_string_pretty(&harness::preset(&name)?)?);
        }
        Command::Presets { show: None } => {
            for p in &harness::PRESETS {
                println!("{:<18} {}", p.name, p.summary);
            }
        }
    }
    Ok(())
}
