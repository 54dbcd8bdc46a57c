//! `everett`: simulate the qubit-controlled switch run and analyse it blind.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use everett::config::RunConfig;
use everett::pipeline::{self, PipelineError};

#[derive(Parser)]
#[command(name = "everett", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write one bit file per configured source.
    Generate(Common),
    /// Blind the bits, simulate the acquisition, write readings and the sealed key.
    Run(Common),
    /// Pooled high/low statistics and histogram without the key.
    BlindedSummary {
        #[command(flatten)]
        common: Common,
        /// Readings file; defaults to <out>/readings.csv.
        #[arg(long)]
        readings: Option<PathBuf>,
        /// Rejected: the blinded analysis must not read the key.
        #[arg(long)]
        key: Option<PathBuf>,
    },
    /// Unblind with the key, fit against readout fidelity and set the bound.
    UnblindFit {
        #[command(flatten)]
        common: Common,
        /// Readings file; defaults to <out>/readings.csv.
        #[arg(long)]
        readings: Option<PathBuf>,
        /// Key file; defaults to <out>/sealed/blinding_key.csv.
        #[arg(long)]
        key: Option<PathBuf>,
    },
    /// Run every stage and write report.txt.
    Report(Common),
}

fn load(path: &Path) -> Result<RunConfig, PipelineError> {
    Ok(RunConfig::load(path)?)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Generate(c) => {
            for path in pipeline::cmd_generate(&load(&c.config)?, &c.out)? {
                println!("wrote {}", path.display());
            }
        }
        Command::Run(c) => {
            let (readings, key) = pipeline::cmd_run(&load(&c.config)?, &c.out)?;
            println!("wrote {}", readings.display());
            println!("sealed key {}", key.display());
        }
        Command::BlindedSummary { common, readings, key } => {
            let cfg = load(&common.config)?;
            let readings = readings.unwrap_or_else(|| common.out.join(pipeline::READINGS_FILE));
            let summary = pipeline::cmd_blinded_summary(&cfg, &readings, key.as_deref(), &common.out)?;
            print!("{}", summary.render());
        }
        Command::UnblindFit { common, readings, key } => {
            let cfg = load(&common.config)?;
            let readings = readings.unwrap_or_else(|| common.out.join(pipeline::READINGS_FILE));
            let key = key.unwrap_or_else(|| pipeline::key_path(&common.out));
            let result = pipeline::cmd_unblind_fit(&cfg, &readings, &key, &common.out)?;
            print!("{}", result.render(&cfg));
        }
        Command::Report(c) => {
            print!("{}", pipeline::cmd_report(&load(&c.config)?, &c.out)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
