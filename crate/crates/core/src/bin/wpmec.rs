use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wpmec::experiment::{run, Config, RunOptions};
use wpmec::model::Regime;
use wpmec::Error;

#[derive(Parser)]
#[command(name = "wpmec", about = "Max-min computation efficiency sweeps for wireless-powered MEC")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sweeps described by a TOML config.
    Run {
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads.
        #[arg(long)]
        parallel: Option<usize>,
        /// Comma-separated regimes, e.g. tdma_partial,noma_binary.
        #[arg(long, value_delimiter = ',')]
        regimes: Option<Vec<Regime>>,
    },
}

fn main() -> ExitCode {
    let Command::Run { config, out, seed, parallel, regimes } = Cli::parse().command;
    let outcome = Config::load(&config).and_then(|cfg| run(&cfg, &out, &RunOptions { seed, parallel, regimes }));
    match outcome {
        Ok(summary) if summary.hard_failures > 0 => {
            eprintln!("{} of {} points failed", summary.hard_failures, summary.rows);
            ExitCode::from(3)
        }
        Ok(summary) => {
            println!("wrote {} rows to {}", summary.rows, out.display());
            ExitCode::SUCCESS
        }
        Err(e @ (Error::Config(_) | Error::Io(_))) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(3)
        }
    }
}
