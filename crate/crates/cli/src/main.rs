use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vinerisk::app::{self, Overrides};

#[derive(Parser)]
#[command(name = "vinerisk", version, about = "Rolling vine-copula VaR/ES forecasts and backtests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit, simulate and write risk series, backtests and diagnostics.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Worker layout `L1xL2` (window level x day level).
        #[arg(long)]
        workers: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute backtests from an existing risk_series.csv.
    Backtest {
        #[arg(long = "risk-series")]
        risk_series: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a configuration and its data.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            workers,
            seed,
            out,
        } => app::run(&config, &Overrides { workers, seed, out }).map(|dir| format!("outputs in {}", dir.display())),
        Command::Backtest {
            risk_series,
            config,
            out,
        } => app::backtest(
            &risk_series,
            &config,
            &Overrides {
                out,
                ..Default::default()
            },
        )
        .map(|dir| format!("backtests written to {}", dir.display())),
        Command::Validate { config } => app::validate(&config, &Overrides::default()),
    };
    match result {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
