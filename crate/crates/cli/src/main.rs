//! `ntband`: simulate factor models, sweep no-trade band widths, run the
//! brute-force band oracle, and backtest or calibrate on daily price CSVs.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod error;
mod output;

use commands::Ctx;
use config::RunConfig;
use error::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "ntband",
    version,
    about = "No-trade band experiments under proportional costs"
)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Scenario a..e (`all` for sweep).
    #[arg(long, global = true)]
    scenario: Option<String>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory [default: config `out_dir`, else `out`].
    #[arg(long, global = true, env = "NTBAND_OUT_DIR", value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker threads for parallel cells [default: all cores].
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Log progress to stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write one simulated path.
    Simulate,
    /// λ-sweep of the theoretical half-width for each cost.
    Sweep {
        /// Also write the path-level companion file.
        #[arg(long)]
        with_path: bool,
    },
    /// Brute-force search over constant half-widths.
    Oracle {
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Backtest configured signals on price CSVs.
    Backtest {
        /// Price CSV; repeat for several instruments. Replaces configured inputs.
        #[arg(long = "input", value_name = "PATH")]
        inputs: Vec<PathBuf>,
        /// Also write a λ-sweep of the band for each input.
        #[arg(long)]
        lambda_sweep: bool,
    },
    /// Grid search for the β maximizing the empirical value.
    Calibrate {
        #[arg(long = "input", value_name = "PATH")]
        inputs: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let out_dir = cli
        .out
        .clone()
        .or_else(|| cfg.out_dir.as_ref().map(|p| cfg.resolve(p)))
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out_dir).map_err(|source| CliError::Output {
        path: out_dir.clone(),
        source,
    })?;
    let ctx = Ctx {
        seed: cli.seed.unwrap_or_else(|| cfg.seed()),
        digits: cfg.precision()?,
        out_dir,
        scenario: cli.scenario.clone(),
        cfg,
    };
    match &cli.command {
        Command::Simulate => commands::cmd_simulate(&ctx),
        Command::Sweep { with_path } => commands::cmd_sweep(&ctx, *with_path),
        Command::Oracle { epsilon } => commands::cmd_oracle(&ctx, *epsilon),
        Command::Backtest { inputs, lambda_sweep } => commands::cmd_backtest(&ctx, inputs, *lambda_sweep),
        Command::Calibrate { inputs } => commands::cmd_calibrate(&ctx, inputs),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.class());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
