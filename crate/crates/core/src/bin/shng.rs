use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use shng::io::{execute, init_threads, Command, RunConfig};

/// Batch runs of the score-driven Heston-Nandi model.
///
/// Worker threads follow SHNG_THREADS; logging follows RUST_LOG.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Estimate, filter, and write parameters, states, RMSE and ACF tables.
    Fit(Common),
    /// Price the configured strike/maturity grid and VIX terms.
    Price(Common),
    /// Monte Carlo paths and a synthetic data panel.
    Simulate(Common),
    /// Closed forms against brute force and Monte Carlo.
    Validate(Common),
    /// Descriptive statistics, variance decomposition, moments and densities.
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(short, long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(short, long)]
    seed: Option<u64>,
    /// Output directory; overrides the configured one.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (cmd, args) = match cli.cmd {
        Cmd::Fit(a) => (Command::Fit, a),
        Cmd::Price(a) => (Command::Price, a),
        Cmd::Simulate(a) => (Command::Simulate, a),
        Cmd::Validate(a) => (Command::Validate, a),
        Cmd::Report(a) => (Command::Report, a),
    };
    let res = init_threads().and_then(|_| {
        let mut cfg = RunConfig::load(&args.config)?;
        if let Some(s) = args.seed {
            cfg.seed = s;
        }
        let dir = args.out.or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
        execute(cmd, &cfg, &dir)
    });
    match res {
        Ok(m) => {
            println!("{}: {} files, config {}", m.command, m.files.len(), &m.config_hash[..12]);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
