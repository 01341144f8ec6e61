//! `meroput`: batch front-end for the American put recursion.

mod commands;
mod error;
mod output;

use clap::{Parser, Subcommand};
use commands::Context;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "meroput", version, about = "American put pricing under meromorphic Lévy processes")]
struct Cli {
    /// Print per-step timings to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute V_k; writes value.csv, boundary.csv, mixture.csv and diagnostics.txt.
    Price { config: PathBuf },
    /// Compute only the exercise boundary.
    Boundary { config: PathBuf },
    /// Compare the (n, k) pairs in converge.pairs against the largest n.
    Converge { config: PathBuf },
    /// Check the closed form against quadrature, Monte Carlo and (Brownian only) CRR.
    CompareOracle { config: PathBuf },
}

type Handler = fn(&Context) -> error::Result<Vec<PathBuf>>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (path, f): (&PathBuf, Handler) = match &cli.command {
        Command::Price { config } => (config, commands::price),
        Command::Boundary { config } => (config, commands::boundary),
        Command::Converge { config } => (config, commands::converge),
        Command::CompareOracle { config } => (config, commands::compare_oracle),
    };
    let result = Context::load(path, cli.verbose).and_then(|ctx| match ctx.cfg.workers {
        0 => f(&ctx),
        w => match rayon::ThreadPoolBuilder::new().num_threads(w).build() {
            Ok(pool) => pool.install(|| f(&ctx)),
            Err(e) => {
                eprintln!("warning: could not build a {w}-thread pool ({e}), using the default");
                f(&ctx)
            }
        },
    });
    match result {
        Ok(files) => {
            for file in files {
                println!("{}", file.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
