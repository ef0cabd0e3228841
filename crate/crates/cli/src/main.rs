use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ttopt_cli::{print_defaults, run_experiment, Config};

/// Tensor-train solvers for PDE-constrained optimization under uncertainty.
#[derive(Parser)]
#[command(name = "ttopt", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        /// Path to a `key = value` config file with an `experiment` key.
        config: PathBuf,
        /// Override the output directory from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the random seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the worker-thread count (0 = all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Print the default config of an experiment kind.
    Defaults {
        /// One of: elliptic-1d, elliptic-2d, topopt, mc-compare, eps-sweep,
        /// beta-sweep.
        kind: String,
    },
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Defaults { kind } => match print_defaults(&kind) {
            Ok(text) => {
                print!("{text}");
                ExitCode::SUCCESS
            }
            Err(err) => {
                eprintln!("error: {err}");
                ExitCode::FAILURE
            }
        },
        Command::Run {
            config,
            out,
            seed,
            threads,
        } => {
            let run = || -> ttopt_core::Result<bool> {
                let text = std::fs::read_to_string(&config)?;
                let mut cfg = Config::parse(&text)?;
                if let Some(seed) = seed {
                    cfg.set("seed", seed.to_string());
                }
                if let Some(out) = &out {
                    cfg.set("out", out.display().to_string());
                }
                if let Some(threads) = threads {
                    cfg.set("threads", threads.to_string());
                }
                let threads = cfg.usize("threads")?;
                if threads > 0 {
                    rayon::ThreadPoolBuilder::new()
                        .num_threads(threads)
                        .build_global()
                        .map_err(|e| {
                            ttopt_core::Error::invalid(format!("thread pool: {e}"))
                        })?;
                }
                let out_dir = PathBuf::from(cfg.str("out"));
                run_experiment(&cfg, &out_dir)
            };
            match run() {
                Ok(true) => ExitCode::SUCCESS,
                Ok(false) => {
                    eprintln!("warning: iteration did not reach its stopping tolerance");
                    ExitCode::from(2)
                }
                Err(err) => {
                    eprintln!("error: {err}");
                    ExitCode::FAILURE
                }
            }
        }
    }
}
