use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use spn_cli::config::ExperimentConfig;
use spn_cli::report::{energy_rows, EnergyArgs};
use spn_cli::{error_kind, evolve, plot, serve};
use spn_core::checkpoint::Checkpoint;
use spn_core::energy::render_table;
use spn_core::env::EnvSelector;

#[derive(Debug, Parser)]
#[command(
    name = "spn",
    version,
    about = "Evolve spiking policy networks by connection search"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the configured number of independent evolutions.
    Evolve {
        /// TOML experiment config; omitted fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Master seed (overrides the config).
        #[arg(long)]
        seed: Option<u64>,
        /// Evaluation threads (overrides the config).
        #[arg(long)]
        workers: Option<usize>,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of runs (overrides the config).
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Evaluate a checkpoint and print a JSON report.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// `cartpole`, `tcp:HOST:PORT` or `cmd:PROGRAM ARG...`.
        #[arg(long, default_value = "cartpole")]
        env: String,
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
        episodes: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare optimization and inference energy against a dense network.
    EnergyReport(EnergyArgs),
    /// Draw learning curves from a metrics CSV as SVG.
    Plot {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a built-in environment over the line protocol.
    ServeEnv {
        #[arg(long, default_value = "cartpole")]
        env: String,
        /// Listen on this TCP port instead of using stdin/stdout.
        #[arg(long)]
        port: Option<u16>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Evolve {
            config,
            seed,
            workers,
            out,
            runs,
        } => {
            let mut cfg = match config {
                Some(path) => ExperimentConfig::load(&path)?,
                None => ExperimentConfig::default(),
            };
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.workers = workers.unwrap_or(cfg.workers);
            cfg.out_dir = out.unwrap_or(cfg.out_dir);
            cfg.runs = runs.unwrap_or(cfg.runs);
            evolve::evolve(&cfg, &mut std::io::stdout().lock())?;
        }
        Command::Eval {
            ckpt,
            env,
            episodes,
            seed,
        } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            let factory = env.parse::<EnvSelector>()?.open()?;
            let report = ckpt.evaluate(factory.as_ref(), episodes as usize, seed)?;
            println!("{}", serde_json::to_string(&report)?);
        }
        Command::EnergyReport(args) => {
            let rows = energy_rows(&args)?;
            if args.json {
                for row in &rows {
                    println!("{}", serde_json::to_string(row)?);
                }
            } else {
                print!("{}", render_table(&rows));
            }
        }
        Command::Plot { csv, out } => plot::plot(&csv, &out)?,
        Command::ServeEnv { env, port } => match port {
            Some(port) => serve::serve_tcp(&env, port)?,
            None => serve::serve_stdio(&env)?,
        },
    }
    Ok(())
}

fn fail(kind: &str, message: &str) -> ExitCode {
    let line = serde_json::json!({ "error": message, "kind": kind });
    eprintln!("{line}");
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
            let first = first.trim_start_matches("error: ");
            fail("usage", first);
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(error_kind(&e), &format!("{e:#}")),
    }
}
