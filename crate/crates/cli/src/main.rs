//! `droopcert` command-line front end.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::error;

use config::InputError;
use manifest::{config_hash, now_unix, RunManifest};

const EXIT_INPUT: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "droopcert", version, about = "Decentralized small-signal stability certificates for droop-controlled grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads, 0 picks automatically.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the operating point and write it out.
    Powerflow(Common),
    /// Evaluate the decentralized conditions; exit 0 iff certified.
    Certify(Common),
    /// Per-node critical droop ratio against the local bound.
    AlphaSweep(Common),
    /// Nonlinear time-domain run from a perturbed operating point.
    Simulate(Common),
    /// Oracle and certificate over a grid of cross-coupling gains.
    CrossScan(Common),
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<InputError>().is_some() {
            return EXIT_INPUT;
        }
        if let Some(e) = cause.downcast_ref::<droopcert::Error>() {
            return if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_INPUT };
        }
    }
    EXIT_INPUT
}

fn run(name: &str, common: &Common) -> anyhow::Result<u8> {
    let started = now_unix();
    if common.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(common.threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let cfg = config::load(&common.config).map_err(|e| anyhow::Error::new(InputError(e)))?;
    let seed = common.seed.or(cfg.config.seed);
    let out = common
        .out
        .clone()
        .or_else(|| cfg.config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(|e| anyhow::Error::new(InputError(e)))?;

    let exp = cfg.experiment(seed)?;
    commands::log_oracle(&exp);
    let outcome = match name {
        "powerflow" => commands::powerflow(&exp, &out)?,
        "certify" => commands::certify_cmd(&cfg, &exp, &out)?,
        "alpha-sweep" => commands::alpha_sweep_cmd(&cfg, &exp, &out)?,
        "simulate" => commands::simulate_cmd(&cfg, &exp, &out)?,
        "cross-scan" => commands::cross_scan_cmd(&cfg, &exp, &out)?,
        other => unreachable!("unknown command {other}"),
    };
    RunManifest {
        command: name.to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config_hash(&cfg.text, seed),
        seed,
        started_unix: started,
        finished_unix: now_unix(),
        exit_code: outcome.exit_code,
        outputs: outcome.outputs,
    }
    .write(&out)?;
    Ok(outcome.exit_code as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, common) = match &cli.command {
        Command::Powerflow(c) => ("powerflow", c),
        Command::Certify(c) => ("certify", c),
        Command::AlphaSweep(c) => ("alpha-sweep", c),
        Command::Simulate(c) => ("simulate", c),
        Command::CrossScan(c) => ("cross-scan", c),
    };
    env_logger::Builder::new()
        .filter_level(if common.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .format_timestamp(None)
        .init();
    match run(name, common) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            error!("{e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
