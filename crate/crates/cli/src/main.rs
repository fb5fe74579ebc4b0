//! `pinlab`: reproducible experiments on the disordered pinning model.
//!
//! Every subcommand reads one TOML config, runs a recipe from the library
//! and writes CSV tables plus a JSON manifest into the output directory.
//! Identical config and seed reproduce identical bytes regardless of the
//! thread count. Exit codes: 0 success, 2 config error, 3 budget error,
//! 4 failed checks under `--assert`.

mod config;
mod output;
mod recipes;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

use config::ExperimentConfig;
use recipes::RecipeOutput;

/// Errors with a contractual exit code.
#[derive(Debug)]
pub enum CliError {
    /// Unusable configuration (exit 2): parse failures, schema or range
    /// violations, and library rejections of config-derived values.
    Config(String),
    /// A hard cost guard refused the request (exit 3).
    Budget(String),
    /// Output could not be written (exit 1).
    Io(String),
}

impl From<pinlab::Error> for CliError {
    fn from(e: pinlab::Error) -> Self {
        match e {
            pinlab::Error::Budget { .. } => CliError::Budget(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "pinlab", version, about = "Pinning-model laboratory workbench")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory for CSV tables and the manifest.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads for the Monte Carlo pools.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Master seed override for this invocation.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Exit nonzero when any verdict fails.
    #[arg(long, global = true)]
    assert: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Renewal mass asymptote and envelope constants.
    RenewalCheck,
    /// Quenched free energy with pure-system bounds.
    FreeEnergy,
    /// Free-energy monotonicity along the coupling grid.
    Monotonicity,
    /// Block decomposition identity on sampled charges.
    CgIdentity,
    /// Geometric envelopes over exact visit probabilities.
    PiDecay,
    /// Variance identity of the q-body functional.
    CmVariance,
    /// Averaging-law statistic against its closed form.
    CeLaw,
    /// Local-time scaling law test.
    LocalTime,
    /// Coarse-graining lengths and shifts per coupling.
    ShiftTable,
    /// Fractional moments against the boundedness level.
    FmBound,
    /// Holder factorization check on admissible block sets.
    HolderChain,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::RenewalCheck => "renewal-check",
            Command::FreeEnergy => "free-energy",
            Command::Monotonicity => "monotonicity",
            Command::CgIdentity => "cg-identity",
            Command::PiDecay => "pi-decay",
            Command::CmVariance => "cm-variance",
            Command::CeLaw => "ce-law",
            Command::LocalTime => "local-time",
            Command::ShiftTable => "shift-table",
            Command::FmBound => "fm-bound",
            Command::HolderChain => "holder-chain",
        }
    }

    fn run(self, cfg: &ExperimentConfig, seed: u64) -> Result<RecipeOutput, CliError> {
        match self {
            Command::RenewalCheck => recipes::renewal_check(cfg, seed),
            Command::FreeEnergy => recipes::free_energy(cfg, seed),
            Command::Monotonicity => recipes::monotonicity(cfg, seed),
            Command::CgIdentity => recipes::cg_identity(cfg, seed),
            Command::PiDecay => recipes::pi_decay(cfg, seed),
            Command::CmVariance => recipes::cm_variance(cfg, seed),
            Command::CeLaw => recipes::ce_law(cfg, seed),
            Command::LocalTime => recipes::local_time(cfg, seed),
            Command::ShiftTable => recipes::shift_table(cfg, seed),
            Command::FmBound => recipes::fm_bound(cfg, seed),
            Command::HolderChain => recipes::holder_chain(cfg, seed),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(failed_checks) => {
            if cli.assert && failed_checks > 0 {
                eprintln!("error: {failed_checks} check(s) failed under --assert");
                ExitCode::from(4)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Budget(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
        Err(CliError::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> Result<usize, CliError> {
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config PATH is required".into()))?;
    let out_dir = cli
        .out
        .as_ref()
        .ok_or_else(|| CliError::Config("--out DIR is required".into()))?;
    let threads = match cli.threads {
        Some(0) => return Err(CliError::Config("--threads must be >= 1".into())),
        Some(t) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build_global()
                .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
            t
        }
        None => rayon::current_num_threads(),
    };

    let raw = std::fs::read(config_path).map_err(|e| {
        CliError::Config(format!("config: cannot read {}: {e}", config_path.display()))
    })?;
    let config_sha256 = format!("{:x}", Sha256::digest(&raw));
    let text = String::from_utf8(raw)
        .map_err(|_| CliError::Config("config: file is not valid UTF-8".into()))?;
    let cfg = ExperimentConfig::parse(&text)?;
    let seed = cli.seed.unwrap_or(cfg.run.master_seed);

    let result = cli.command.run(&cfg, seed)?;
    output::write_all(
        out_dir,
        cli.command.name(),
        &config_sha256,
        seed,
        threads,
        &result.tables,
        &result.verdicts,
    )?;
    for table in &result.tables {
        println!(
            "{}: wrote {}.csv ({} rows)",
            cli.command.name(),
            table.name,
            table.rows.len()
        );
    }
    println!(
        "{}: {} check(s), {} failed",
        cli.command.name(),
        result.verdicts.checked,
        result.verdicts.failed
    );
    Ok(result.verdicts.failed)
}
