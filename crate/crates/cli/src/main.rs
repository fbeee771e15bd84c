//! `sta`: design, verify and survey trap-transport protocols.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use sha2::{Digest, Sha256};

use commands::{RunContext, Status};

const EXIT_USAGE: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "sta", version, about = "Reverse-engineered atom transport in anharmonic traps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML configuration file
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (created if missing)
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Global seed; overrides `seed` in the config
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads; overrides `sweep.threads` (0 = all cores)
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
    /// Override a config key, e.g. --set transport.u=6.97 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Design a trap trajectory x0(t) and report the existence bounds
    #[command(after_long_help = help_text(&[config::KEYS_DESIGN]))]
    Design(Common),
    /// Design, then integrate the particle and report the round-trip error
    #[command(after_long_help = help_text(&[config::KEYS_DESIGN, config::KEYS_VERIFY]))]
    Verify(Common),
    /// Residual-energy map over (xi/d, u) for the harmonic one-point design
    #[command(after_long_help = help_text(&[config::KEYS_DESIGN, config::KEYS_MAP]))]
    Map(Common),
    /// Thermal-packet energy sweep and magic-time extraction
    #[command(after_long_help = help_text(&[config::KEYS_MAGIC]))]
    Magic(Common),
    /// Wave-packet transport at several durations
    #[command(after_long_help = help_text(&[config::KEYS_DESIGN, config::KEYS_QUANTUM]))]
    Quantum(Common),
}

fn help_text(sections: &[&str]) -> String {
    let mut s = String::from(config::KEYS_COMMON);
    for sec in sections {
        s.push('\n');
        s.push_str(sec);
    }
    s.push_str("\n\nEXIT CODES\n  0 success, 1 usage error, 2 infeasible design, 3 numerical failure");
    s
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn run(name: &str, common: &Common, f: fn(&RunContext) -> Result<Status>) -> Result<Status> {
    let loaded = config::load(common.config.as_deref(), &common.overrides)?;
    let mut cfg = loaded.config;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(t) = common.threads {
        cfg.sweep.threads = t;
    }
    let threads = if cfg.sweep.threads == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        cfg.sweep.threads
    };
    std::fs::create_dir_all(&common.out)
        .with_context(|| format!("creating output directory {}", common.out.display()))?;
    // thread count is excluded: results do not depend on it
    let mut echoed = cfg.clone();
    echoed.sweep.threads = 0;
    let resolved = toml::to_string_pretty(&echoed).context("serialising resolved config")?;
    std::fs::write(common.out.join("config.resolved.toml"), &resolved)?;
    let provenance = json!({
        "tool": "sta",
        "version": env!("CARGO_PKG_VERSION"),
        "subcommand": name,
        "seed": cfg.seed,
        "threads": threads,
        "config_path": common.config.as_ref().map(|p| p.display().to_string()),
        "config_sha256": loaded.source.as_deref().map(sha256_hex),
        "overrides": common.overrides,
        "resolved_config_sha256": sha256_hex(resolved.as_bytes()),
    });
    std::fs::write(
        common.out.join("provenance.json"),
        serde_json::to_string_pretty(&provenance)? + "\n",
    )?;
    let ctx = RunContext { config: cfg, out: common.out.clone(), threads };
    f(&ctx)
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    use sta_core::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Infeasible(_) => EXIT_INFEASIBLE,
                E::Integration { .. }
                | E::Root(_)
                | E::Sampling(_)
                | E::Convergence(_)
                | E::Propagation(_)
                | E::Basis(_) => EXIT_NUMERICAL,
                _ => EXIT_USAGE,
            };
        }
    }
    EXIT_USAGE
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Design(c) => run("design", c, commands::design),
        Command::Verify(c) => run("verify", c, commands::verify),
        Command::Map(c) => run("map", c, commands::map),
        Command::Magic(c) => run("magic", c, commands::magic),
        Command::Quantum(c) => run("quantum", c, commands::quantum),
    };
    match result {
        Ok(Status::Success) => ExitCode::SUCCESS,
        Ok(Status::Infeasible) => ExitCode::from(EXIT_INFEASIBLE),
        Ok(Status::Numerical) => ExitCode::from(EXIT_NUMERICAL),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
