//! `xmap`: batch runner for the cross-domain mapping experiments.
//!
//! Every run writes its outputs and a `manifest.json` (resolved config,
//! config hash, seed, version, wall time) into a fresh run directory.
//! Exit codes: 0 success, 1 failure, 2 no feasible epoch or depth, 64 usage.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, ValueEnum};
use serde::Serialize;

use config::Config;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    DemoAmbiguity,
    DepthSweep,
    StopCriterion,
    PerSample,
    Hyperband,
    Distill,
    Nonunique,
    Verify,
}

#[derive(Debug, Parser)]
#[command(name = "xmap", version, about = "Generalization-bound experiments for unsupervised cross-domain mapping")]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// TOML config; missing keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.epochs=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads for independent runs inside the command.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Write outputs here instead of a timestamped directory under `run.out_dir`.
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

const EXIT_FAILURE: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Serialize)]
struct Manifest<'a> {
    command: Command,
    config_hash: String,
    seed: u64,
    versions: Versions,
    started_unix_ms: u128,
    wall_time_s: f64,
    exit_code: u8,
    outputs: Vec<String>,
    config: &'a Config,
}

#[derive(Serialize)]
struct Versions {
    xmap: &'static str,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(Usage(msg)) => {
            eprintln!("xmap: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

struct Usage(String);

fn run(cli: Cli) -> Result<u8, Usage> {
    let text = match &cli.config {
        Some(path) => std::fs::read_to_string(path).map_err(|e| Usage(format!("cannot read {}: {e}", path.display())))?,
        None => String::new(),
    };
    let mut cfg = config::resolve(&text, &cli.overrides).map_err(Usage)?;
    if cli.jobs == 0 {
        return Err(Usage("--jobs must be at least 1".into()));
    }
    cfg.hyperband.jobs = cli.jobs;
    let pair = cfg.domain.build().map_err(|e| Usage(e.to_string()))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build_global()
        .map_err(|e| Usage(e.to_string()))?;

    let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis());
    let dir = cli.run_dir.clone().unwrap_or_else(|| {
        let name = format!("{}-{started}", cli.command.to_possible_value().expect("no skipped variants").get_name());
        PathBuf::from(&cfg.run.out_dir).join(name)
    });
    std::fs::create_dir_all(&dir).map_err(|e| Usage(format!("cannot create {}: {e}", dir.display())))?;
    let resolved = toml::to_string(&cfg).map_err(|e| Usage(e.to_string()))?;

    let clock = Instant::now();
    let mut out = commands::Outputs::new(dir.clone());
    let result = out
        .write("config.toml", &resolved)
        .and_then(|_| commands::dispatch(cli.command, &cfg, &pair, &mut out));
    let code = match &result {
        Ok(true) => 0,
        Ok(false) => EXIT_FAILURE,
        Err(e) if e.is_infeasible_outcome() => EXIT_INFEASIBLE,
        Err(xmap::Error::Config(_)) => EXIT_USAGE,
        Err(_) => EXIT_FAILURE,
    };
    if let Err(e) = &result {
        eprintln!("xmap: {e}");
    }
    let manifest = Manifest {
        command: cli.command,
        config_hash: format!("{:016x}", xmap::rng::tag(&resolved)),
        seed: cfg.train.seed,
        versions: Versions {
            xmap: env!("CARGO_PKG_VERSION"),
        },
        started_unix_ms: started,
        wall_time_s: clock.elapsed().as_secs_f64(),
        exit_code: code,
        outputs: out.written().to_vec(),
        config: &cfg,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    if let Err(e) = std::fs::write(dir.join("manifest.json"), json) {
        eprintln!("xmap: cannot write manifest: {e}");
        return Ok(EXIT_FAILURE);
    }
    println!("{}", dir.display());
    Ok(code)
}
