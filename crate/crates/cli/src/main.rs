//! `subdiff`: batch runner for the sub-diffusion control experiments.

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use serde::Serialize;

use artifacts::Artifacts;
use commands::Command;
use config::RunConfig;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_PROPERTY: u8 = 4;

#[derive(Parser)]
#[command(
    name = "subdiff",
    version,
    about = "Optimal control of FBSDEs driven by time-changed Brownian motion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `monte_carlo.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `output`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; overrides `threads`.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    subcommand: &'static str,
    config_sha256: &'a str,
    seed: u64,
    version: &'static str,
    threads: usize,
    wall_time_seconds: f64,
    artifacts: &'a [String],
    status: &'static str,
    failures: &'a [String],
}

/// Exit status for a library error: bad input is a configuration error,
/// everything else a numerical failure.
fn exit_code(e: &subdiff::Error) -> u8 {
    match e {
        subdiff::Error::Parameter { .. } | subdiff::Error::Domain(_) | subdiff::Error::Io(_) => EXIT_CONFIG,
        _ => EXIT_NUMERICAL,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Some(path) = cli.config.as_deref() else {
        eprintln!("config error: --config <path> is required");
        return ExitCode::from(EXIT_CONFIG);
    };
    let mut cfg = match RunConfig::load(path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Some(seed) = cli.seed {
        cfg.monte_carlo.seed = seed;
    }
    if let Some(t) = cli.threads {
        cfg.threads = Some(t);
    }
    if let Some(out) = cli.out {
        cfg.output = Some(out);
    }
    if let Err(e) = cfg.validate() {
        eprintln!("{e}");
        return ExitCode::from(EXIT_CONFIG);
    }
    if cli.command == Command::Validate {
        println!(
            "{}",
            serde_json::to_string_pretty(&cfg).expect("configuration serializes")
        );
        return ExitCode::SUCCESS;
    }
    if let Some(n) = cfg.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(EXIT_NUMERICAL);
        }
    }
    let dir = cfg.output.clone().unwrap_or_else(|| PathBuf::from("subdiff-out"));
    let mut out = match Artifacts::create(&dir, cfg.fingerprint()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("config error: output directory {} is not writable: {e}", dir.display());
            return ExitCode::from(EXIT_CONFIG);
        }
    };

    let start = Instant::now();
    let result = commands::run(cli.command, &cfg, &mut out);
    let (code, status, failures) = match result {
        Ok(f) if f.is_empty() => (0, "ok", f),
        Ok(f) => (EXIT_PROPERTY, "property-check-failed", f),
        Err(e) => (exit_code(&e), "error", vec![e.to_string()]),
    };
    let hash = out.hash().to_string();
    let written = out.written().to_vec();
    let manifest = Manifest {
        subcommand: cli.command.name(),
        config_sha256: &hash,
        seed: cfg.seed(),
        version: env!("CARGO_PKG_VERSION"),
        threads: rayon::current_num_threads(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        artifacts: &written,
        status,
        failures: &failures,
    };
    if let Err(e) = out.manifest(&manifest) {
        eprintln!("error: cannot write the manifest: {e}");
        return ExitCode::from(EXIT_CONFIG);
    }
    for f in &failures {
        eprintln!("{}: {f}", if code == EXIT_PROPERTY { "check failed" } else { "error" });
    }
    if code == 0 {
        println!(
            "{}: {} artifacts in {}",
            cli.command.name(),
            written.len(),
            dir.display()
        );
    }
    ExitCode::from(code)
}
