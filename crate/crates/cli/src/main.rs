mod commands;
mod config;
mod manifest;

use std::process::ExitCode;

use aaut_core::error::Error as CoreError;
use anyhow::Result;
use clap::Parser;

use commands::Command;
use config::{CommonArgs, Config};
use manifest::{sha256_hex, Artifacts, RunManifest};

/// Experiments on almost-automorphism groups of quasi-regular trees and on self-similar groups.
#[derive(Parser, Debug)]
#[command(name = "aaut", version)]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

const SEED_DERIVATION: &str = "ChaCha8 seeded with the run seed; parallel samples use stream (n << 32) | sample index";

fn run(cli: &Cli) -> Result<String> {
    let cfg = Config::load(&cli.common)?;
    let mut out = Artifacts::new(cfg.out.clone())?;
    let summary = cli.command.run(&cfg, &mut out)?;
    let config = cfg.canonical();
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: cli.command.name().to_string(),
        arguments: serde_json::to_value(&cli.command)?,
        config_hash: sha256_hex(config.as_bytes()),
        config,
        seed: cfg.seed,
        seed_derivation: SEED_DERIVATION,
        outputs: Default::default(),
    };
    let manifest = out.finish(manifest)?;
    Ok(format!("{summary}\n{} artifacts in {}", manifest.outputs.len(), cfg.out.display()))
}

/// `budget`, `config` or `failure`, with the exit codes 3, 2 and 1.
fn classify(err: &anyhow::Error) -> (&'static str, u8) {
    match err.chain().find_map(|e| e.downcast_ref::<CoreError>()) {
        Some(CoreError::Budget(_)) => ("budget", 3),
        Some(
            CoreError::InvalidParams(_)
            | CoreError::InvalidPerm(_)
            | CoreError::Parse(_)
            | CoreError::UnknownGenerator(_)
            | CoreError::Unsupported(_),
        ) => ("config", 2),
        Some(_) => ("failure", 1),
        None if err.chain().any(|e| e.is::<std::io::Error>()) => ("io", 1),
        None => ("config", 2),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            let (kind, code) = classify(&err);
            let causes: Vec<String> = err.chain().map(|e| e.to_string()).collect();
            let report = serde_json::json!({
                "error": { "kind": kind, "command": cli.command.name(), "message": err.to_string(), "causes": causes }
            });
            eprintln!("{report}");
            ExitCode::from(code)
        }
    }
}
