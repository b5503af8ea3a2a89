use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};
use rainfield_cli::commands::{self, RunOptions};
use rainfield_cli::config::{ExperimentConfig, Scenario, OUTPUT_ROOT_ENV};
use rainfield_cli::RunManifest;

#[derive(Parser)]
#[command(name = "rainfield", version, about = "Rainfall field reconstruction from microwave link attenuation")]
struct Cli {
    /// JSON experiment config; scenario defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_scenario)]
    scenario: Option<Scenario>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config and RAINFIELD_OUT).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    runtime_cap: Option<f64>,
    /// Run methods concurrently on separate threads.
    #[arg(long, global = true)]
    parallel_methods: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the scenario and write references and observations.
    Simulate,
    /// Run the configured samplers and baselines.
    Reconstruct,
    /// Score reconstructions against the references.
    Evaluate,
    /// Write the exact posterior of the 1-D benchmark.
    Oracle,
    /// Fit censored-GP hyperparameters on windows of the reference fields.
    EmFit,
    /// simulate, reconstruct and evaluate in sequence (oracle too for gp1d).
    Run,
    /// Print the effective config as JSON.
    InitConfig,
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown scenario {s:?}"))
}

fn report(m: &RunManifest) {
    eprintln!("{}: wrote {} files", m.command, m.files.len());
    for f in &m.failures {
        eprintln!("  failed {}: {}", f.method, f.error);
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut cfg = match (&cli.config, cli.scenario) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(s)) => ExperimentConfig::for_scenario(s),
        (None, None) => ExperimentConfig::default(),
    };
    if let Some(s) = cli.scenario {
        cfg.scenario = s;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(cap) = cli.runtime_cap {
        cfg.runtime_cap_seconds = cap;
    }
    cfg.validate()?;
    if matches!(cli.command, Command::InitConfig) {
        println!("{}", serde_json::to_string_pretty(&cfg)?);
        return Ok(());
    }
    let opts = RunOptions {
        out: cfg.resolve_output(cli.out.as_deref()),
        parallel_methods: cli.parallel_methods,
    };
    eprintln!("output: {} (override with --out or {OUTPUT_ROOT_ENV})", opts.out.display());
    let manifests = match cli.command {
        Command::Simulate => vec![commands::simulate(&cfg, &opts)?],
        Command::Reconstruct => vec![commands::reconstruct(&cfg, &opts)?],
        Command::Evaluate => vec![commands::evaluate(&cfg, &opts)?],
        Command::Oracle => vec![commands::oracle(&cfg, &opts)?],
        Command::EmFit => vec![commands::em_fit(&cfg, &opts)?],
        Command::Run => {
            let mut v = vec![commands::simulate(&cfg, &opts)?];
            if cfg.scenario == Scenario::Gp1d {
                v.push(commands::oracle(&cfg, &opts)?);
            }
            v.push(commands::reconstruct(&cfg, &opts)?);
            v.push(commands::evaluate(&cfg, &opts)?);
            v
        }
        Command::InitConfig => unreachable!(),
    };
    manifests.iter().for_each(report);
    Ok(())
}
