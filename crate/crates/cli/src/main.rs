use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use embedlab::config::{Experiment, ExperimentConfig};
use embedlab::experiments;

/// Experiments on Boltzmann sampling of chain-embedded Ising models.
#[derive(Parser, Debug)]
#[command(name = "embedlab", version)]
struct Cli {
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory receiving the CSV output.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Configuration file of `key value...` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Extra `key=value` overrides applied after the configuration file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Generate random grid instances and their embeddings.
    Gen,
    /// Annealed-approximation curves.
    Theory,
    /// Exact logical-subspace probability per instance.
    ExactPl,
    /// Exact broken-chain ratio profile.
    Ratio,
    /// Exact projected distributions (majority vote and restricted resampling).
    Project,
    /// Monte Carlo energy-level pipeline.
    Mc,
    /// Two-chain ring certificate.
    Counterexample,
}

impl Command {
    fn experiment(self) -> Experiment {
        match self {
            Command::Gen => Experiment::Gen,
            Command::Theory => Experiment::TheoryCurves,
            Command::ExactPl => Experiment::ExactPl,
            Command::Ratio => Experiment::RatioProfile,
            Command::Project => Experiment::ProjectionExact,
            Command::Mc => Experiment::McProjection,
            Command::Counterexample => Experiment::Counterexample,
        }
    }
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig> {
    let experiment = cli.command.experiment();
    let mut text = match &cli.config {
        Some(path) => fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
        None => String::new(),
    };
    text.push('\n');
    for o in &cli.overrides {
        let Some((k, v)) = o.split_once('=') else { bail!("override {o} is not KEY=VALUE") };
        if k.trim() == "experiment" {
            bail!("the experiment is chosen by the subcommand");
        }
        text.push_str(&format!("{} {}\n", k.trim(), v.trim()));
    }
    let mut cfg = ExperimentConfig::parse(&text, experiment).context("invalid configuration")?;
    if cfg.experiment != experiment {
        bail!("configuration names experiment {} but the subcommand runs {experiment}", cfg.experiment);
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.out_dir = dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> Result<bool> {
    if let Some(t) = cli.threads {
        if t == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    let cfg = build_config(cli)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let config_path = cfg.out_dir.join(format!("{}_config.txt", cfg.experiment));
    fs::write(&config_path, cfg.to_text())?;
    let outcome = experiments::run(&cfg).with_context(|| format!("experiment {}", cfg.experiment))?;
    for line in &outcome.report {
        println!("{line}");
    }
    println!("wrote {}", config_path.display());
    for f in &outcome.files {
        println!("wrote {}", f.display());
    }
    for a in &outcome.audits {
        let detail = if a.detail.is_empty() { String::new() } else { format!(" ({})", a.detail) };
        println!("audit {}: {}{detail}", if a.passed { "PASS" } else { "FAIL" }, a.name);
    }
    Ok(outcome.passed())
}
