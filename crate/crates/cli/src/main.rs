use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use robust_rlhf_cli::{diagnose, override_attack, override_oracle, run, ExperimentConfig, Result};

#[derive(Debug, Parser)]
#[command(name = "robust-rlhf", version, about = "Corruption-robust offline RLHF experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Oracle override: exact, rlsvi or primal-dual.
    #[arg(long, global = true)]
    oracle: Option<String>,

    /// Attack override: flip-margin, replace or flip-random.
    #[arg(long, global = true)]
    attack: Option<String>,

    /// Output path; replaces the configured one for `run`, stdout otherwise.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads; defaults to one per core.
    #[arg(long, global = true, env = "RRLHF_THREADS")]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every (epsilon, seed) cell and write the CSV and sidecar.
    Run { config: PathBuf },
    /// Print coverage constants and the implied bounds as JSON.
    Diagnose { config: PathBuf },
    /// Write the configured instance as an MDP document.
    GenerateMdp { config: PathBuf },
    /// Write one cell's (possibly corrupted) dataset as JSON lines.
    SampleDataset {
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
    },
}

fn load(cli: &Cli, path: &Path) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(o) = &cli.oracle {
        override_oracle(&mut cfg, o)?;
    }
    if let Some(a) = &cli.attack {
        override_attack(&mut cfg, a)?;
    }
    Ok(cfg)
}

fn sink(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run { config } => {
            let mut cfg = load(cli, config)?;
            if let Some(out) = &cli.out {
                cfg.output = out.clone();
            }
            let summary = run::run(&cfg, cli.threads)?;
            let failed = summary.records.iter().filter(|r| r.error.is_some()).count();
            eprintln!("{} rows ({failed} failed) -> {}", summary.records.len(), summary.csv.display());
        }
        Command::Diagnose { config } => {
            let report = diagnose::diagnose(&load(cli, config)?)?;
            let mut w = sink(&cli.out)?;
            serde_json::to_writer_pretty(&mut w, &report)?;
            writeln!(w)?;
        }
        Command::GenerateMdp { config } => {
            let mut w = sink(&cli.out)?;
            robust_rlhf_cli::generate_mdp(&load(cli, config)?, &mut w)?;
            writeln!(w)?;
        }
        Command::SampleDataset { config, seed, epsilon } => {
            robust_rlhf_cli::sample_dataset(&load(cli, config)?, *seed, *epsilon, sink(&cli.out)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
