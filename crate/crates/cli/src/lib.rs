//! Declarative experiment runner: a TOML file describes an instance, a data
//! model and a sweep over corruption levels and seeds; results land in a CSV
//! with a JSON sidecar.

pub mod config;
pub mod diagnose;
pub mod error;
pub mod run;

use std::io::Write;

use robust_rlhf::contamination::AttackStrategy;
use robust_rlhf::mdp::MdpDocument;
use robust_rlhf::oracle::{OracleKind, PrimalDualConfig, RobustLsviConfig};

pub use config::ExperimentConfig;
pub use error::{CliError, Result};

/// Swaps in the default settings of `name` unless the config already uses it.
pub fn override_oracle(cfg: &mut ExperimentConfig, name: &str) -> Result<()> {
    if cfg.oracle.name() == name {
        return Ok(());
    }
    cfg.oracle = match name {
        "exact" => OracleKind::Exact,
        "rlsvi" => OracleKind::Rlsvi(RobustLsviConfig::default()),
        "primal-dual" => OracleKind::PrimalDual(PrimalDualConfig::default()),
        other => return Err(CliError::field("oracle", format!("unknown oracle '{other}' (expected exact, rlsvi or primal-dual)"))),
    };
    Ok(())
}

pub fn override_attack(cfg: &mut ExperimentConfig, name: &str) -> Result<()> {
    cfg.attack = name.parse::<AttackStrategy>().map_err(|e| CliError::field("attack", e.to_string()))?;
    Ok(())
}

/// Writes the configured instance as an MDP document.
pub fn generate_mdp<W: Write>(cfg: &ExperimentConfig, out: W) -> Result<()> {
    let doc = MdpDocument::from(cfg.mdp.build()?);
    serde_json::to_writer_pretty(out, &doc)?;
    Ok(())
}

/// Writes the dataset one cell would see, as JSON lines.
pub fn sample_dataset<W: Write>(cfg: &ExperimentConfig, seed: u64, epsilon: f64, out: W) -> Result<()> {
    if !(0.0..0.5).contains(&epsilon) {
        return Err(CliError::field("epsilon", format!("must lie in [0, 0.5), got {epsilon}")));
    }
    let m = cfg.mdp.build()?;
    let mu0 = cfg.behavior.mu0.build(&m);
    let mu1 = cfg.behavior.mu1.build(&m);
    let clean = run::clean_dataset(cfg, &m, &mu0, &mu1, seed)?;
    let data = if epsilon > 0.0 { run::attacked_dataset(cfg, &m, &clean, epsilon, seed, 0)? } else { clean };
    data.write_jsonl(out)?;
    Ok(())
}
