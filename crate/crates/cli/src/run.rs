//! Sweep execution: one record per `(ε, seed)` cell.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use log::{info, warn};
use rayon::prelude::*;
use robust_rlhf::contamination::{corrupt, AttackSpec};
use robust_rlhf::mdp::{LinearMdp, Policy};
use robust_rlhf::pipeline::{run_pipeline, suboptimality_gap, PipelineConfig};
use robust_rlhf::preference::{sample_dataset, PreferenceDataset};
use robust_rlhf::seed::{derive_seed, phase};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::Result;

/// CSV columns, in this order.
pub const CSV_HEADER: [&str; 11] = [
    "epsilon",
    "attack",
    "pipeline",
    "oracle",
    "seed",
    "suboptimality_gap",
    "theta_l2_error",
    "confidence_set_contains_true",
    "oracle_calls",
    "wall_time_ms",
    "error",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub epsilon: f64,
    pub attack: String,
    pub pipeline: String,
    pub oracle: String,
    pub seed: u64,
    pub suboptimality_gap: Option<f64>,
    pub theta_l2_error: Option<f64>,
    pub confidence_set_contains_true: Option<bool>,
    pub oracle_calls: Option<usize>,
    /// Kept out of the CSV so reruns are byte-identical; see the sidecar.
    pub wall_time_ms: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Serialize)]
struct Sidecar<'a> {
    library_version: &'static str,
    config: &'a ExperimentConfig,
    threads: usize,
    started_unix_ms: u128,
    finished_unix_ms: u128,
    /// Same order as the CSV rows.
    wall_time_ms: Vec<f64>,
}

#[derive(Debug)]
pub struct RunSummary {
    pub records: Vec<ExperimentRecord>,
    pub csv: PathBuf,
    pub sidecar: PathBuf,
}

/// `results.csv` gets `results.meta.json`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.json")
}

fn unix_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

/// Clean dataset for one seed; shared by every `ε` so cells are paired.
pub fn clean_dataset(cfg: &ExperimentConfig, mdp: &LinearMdp, mu0: &Policy, mu1: &Policy, seed: u64) -> Result<PreferenceDataset> {
    Ok(sample_dataset(mdp, mu0, mu1, cfg.n, derive_seed(seed, &[phase::DATASET]))?)
}

pub fn attacked_dataset(cfg: &ExperimentConfig, mdp: &LinearMdp, clean: &PreferenceDataset, epsilon: f64, seed: u64, cell: u64) -> Result<PreferenceDataset> {
    let spec = AttackSpec::new(epsilon, cfg.attack, derive_seed(seed, &[cell, phase::ATTACK]));
    Ok(corrupt(clean, mdp.features(), &spec, Some(&mdp.theta_star_flat()))?)
}

struct CellOutput {
    gap: f64,
    theta_error: f64,
    contains_true: bool,
    oracle_calls: usize,
}

fn run_cell(cfg: &ExperimentConfig, mdp: &LinearMdp, mu0: &Policy, mu1: &Policy, epsilon: f64, seed: u64, cell: u64) -> Result<CellOutput> {
    let clean = clean_dataset(cfg, mdp, mu0, mu1, seed)?;
    let data = attacked_dataset(cfg, mdp, &clean, epsilon, seed, cell)?;
    let mut pcfg = PipelineConfig::new(cfg.pipeline, epsilon, cfg.oracle.clone(), derive_seed(seed, &[cell]));
    pcfg.delta = cfg.delta;
    pcfg.zero_order = cfg.zero_order.clone();
    pcfg.first_order = cfg.first_order.clone();
    let out = run_pipeline(mdp, &data, &pcfg)?;
    Ok(CellOutput {
        gap: suboptimality_gap(mdp, &out.policy).max(0.0),
        theta_error: (&out.estimate.theta_hat - mdp.theta_star_flat()).norm(),
        contains_true: out.contains_true,
        oracle_calls: out.oracle_calls,
    })
}

/// Runs every cell on a pool of `threads` workers (`None`: one per core).
pub fn execute(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<Vec<ExperimentRecord>> {
    let mdp = cfg.mdp.build()?;
    let mu0 = cfg.behavior.mu0.build(&mdp);
    let mu1 = cfg.behavior.mu1.build(&mdp);
    let cells: Vec<(u64, f64, u64)> = cfg
        .epsilon_grid
        .iter()
        .flat_map(|&e| cfg.seeds.iter().map(move |&s| (e, s)))
        .enumerate()
        .map(|(i, (e, s))| (i as u64, e, s))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads.unwrap_or(0)).build()?;
    info!("running {} cells on {} threads", cells.len(), pool.current_num_threads());
    let records = pool.install(|| {
        cells
            .par_iter()
            .map(|&(cell, epsilon, seed)| {
                let start = Instant::now();
                let res = run_cell(cfg, &mdp, &mu0, &mu1, epsilon, seed, cell);
                let mut rec = ExperimentRecord {
                    epsilon,
                    attack: cfg.attack.name().to_owned(),
                    pipeline: cfg.pipeline.name().to_owned(),
                    oracle: cfg.oracle.name().to_owned(),
                    seed,
                    suboptimality_gap: None,
                    theta_l2_error: None,
                    confidence_set_contains_true: None,
                    oracle_calls: None,
                    wall_time_ms: None,
                    error: None,
                };
                match res {
                    Ok(o) => {
                        rec.suboptimality_gap = Some(o.gap);
                        rec.theta_l2_error = Some(o.theta_error);
                        rec.confidence_set_contains_true = Some(o.contains_true);
                        rec.oracle_calls = Some(o.oracle_calls);
                    }
                    Err(e) => {
                        warn!("cell eps={epsilon} seed={seed} failed: {e}");
                        rec.error = Some(e.to_string());
                    }
                }
                rec.wall_time_ms = Some(start.elapsed().as_secs_f64() * 1e3);
                rec
            })
            .collect()
    });
    Ok(records)
}

pub fn write_csv(path: &Path, records: &[ExperimentRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.serialize(ExperimentRecord { wall_time_ms: None, ..r.clone() })?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<RunSummary> {
    let started = unix_ms();
    let records = execute(cfg, threads)?;
    let finished = unix_ms();
    if let Some(dir) = cfg.output.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_csv(&cfg.output, &records)?;
    let sidecar = sidecar_path(&cfg.output);
    let meta = Sidecar {
        library_version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        threads: threads.unwrap_or_else(rayon::current_num_threads),
        started_unix_ms: started,
        finished_unix_ms: finished,
        wall_time_ms: records.iter().map(|r| r.wall_time_ms.unwrap_or(0.0)).collect(),
    };
    std::fs::write(&sidecar, serde_json::to_string_pretty(&meta)?)?;
    Ok(RunSummary { records, csv: cfg.output.clone(), sidecar })
}
