use std::path::Path;
use std::process::Command;

use robust_rlhf_cli::{diagnose, run, ExperimentConfig};

const BASE: &str = r#"
n = 2000
epsilon_grid = [0.0]
seeds = [0]
pipeline = "uniform"

[mdp]
states = 4
actions = 2
dim = 3
horizon = 2
seed = 0

[behavior]
mu1 = { kind = "random", seed = 1 }
"#;

fn config(text: &str, dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::parse(text, dir).unwrap();
    cfg.output = dir.join("results.csv");
    cfg
}

#[test]
fn clean_single_cell_is_near_optimal() {
    let dir = tempfile::tempdir().unwrap();
    let summary = run::run(&config(BASE, dir.path()), Some(2)).unwrap();
    assert_eq!(summary.records.len(), 1);
    let gap = summary.records[0].suboptimality_gap.unwrap();
    assert!(gap <= 0.05 * 2.0, "gap {gap}");
    assert!(summary.sidecar.exists());
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let text = BASE.replace("n = 2000", "n = 200").replace("[0.0]", "[0.0, 0.2]").replace("seeds = [0]", "seeds = [3, 4]");
    let mut cfg = config(&text, dir.path());
    run::run(&cfg, Some(1)).unwrap();
    let first = std::fs::read(&cfg.output).unwrap();
    cfg.output = dir.path().join("again.csv");
    run::run(&cfg, Some(4)).unwrap();
    assert_eq!(first, std::fs::read(&cfg.output).unwrap());
}

#[test]
fn one_row_per_cell_in_grid_order() {
    let dir = tempfile::tempdir().unwrap();
    let text = BASE.replace("n = 2000", "n = 100").replace("[0.0]", "[0.0, 0.1, 0.2]").replace("seeds = [0]", "seeds = [0, 1, 2, 3, 4]");
    let cfg = config(&text, dir.path());
    run::run(&cfg, None).unwrap();
    let mut reader = csv::Reader::from_path(&cfg.output).unwrap();
    assert_eq!(reader.headers().unwrap().iter().collect::<Vec<_>>(), run::CSV_HEADER);
    let rows: Vec<run::ExperimentRecord> = reader.deserialize().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 15);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.epsilon, [0.0, 0.1, 0.2][i / 5]);
        assert_eq!(r.seed, (i % 5) as u64);
        assert!(r.suboptimality_gap.unwrap() >= 0.0);
        assert!(r.wall_time_ms.is_none());
    }
}

#[test]
fn failing_cells_become_rows() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{}\n[oracle]\nkind = \"rlsvi\"\n", BASE.replace("\"uniform\"", "\"first-order\"").replace("n = 2000", "n = 50"));
    let summary = run::run(&config(&text, dir.path()), None).unwrap();
    assert_eq!(summary.records.len(), 1);
    assert!(summary.records[0].error.as_deref().unwrap().contains("subgradients"));
}

#[test]
fn diagnostics_report_constants() {
    let dir = tempfile::tempdir().unwrap();
    let report = diagnose::diagnose(&config(&BASE.replace("[0.0]", "[0.0, 0.1]"), dir.path())).unwrap();
    assert!(report.xi_row_space > 0.0);
    assert!(report.xi.abs() < 1e-12);
    assert!(report.alpha.is_some());
    assert!(report.kappa >= 4.0);
    assert_eq!(report.bounds.len(), 2);
    assert!(report.bounds[1].uniform_row_space.unwrap() > 0.0);
}

#[test]
fn identical_behavior_pair_keeps_alpha_finite() {
    let dir = tempfile::tempdir().unwrap();
    let report = diagnose::diagnose(&config(&BASE.replace("mu1 = { kind = \"random\", seed = 1 }", ""), dir.path())).unwrap();
    assert_eq!(report.xi, 0.0);
    assert!(report.alpha.unwrap().is_finite());
}

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_robust-rlhf"))
}

#[test]
fn invalid_config_exits_nonzero_with_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, BASE.replace("[0.0]", "[0.7]")).unwrap();
    let out = binary().arg("run").arg(&path).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("epsilon_grid"));
}

#[test]
fn binary_run_honours_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.toml");
    std::fs::write(&path, BASE.replace("n = 2000", "n = 100").replace("[0.0]", "[0.1]")).unwrap();
    let csv_path = dir.path().join("sub/out.csv");
    let status = binary()
        .args(["run", path.to_str().unwrap(), "--attack", "flip-random", "--out", csv_path.to_str().unwrap()])
        .env("RRLHF_THREADS", "2")
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&csv_path).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("0.1,flip-random,uniform,exact,0,"));
    assert!(run::sidecar_path(&csv_path).exists());
}

#[test]
fn generated_mdp_round_trips_through_file_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("exp.toml");
    std::fs::write(&cfg_path, BASE).unwrap();
    let out = binary().args(["generate-mdp", cfg_path.to_str().unwrap()]).output().unwrap();
    assert!(out.status.success());
    std::fs::write(dir.path().join("mdp.json"), &out.stdout).unwrap();
    let file_cfg = BASE.replace("states = 4\nactions = 2\ndim = 3\nhorizon = 2\nseed = 0", "file = \"mdp.json\"");
    let a = config(BASE, dir.path()).mdp.build().unwrap();
    let b = config(&file_cfg, dir.path()).mdp.build().unwrap();
    assert_eq!(a.theta_star_flat(), b.theta_star_flat());
    assert_eq!(a.rho(), b.rho());
}
