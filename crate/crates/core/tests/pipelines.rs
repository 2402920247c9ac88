use proptest::prelude::*;
use robust_rlhf::contamination::{corrupt, AttackSpec, AttackStrategy};
use robust_rlhf::mdp::{self, LinearMdp, MdpDocument, MdpGenerator, Policy};
use robust_rlhf::oracle::{OracleKind, PrimalDualConfig, RobustLsviConfig};
use robust_rlhf::pipeline::{run_pipeline, suboptimality_gap, PipelineConfig, PipelineKind};
use robust_rlhf::preference::{sample_dataset, PreferenceDataset};

fn instance() -> (LinearMdp, PreferenceDataset) {
    let m = MdpGenerator::new(4, 2, 3, 2).generate(0).unwrap();
    let mu0 = Policy::uniform(2, 4, 2);
    let mu1 = mdp::policies::random_tabular(&m, 1);
    let ds = sample_dataset(&m, &mu0, &mu1, 600, 9).unwrap();
    (m, ds)
}

fn quick(kind: PipelineKind, oracle: OracleKind) -> PipelineConfig {
    let mut cfg = PipelineConfig::new(kind, 0.1, oracle, 4);
    cfg.zero_order.iterations = Some(5);
    cfg.zero_order.samples = 4;
    cfg.first_order.iterations = 20;
    cfg
}

#[test]
fn every_compatible_pipeline_and_oracle_runs() {
    let (m, ds) = instance();
    let bad = corrupt(&ds, m.features(), &AttackSpec::new(0.1, AttackStrategy::FlipMargin, 2), Some(&m.theta_star_flat())).unwrap();
    let pd = OracleKind::PrimalDual(PrimalDualConfig { iterations: Some(50), batch: Some(8), ..Default::default() });
    let rl = OracleKind::Rlsvi(RobustLsviConfig::default());
    let combos = [
        (PipelineKind::Uniform, OracleKind::Exact),
        (PipelineKind::Uniform, rl.clone()),
        (PipelineKind::Baseline, rl.clone()),
        (PipelineKind::ConditionNumber, OracleKind::Exact),
        (PipelineKind::ConditionNumber, rl),
        (PipelineKind::FirstOrder, OracleKind::Exact),
        (PipelineKind::FirstOrder, pd),
    ];
    for (kind, oracle) in combos {
        let name = format!("{} / {}", kind.name(), oracle.name());
        let out = run_pipeline(&m, &bad, &quick(kind, oracle)).unwrap_or_else(|e| panic!("{name}: {e}"));
        let gap = suboptimality_gap(&m, &out.policy);
        assert!(gap >= -1e-12, "{name}: negative gap {gap}");
        assert!(out.iterates_feasible, "{name}: left the confidence set");
    }
}

#[test]
fn zero_order_oracle_is_refused_by_first_order_pipeline() {
    let (m, ds) = instance();
    let err = run_pipeline(&m, &ds, &quick(PipelineKind::FirstOrder, OracleKind::Rlsvi(RobustLsviConfig::default())));
    assert!(matches!(err, Err(robust_rlhf::Error::NotFirstOrder("rlsvi"))));
}

#[test]
fn pipelines_are_deterministic_in_the_seed() {
    let (m, ds) = instance();
    let cfg = quick(PipelineKind::ConditionNumber, OracleKind::Exact);
    let a = run_pipeline(&m, &ds, &cfg).unwrap();
    let b = run_pipeline(&m, &ds, &cfg).unwrap();
    assert_eq!(a.theta_final, b.theta_final);
    assert_eq!(a.oracle_calls, b.oracle_calls);
}

#[test]
fn dataset_survives_json_lines() {
    let (m, ds) = instance();
    let mut buf = Vec::new();
    ds.write_jsonl(&mut buf).unwrap();
    let back = PreferenceDataset::read_jsonl(&buf[..], m.horizon(), m.dim()).unwrap();
    assert_eq!(back.pairs, ds.pairs);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mdp_document_round_trip(seed in 0u64..500, s in 2usize..6, a in 2usize..4, h in 1usize..4) {
        let d = 2 + (seed as usize) % (s * a - 1);
        let m = MdpGenerator::new(s, a, d, h).generate(seed).unwrap();
        let text = serde_json::to_string(&MdpDocument::from(m.clone())).unwrap();
        let back = LinearMdp::try_from(serde_json::from_str::<MdpDocument>(&text).unwrap()).unwrap();
        prop_assert_eq!(back.theta_star_flat(), m.theta_star_flat());
        for step in 0..h {
            for st in 0..s {
                for ac in 0..a {
                    prop_assert_eq!(back.transition_row(step, st, ac), m.transition_row(step, st, ac));
                }
            }
        }
    }

    #[test]
    fn corruption_budget_respected(seed in 0u64..200, eps in 0.0f64..0.45) {
        let (m, ds) = instance();
        for strategy in [AttackStrategy::FlipMargin, AttackStrategy::Replace, AttackStrategy::FlipRandom] {
            let bad = corrupt(&ds, m.features(), &AttackSpec::new(eps, strategy, seed), Some(&m.theta_star_flat())).unwrap();
            prop_assert!(bad.corrupted_count() <= (eps * ds.len() as f64).floor() as usize);
            prop_assert_eq!(bad.len(), ds.len());
        }
    }
}
