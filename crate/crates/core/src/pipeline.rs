//! End-to-end robust RLHF pipelines and the suboptimality evaluator.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{self, LinearMdp, Policy, Trajectory};
use crate::oracle::{CountingOracle, OracleKind, RobustOracle};
use crate::preference::PreferenceDataset;
use crate::reward::{self, AscentConfig, ConfidenceSet, RewardEstimate, TrimmedMleConfig};
use crate::robust_stats::{robust_mean, RobustMeanConfig};
use crate::seed;
use crate::zero_order::{self, RadiusRule, SmoothingConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineKind {
    /// Trimmed MLE followed by one oracle call.
    Uniform,
    /// Zero-order descent over the confidence set.
    ConditionNumber,
    /// Subgradient descent over the confidence set with a first-order oracle.
    FirstOrder,
    /// Plain MLE followed by one oracle call, no robustness anywhere.
    Baseline,
}

impl PipelineKind {
    pub fn name(self) -> &'static str {
        match self {
            PipelineKind::Uniform => "uniform",
            PipelineKind::ConditionNumber => "condition-number",
            PipelineKind::FirstOrder => "first-order",
            PipelineKind::Baseline => "baseline",
        }
    }
}

impl std::str::FromStr for PipelineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(PipelineKind::Uniform),
            "condition-number" => Ok(PipelineKind::ConditionNumber),
            "first-order" => Ok(PipelineKind::FirstOrder),
            "baseline" => Ok(PipelineKind::Baseline),
            other => Err(Error::InvalidArgument(format!(
                "unknown pipeline '{other}' (expected uniform, condition-number, first-order or baseline)"
            ))),
        }
    }
}

/// Zero-order descent settings; unset values follow the theoretical defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ZeroOrderSettings {
    pub iterations: Option<usize>,
    /// Cap applied to the default iteration count.
    pub max_iterations: usize,
    pub samples: usize,
    pub mu: Option<f64>,
    pub step: Option<f64>,
    /// Assumed bias of the value oracle; `None` means `max(ε, 0.01)`.
    pub oracle_bias: Option<f64>,
    pub radius_rule: RadiusRule,
}

impl Default for ZeroOrderSettings {
    fn default() -> Self {
        Self { iterations: None, max_iterations: 500, samples: 20, mu: None, step: None, oracle_bias: None, radius_rule: RadiusRule::Statement }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FirstOrderSettings {
    pub iterations: usize,
    /// `None` means `D / (G √T)` with `D = 2√(Hd)` and `G = 2√H`.
    pub step: Option<f64>,
}

impl Default for FirstOrderSettings {
    fn default() -> Self {
        Self { iterations: 200, step: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub kind: PipelineKind,
    /// Corruption level the estimators are tuned for.
    pub epsilon: f64,
    pub delta: f64,
    pub oracle: OracleKind,
    pub zero_order: ZeroOrderSettings,
    pub first_order: FirstOrderSettings,
    pub mle_outer_iters: usize,
    pub mle: AscentConfig,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn new(kind: PipelineKind, epsilon: f64, oracle: OracleKind, seed: u64) -> Self {
        Self {
            kind,
            epsilon,
            delta: 0.1,
            oracle,
            zero_order: ZeroOrderSettings::default(),
            first_order: FirstOrderSettings::default(),
            mle_outer_iters: 100,
            mle: AscentConfig::default(),
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.epsilon) {
            return Err(Error::CorruptionTooLarge { epsilon: self.epsilon });
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidArgument(format!("delta must lie in (0,1), got {}", self.delta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub policy: Policy,
    pub estimate: RewardEstimate,
    /// Parameter handed to the final oracle call.
    pub theta_final: DVector<f64>,
    pub reference_feature: Option<DVector<f64>>,
    pub oracle_calls: usize,
    /// Whether the true reward lies in the likelihood confidence set.
    pub contains_true: bool,
    /// Every descent iterate was a member of the confidence set.
    pub iterates_feasible: bool,
}

/// `V*(θ*) − V^π(θ*)`, exact.
pub fn suboptimality_gap(mdp: &LinearMdp, policy: &Policy) -> f64 {
    let theta = mdp.theta_star_flat();
    mdp::optimal_value(mdp, &theta).0 - mdp::policy_value(mdp, policy, &theta)
}

fn trajectories(ds: &PreferenceDataset) -> Vec<Trajectory> {
    ds.pairs.iter().flat_map(|p| [p.tau0.clone(), p.tau1.clone()]).collect()
}

/// Robust mean of `φ(τ⁰)` over the given pairs.
pub fn reference_feature(mdp: &LinearMdp, ds: &PreferenceDataset, epsilon: f64) -> Result<DVector<f64>> {
    let feats: Vec<_> = ds.pairs.iter().map(|p| mdp::trajectory_feature(mdp.features(), &p.tau0)).collect();
    robust_mean(&feats, &RobustMeanConfig::new(epsilon))
}

/// Runs one pipeline on a (possibly corrupted) dataset. `mdp` supplies the
/// known feature map and initial distribution; its transitions are used only
/// by the exact oracle and its reward only for the membership diagnostic.
pub fn run_pipeline(mdp: &LinearMdp, dataset: &PreferenceDataset, config: &PipelineConfig) -> Result<PipelineOutcome> {
    let oracle_eps = if config.kind == PipelineKind::Baseline { 0.0 } else { config.epsilon };
    run_pipeline_with(mdp, dataset, config, |d2| config.oracle.build(mdp, &trajectories(d2), oracle_eps))
}

/// Same as [`run_pipeline`] with the oracle built by `make_oracle` from the
/// second half of the split instead of from `config.oracle`.
pub fn run_pipeline_with<F>(
    mdp: &LinearMdp,
    dataset: &PreferenceDataset,
    config: &PipelineConfig,
    make_oracle: F,
) -> Result<PipelineOutcome>
where
    F: FnOnce(&PreferenceDataset) -> Result<Box<dyn RobustOracle>>,
{
    config.validate()?;
    if dataset.len() < 4 {
        return Err(Error::InsufficientSamples { needed: 4, got: dataset.len() });
    }
    let (d1, d2) = dataset.split_halves(config.seed);
    let comparisons = d1.comparisons(mdp.features());
    let param_dim = mdp.param_dim();
    let radius = (param_dim as f64).sqrt();

    let trim_eps = if config.kind == PipelineKind::Baseline { 0.0 } else { config.epsilon };
    let mut mle_cfg = TrimmedMleConfig::new(trim_eps);
    mle_cfg.max_outer_iters = config.mle_outer_iters;
    mle_cfg.inner = config.mle;
    let estimate = reward::trimmed_mle(&comparisons, &mle_cfg)?;

    let zeta = reward::confidence_zeta(config.epsilon, mdp.horizon(), mdp.dim(), dataset.len(), config.delta);
    let set = ConfidenceSet::new(estimate.theta_hat.clone(), zeta, radius, comparisons)?;
    let contains_true = set.contains(&mdp.theta_star_flat());

    let base = make_oracle(&d2)?;
    let oracle = CountingOracle::new(base.as_ref());
    let mut oracle_rng = seed::derived_rng(config.seed, &[seed::phase::ORACLE]);

    let (theta_final, reference, feasible) = match config.kind {
        PipelineKind::Uniform | PipelineKind::Baseline => (estimate.theta_hat.clone(), None, true),
        PipelineKind::ConditionNumber => {
            let reference = reference_feature(mdp, &d2, config.epsilon)?;
            let zo = &config.zero_order;
            let hf = mdp.horizon() as f64;
            let df = mdp.dim() as f64;
            let diameter = 2.0 * radius;
            let bound = 2.0 * hf * df.sqrt();
            let lipschitz = 2.0 * radius;
            let noise = zo.oracle_bias.unwrap_or(config.epsilon.max(0.01));
            let mut smoothing = SmoothingConfig::new(1.0, zo.samples);
            smoothing.mu = zo.mu.unwrap_or_else(|| {
                zero_order::default_radius(zo.radius_rule, noise, param_dim, lipschitz, smoothing.box_halfwidth)
            });
            let step = zo.step.unwrap_or_else(|| {
                zero_order::default_step(diameter, smoothing.mu, bound, smoothing.box_halfwidth, param_dim)
            });
            let iterations = zo
                .iterations
                .unwrap_or_else(|| zero_order::default_iterations(diameter, bound, noise).min(zo.max_iterations));
            let mut value = |theta: &DVector<f64>| oracle.solve(theta, &mut oracle_rng).map(|r| r.value_estimate);
            let mut project = |theta: &DVector<f64>| set.project(theta);
            let mut smoothing_rng = seed::derived_rng(config.seed, &[seed::phase::SMOOTHING]);
            let trace = zero_order::biased_pgd(
                &mut value,
                &mut project,
                &estimate.theta_hat,
                &reference,
                &smoothing,
                iterations,
                step,
                &mut smoothing_rng,
            )?;
            let feasible = trace.iterates.iter().all(|t| set.contains(t));
            (trace.average, Some(reference), feasible)
        }
        PipelineKind::FirstOrder => {
            if !oracle.is_first_order() {
                return Err(Error::NotFirstOrder(oracle.name()));
            }
            let reference = reference_feature(mdp, &d2, config.epsilon)?;
            let fo = &config.first_order;
            let hf = mdp.horizon() as f64;
            let iterations = fo.iterations;
            let step = fo
                .step
                .unwrap_or_else(|| (2.0 * radius) / (2.0 * hf.sqrt() * (iterations.max(1) as f64).sqrt()));
            let mut theta = estimate.theta_hat.clone();
            let mut sum = DVector::zeros(param_dim);
            let mut feasible = true;
            for _ in 0..iterations {
                let res = oracle.solve(&theta, &mut oracle_rng)?;
                let g = res.subgradient.ok_or(Error::NotFirstOrder(oracle.name()))?;
                sum += &theta;
                theta = set.project(&(&theta - (g - &reference) * step));
                feasible &= set.contains(&theta);
            }
            let avg = if iterations == 0 { estimate.theta_hat.clone() } else { sum / iterations as f64 };
            (avg, Some(reference), feasible)
        }
    };

    let final_result = oracle.solve(&theta_final, &mut oracle_rng)?;
    Ok(PipelineOutcome {
        policy: final_result.policy,
        estimate,
        theta_final,
        reference_feature: reference,
        oracle_calls: oracle.calls(),
        contains_true,
        iterates_feasible: feasible,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::MdpGenerator;
    use crate::preference::sample_dataset;

    #[test]
    fn bandit_gaps() {
        let m = LinearMdp::from_tables(vec![1.0], &[vec![vec![vec![1.0], vec![1.0]]]], &[vec![vec![0.0, 1.0]]]).unwrap();
        let (_, opt) = mdp::optimal_value(&m, &m.theta_star_flat());
        assert_eq!(suboptimality_gap(&m, &opt), 0.0);
        assert!((suboptimality_gap(&m, &Policy::uniform(1, 1, 2)) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn mixture_gap_is_average() {
        let m = MdpGenerator::new(4, 3, 3, 2).generate(0).unwrap();
        let a = mdp::policies::random_tabular(&m, 1);
        let b = mdp::policies::random_tabular(&m, 2);
        let mix = Policy::mixture(vec![a.clone(), b.clone()]);
        let avg = 0.5 * (suboptimality_gap(&m, &a) + suboptimality_gap(&m, &b));
        assert!((suboptimality_gap(&m, &mix) - avg).abs() < 1e-12);
    }

    #[test]
    fn call_counts() {
        let m = MdpGenerator::new(4, 2, 2, 2).generate(3).unwrap();
        let pi = Policy::uniform(2, 4, 2);
        let ds = sample_dataset(&m, &pi, &pi, 200, 1).unwrap();
        let mut cfg = PipelineConfig::new(PipelineKind::ConditionNumber, 0.05, OracleKind::Exact, 4);
        cfg.zero_order.iterations = Some(3);
        cfg.zero_order.samples = 4;
        let out = run_pipeline(&m, &ds, &cfg).unwrap();
        assert_eq!(out.oracle_calls, 3 * 5 + 1);
        assert!(out.iterates_feasible);

        cfg.kind = PipelineKind::FirstOrder;
        cfg.first_order.iterations = 7;
        assert_eq!(run_pipeline(&m, &ds, &cfg).unwrap().oracle_calls, 8);

        cfg.kind = PipelineKind::Uniform;
        assert_eq!(run_pipeline(&m, &ds, &cfg).unwrap().oracle_calls, 1);
    }

    #[test]
    fn zero_iterations_still_return_a_policy() {
        let m = MdpGenerator::new(4, 2, 2, 2).generate(3).unwrap();
        let pi = Policy::uniform(2, 4, 2);
        let ds = sample_dataset(&m, &pi, &pi, 100, 1).unwrap();
        let mut cfg = PipelineConfig::new(PipelineKind::ConditionNumber, 0.0, OracleKind::Exact, 4);
        cfg.zero_order.iterations = Some(0);
        let out = run_pipeline(&m, &ds, &cfg).unwrap();
        assert_eq!(out.theta_final, out.estimate.theta_hat);
        assert_eq!(out.oracle_calls, 1);
    }

    #[test]
    fn first_order_needs_subgradients() {
        let m = MdpGenerator::new(4, 2, 2, 2).generate(3).unwrap();
        let pi = Policy::uniform(2, 4, 2);
        let ds = sample_dataset(&m, &pi, &pi, 100, 1).unwrap();
        let cfg = PipelineConfig::new(PipelineKind::FirstOrder, 0.0, OracleKind::Rlsvi(Default::default()), 4);
        assert!(matches!(run_pipeline(&m, &ds, &cfg), Err(Error::NotFirstOrder(_))));
    }
}
