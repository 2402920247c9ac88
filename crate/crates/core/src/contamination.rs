//! Adversarial rewriting of up to `⌊εN⌋` preference tuples.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{trajectory_feature, FeatureMap, Trajectory};
use crate::preference::PreferenceDataset;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackStrategy {
    /// Flip the labels of the most informative pairs under the true reward.
    FlipMargin,
    /// Swap the preferred trajectory for the worst one seen in the dataset.
    Replace,
    /// Flip uniformly chosen labels.
    FlipRandom,
}

impl AttackStrategy {
    pub fn name(self) -> &'static str {
        match self {
            AttackStrategy::FlipMargin => "flip-margin",
            AttackStrategy::Replace => "replace",
            AttackStrategy::FlipRandom => "flip-random",
        }
    }
}

impl std::str::FromStr for AttackStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flip-margin" => Ok(AttackStrategy::FlipMargin),
            "replace" => Ok(AttackStrategy::Replace),
            "flip-random" => Ok(AttackStrategy::FlipRandom),
            other => Err(Error::InvalidArgument(format!(
                "unknown attack '{other}' (expected flip-margin, replace or flip-random)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub epsilon: f64,
    pub strategy: AttackStrategy,
    pub seed: u64,
    /// With `Replace`, also force the label to prefer the swapped-in trajectory.
    #[serde(default)]
    pub combined: bool,
}

impl AttackSpec {
    pub fn new(epsilon: f64, strategy: AttackStrategy, seed: u64) -> Self {
        Self { epsilon, strategy, seed, combined: false }
    }

    /// `⌊εN⌋`, with a small guard so that e.g. `0.1 · 50` counts as 5.
    pub fn budget(&self, n: usize) -> usize {
        ((self.epsilon * n as f64 + 1e-9).floor() as usize).min(n)
    }
}

/// Returns a corrupted copy; modified tuples carry `corrupted = true`.
///
/// `theta_star` (flat, length `H·d`) is required by the margin and replace
/// strategies.
pub fn corrupt(
    dataset: &PreferenceDataset,
    features: &FeatureMap,
    spec: &AttackSpec,
    theta_star: Option<&DVector<f64>>,
) -> Result<PreferenceDataset> {
    if spec.epsilon.is_nan() || spec.epsilon < 0.0 {
        return Err(Error::InvalidArgument(format!("epsilon must be non-negative, got {}", spec.epsilon)));
    }
    if spec.epsilon >= 0.5 {
        return Err(Error::CorruptionTooLarge { epsilon: spec.epsilon });
    }
    let mut out = dataset.clone();
    let budget = spec.budget(dataset.len());
    if budget == 0 {
        return Ok(out);
    }
    match spec.strategy {
        AttackStrategy::FlipRandom => {
            let mut rng = seed::derived_rng(spec.seed, &[seed::phase::ATTACK]);
            for i in rand::seq::index::sample(&mut rng, dataset.len(), budget) {
                flip(&mut out, i);
            }
        }
        AttackStrategy::FlipMargin => {
            let theta = theta_star.ok_or(Error::MissingSideInfo("flip-margin attack needs the true reward"))?;
            for i in top_margins(dataset, features, theta, budget) {
                flip(&mut out, i);
            }
        }
        AttackStrategy::Replace => {
            let theta = theta_star.ok_or(Error::MissingSideInfo("replace attack needs the true reward"))?;
            replace(&mut out, features, theta, budget, spec.combined);
        }
    }
    Ok(out)
}

fn flip(ds: &mut PreferenceDataset, i: usize) {
    let p = &mut ds.pairs[i];
    p.label = -p.label;
    p.corrupted = true;
}

/// Indices of the `k` largest `|θᵀ(φ(τ¹) − φ(τ⁰))|`, ties by lower index.
pub fn top_margins(ds: &PreferenceDataset, features: &FeatureMap, theta: &DVector<f64>, k: usize) -> Vec<usize> {
    let margins: Vec<f64> = ds
        .pairs
        .iter()
        .map(|p| (trajectory_feature(features, &p.tau1) - trajectory_feature(features, &p.tau0)).dot(theta).abs())
        .collect();
    let mut idx: Vec<usize> = (0..margins.len()).collect();
    idx.sort_by(|&a, &b| margins[b].total_cmp(&margins[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

fn replace(ds: &mut PreferenceDataset, features: &FeatureMap, theta: &DVector<f64>, budget: usize, combined: bool) {
    let reward = |t: &Trajectory| trajectory_feature(features, t).dot(theta);
    // Distinct trajectories in the dataset, cheapest first.
    let mut pool: Vec<(f64, Trajectory)> = Vec::new();
    for p in &ds.pairs {
        for t in [&p.tau0, &p.tau1] {
            if !pool.iter().any(|(_, u)| u == t) {
                pool.push((reward(t), t.clone()));
            }
        }
    }
    pool.sort_by(|a, b| a.0.total_cmp(&b.0));

    if pool.len() < 2 {
        // Nothing to swap in: fall back to label flips on the first pairs.
        for i in 0..budget {
            flip(ds, i);
        }
        return;
    }

    let replacement = |t: &Trajectory| if *t == pool[0].1 { &pool[1] } else { &pool[0] };
    // Pairs labelled +1 are hit first (their preferred side becomes the worst
    // trajectory), each group ordered by the largest drop in reward.
    let mut order: Vec<(bool, f64, usize)> = ds
        .pairs
        .iter()
        .enumerate()
        .map(|(i, p)| (p.label != 1, -(reward(&p.tau1) - replacement(&p.tau1).0), i))
        .collect();
    order.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
    for &(_, _, i) in order.iter().take(budget) {
        let new_tau = replacement(&ds.pairs[i].tau1).1.clone();
        let p = &mut ds.pairs[i];
        p.tau1 = new_tau;
        if combined {
            p.label = 1;
        }
        p.corrupted = true;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{MdpGenerator, Policy};
    use crate::preference::sample_dataset;

    fn setup(n: usize) -> (crate::mdp::LinearMdp, PreferenceDataset) {
        let mdp = MdpGenerator::new(4, 3, 3, 2).generate(11).unwrap();
        let pi = Policy::uniform(2, 4, 3);
        let ds = sample_dataset(&mdp, &pi, &pi, n, 3).unwrap();
        (mdp, ds)
    }

    fn hamming(a: &PreferenceDataset, b: &PreferenceDataset) -> usize {
        a.pairs.iter().zip(&b.pairs).filter(|(x, y)| x.tau0 != y.tau0 || x.tau1 != y.tau1 || x.label != y.label).count()
    }

    #[test]
    fn zero_epsilon_is_identity() {
        let (mdp, ds) = setup(40);
        for s in [AttackStrategy::FlipMargin, AttackStrategy::Replace, AttackStrategy::FlipRandom] {
            let out = corrupt(&ds, mdp.features(), &AttackSpec::new(0.0, s, 1), Some(&mdp.theta_star_flat())).unwrap();
            assert_eq!(out, ds);
        }
    }

    #[test]
    fn single_random_flip() {
        let (mdp, ds) = setup(40);
        let out = corrupt(&ds, mdp.features(), &AttackSpec::new(1.0 / 40.0, AttackStrategy::FlipRandom, 9), None).unwrap();
        assert_eq!(hamming(&ds, &out), 1);
        assert_eq!(out.corrupted_count(), 1);
    }

    #[test]
    fn margin_flip_matches_sorted_margins() {
        let (mdp, ds) = setup(60);
        let theta = mdp.theta_star_flat();
        let out = corrupt(&ds, mdp.features(), &AttackSpec::new(0.2, AttackStrategy::FlipMargin, 0), Some(&theta)).unwrap();
        let mut margins: Vec<(f64, usize)> = ds
            .pairs
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let x = trajectory_feature(mdp.features(), &p.tau1) - trajectory_feature(mdp.features(), &p.tau0);
                (x.dot(&theta).abs(), i)
            })
            .collect();
        margins.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let mut expect: Vec<usize> = margins[..12].iter().map(|m| m.1).collect();
        expect.sort();
        let flipped: Vec<usize> = (0..60).filter(|&i| out.pairs[i].label != ds.pairs[i].label).collect();
        assert_eq!(flipped, expect);
    }

    #[test]
    fn replace_respects_budget_and_lowers_reward() {
        let (mdp, ds) = setup(50);
        let theta = mdp.theta_star_flat();
        let spec = AttackSpec::new(0.1, AttackStrategy::Replace, 0);
        let out = corrupt(&ds, mdp.features(), &spec, Some(&theta)).unwrap();
        assert_eq!(hamming(&ds, &out), 5);
        assert_eq!(out.len(), ds.len());
        let r = |t: &Trajectory| trajectory_feature(mdp.features(), t).dot(&theta);
        for (a, b) in ds.pairs.iter().zip(&out.pairs) {
            if b.corrupted {
                assert!(r(&b.tau1) <= r(&a.tau1) + 1e-12 || a.tau1 == b.tau1);
            }
        }
    }

    #[test]
    fn rejects_large_epsilon_and_missing_theta() {
        let (mdp, ds) = setup(10);
        let e = corrupt(&ds, mdp.features(), &AttackSpec::new(0.5, AttackStrategy::FlipRandom, 0), None);
        assert!(matches!(e, Err(Error::CorruptionTooLarge { .. })));
        let e = corrupt(&ds, mdp.features(), &AttackSpec::new(0.2, AttackStrategy::FlipMargin, 0), None);
        assert!(matches!(e, Err(Error::MissingSideInfo(_))));
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in [AttackStrategy::FlipMargin, AttackStrategy::Replace, AttackStrategy::FlipRandom] {
            assert_eq!(s.name().parse::<AttackStrategy>().unwrap(), s);
        }
        assert!("bogus".parse::<AttackStrategy>().is_err());
    }
}
