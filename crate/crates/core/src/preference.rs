//! Bradley–Terry preference data and coverage diagnostics.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{self, FeatureMap, LinearMdp, Policy, Trajectory};
use crate::seed;

/// `σ(x) = 1 / (1 + e^{-x})`.
pub fn link_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x)` without overflow for large `|x|`.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// One comparison. `label` is `+1` when `tau1` is preferred.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub tau0: Trajectory,
    pub tau1: Trajectory,
    pub label: i8,
    /// Set by the attacker; estimators never read it.
    #[serde(default)]
    pub corrupted: bool,
}

impl PreferencePair {
    pub fn sign(&self) -> f64 {
        f64::from(self.label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceDataset {
    pub horizon: usize,
    pub dim: usize,
    pub pairs: Vec<PreferencePair>,
}

/// Dense view used by the estimators: `x_n = φ(τ¹) − φ(τ⁰)` as rows.
#[derive(Debug, Clone)]
pub struct ComparisonMatrix {
    pub diffs: DMatrix<f64>,
    pub labels: DVector<f64>,
}

impl ComparisonMatrix {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn param_dim(&self) -> usize {
        self.diffs.ncols()
    }

    /// Row subset in the given order.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self { diffs: self.diffs.select_rows(idx), labels: self.labels.select_rows(idx) }
    }
}

impl PreferenceDataset {
    pub fn new(horizon: usize, dim: usize, pairs: Vec<PreferencePair>) -> Result<Self> {
        if pairs.len() < 2 {
            return Err(Error::InsufficientSamples { needed: 2, got: pairs.len() });
        }
        for (i, p) in pairs.iter().enumerate() {
            if p.label != 1 && p.label != -1 {
                return Err(Error::InvalidArgument(format!("pair {i}: label must be +1 or -1")));
            }
            if p.tau0.horizon() != horizon || p.tau1.horizon() != horizon {
                return Err(Error::InvalidArgument(format!("pair {i}: trajectory length differs from H={horizon}")));
            }
        }
        Ok(Self { horizon, dim, pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn comparisons(&self, features: &FeatureMap) -> ComparisonMatrix {
        let n = self.pairs.len();
        let dd = self.horizon * self.dim;
        let mut diffs = DMatrix::zeros(n, dd);
        for (i, p) in self.pairs.iter().enumerate() {
            let x = mdp::trajectory_feature(features, &p.tau1) - mdp::trajectory_feature(features, &p.tau0);
            diffs.row_mut(i).copy_from(&x.transpose());
        }
        let labels = DVector::from_iterator(n, self.pairs.iter().map(|p| p.sign()));
        ComparisonMatrix { diffs, labels }
    }

    /// Seeded random split into two halves of sizes `⌈N/2⌉` and `⌊N/2⌋`.
    pub fn split_halves(&self, seed_value: u64) -> (Self, Self) {
        let mut idx: Vec<usize> = (0..self.pairs.len()).collect();
        idx.shuffle(&mut seed::derived_rng(seed_value, &[seed::phase::SPLIT]));
        let cut = self.pairs.len().div_ceil(2);
        let take = |ids: &[usize]| Self {
            horizon: self.horizon,
            dim: self.dim,
            pairs: ids.iter().map(|&i| self.pairs[i].clone()).collect(),
        };
        (take(&idx[..cut]), take(&idx[cut..]))
    }

    pub fn corrupted_count(&self) -> usize {
        self.pairs.iter().filter(|p| p.corrupted).count()
    }

    /// JSON lines, one pair per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for p in &self.pairs {
            serde_json::to_writer(&mut out, p)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R, horizon: usize, dim: usize) -> Result<Self> {
        let mut pairs = Vec::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            pairs.push(serde_json::from_str(&line)?);
        }
        Self::new(horizon, dim, pairs)
    }
}

/// Draws `n` i.i.d. comparisons `τ⁰ ~ μ₀`, `τ¹ ~ μ₁`, `o ~ BT(r*(τ¹) − r*(τ⁰))`.
///
/// Every pair uses its own stream derived from `(seed, index)`, so the
/// result does not depend on the thread count.
pub fn sample_dataset(mdp: &LinearMdp, mu0: &Policy, mu1: &Policy, n: usize, seed_value: u64) -> Result<PreferenceDataset> {
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let theta = mdp.theta_star_flat();
    let features = mdp.features();
    let pairs = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::derived_rng(seed_value, &[seed::phase::DATASET, i as u64]);
            let tau0 = mdp::sample_trajectory(mdp, mu0, &mut rng);
            let tau1 = mdp::sample_trajectory(mdp, mu1, &mut rng);
            let gap = (mdp::trajectory_feature(features, &tau1) - mdp::trajectory_feature(features, &tau0)).dot(&theta);
            let u: f64 = rand::Rng::random(&mut rng);
            let label = if u < link_sigmoid(gap) { 1 } else { -1 };
            PreferencePair { tau0, tau1, label, corrupted: false }
        })
        .collect();
    Ok(PreferenceDataset { horizon: mdp.horizon(), dim: mdp.dim(), pairs })
}

/// Settings for [`coverage_diagnostics`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnosticsConfig {
    /// Exact enumeration is used while `S^H · A^H` stays at or below this.
    pub enumeration_cap: f64,
    pub monte_carlo_samples: usize,
    pub seed: u64,
    /// Relative singular-value cutoff for pseudo-inverses.
    pub pinv_cutoff: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self { enumeration_cap: 1e6, monte_carlo_samples: 20_000, seed: 0, pinv_cutoff: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageDiagnostics {
    pub sigma_diff: DMatrix<f64>,
    pub sigma_avg: DMatrix<f64>,
    pub xi: f64,
    /// Same quantity restricted to the row space of `Σ^diff`. Every linear
    /// MDP has a direction `m` with `mᵀφ(s,a) = 1`, so `xi` itself is always
    /// zero; this is the informative variant.
    pub xi_row_space: f64,
    /// `f64::INFINITY` when the target pair leaves the behavior row space.
    pub alpha: f64,
    pub nu: f64,
    pub kappa: f64,
    /// `E_{target}[φ(τ)]`.
    pub target_feature: DVector<f64>,
    /// Largest per-entry standard error; zero on the exact path.
    pub standard_error: f64,
    pub exact: bool,
}

/// First and second moments of `φ(τ)` under a policy.
#[derive(Debug, Clone)]
pub struct FeatureMoments {
    pub mean: DVector<f64>,
    pub second: DMatrix<f64>,
}

/// Exact moments by enumerating every positive-probability trajectory.
pub fn exact_moments(mdp: &LinearMdp, policy: &Policy) -> FeatureMoments {
    let dd = mdp.param_dim();
    let comps = policy.components();
    let mut mean = DVector::zeros(dd);
    let mut second = DMatrix::zeros(dd, dd);
    for c in comps {
        let mut feat = DVector::zeros(dd);
        for s in 0..mdp.num_states() {
            let p = mdp.rho()[s];
            if p > 0.0 {
                enumerate(mdp, c, 0, s, p, &mut feat, &mut mean, &mut second);
            }
        }
    }
    let k = comps.len() as f64;
    FeatureMoments { mean: mean / k, second: second / k }
}

#[allow(clippy::too_many_arguments)]
fn enumerate(
    mdp: &LinearMdp,
    policy: &Policy,
    step: usize,
    state: usize,
    prob: f64,
    feat: &mut DVector<f64>,
    mean: &mut DVector<f64>,
    second: &mut DMatrix<f64>,
) {
    let d = mdp.dim();
    let mut probs = vec![0.0; mdp.num_actions()];
    policy.action_distribution(mdp.features(), step, state, &mut probs);
    for (a, &pa) in probs.iter().enumerate() {
        if pa <= 0.0 {
            continue;
        }
        let p = prob * pa;
        feat.rows_mut(step * d, d).copy_from(mdp.features().get(state, a));
        if step + 1 == mdp.horizon() {
            mean.axpy(p, feat, 1.0);
            second.ger(p, feat, feat, 1.0);
        } else {
            for (sp, &pt) in mdp.transition_row(step, state, a).iter().enumerate() {
                if pt > 0.0 {
                    enumerate(mdp, policy, step + 1, sp, p * pt, feat, mean, second);
                }
            }
        }
    }
}

/// `E[(φ(τ⁰) − φ(τ¹))(·)ᵀ]` for independent `τ⁰ ~ π₀`, `τ¹ ~ π₁`.
pub fn sigma_diff(m0: &FeatureMoments, m1: &FeatureMoments) -> DMatrix<f64> {
    let cross = &m0.mean * m1.mean.transpose();
    &m0.second + &m1.second - &cross - cross.transpose()
}

/// `E[(φ(τ⁰) + φ(τ¹))(·)ᵀ]` for independent `τ⁰ ~ π₀`, `τ¹ ~ π₁`.
pub fn sigma_avg(m0: &FeatureMoments, m1: &FeatureMoments) -> DMatrix<f64> {
    let cross = &m0.mean * m1.mean.transpose();
    &m0.second + &m1.second + &cross + cross.transpose()
}

/// Paired Monte-Carlo estimate of `E[z zᵀ]` with `z = φ(τ⁰) + sign·φ(τ¹)`,
/// returned with the largest per-entry standard error.
fn mc_pair_matrix(
    mdp: &LinearMdp,
    p0: &Policy,
    p1: &Policy,
    sign: f64,
    samples: usize,
    rng: &mut seed::StdRng,
) -> (DMatrix<f64>, f64) {
    let dd = mdp.param_dim();
    let mut sum = DMatrix::zeros(dd, dd);
    let mut sum_sq = DMatrix::zeros(dd, dd);
    for _ in 0..samples {
        let f0 = mdp::trajectory_feature(mdp.features(), &mdp::sample_trajectory(mdp, p0, rng));
        let f1 = mdp::trajectory_feature(mdp.features(), &mdp::sample_trajectory(mdp, p1, rng));
        let z = f0 + f1 * sign;
        let outer = &z * z.transpose();
        sum_sq += outer.component_mul(&outer);
        sum += outer;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean.component_mul(&mean)).map(|v| v.max(0.0));
    let se = var.iter().copied().fold(0.0, f64::max).sqrt() / (n - 1.0).max(1.0).sqrt();
    (mean, se)
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Largest `sup_v vᵀ A v / vᵀ B v` with `v` in the row space of `B`.
pub fn relative_condition_number(target: &DMatrix<f64>, behavior: &DMatrix<f64>, cutoff: f64) -> f64 {
    let scale = target.norm().max(behavior.norm());
    if scale == 0.0 {
        return 0.0;
    }
    let eig = SymmetricEigen::new(behavior.clone());
    let lmax = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..eig.eigenvalues.len()).filter(|&i| eig.eigenvalues[i] > cutoff * lmax.max(f64::MIN_POSITIVE)).collect();
    let basis = eig.eigenvectors.select_columns(&keep);
    let projector = &basis * basis.transpose();
    let outside = target - &projector * target;
    if outside.norm() > 1e-8 * scale {
        return f64::INFINITY;
    }
    if keep.is_empty() {
        return 0.0;
    }
    let inv_sqrt = DVector::from_iterator(keep.len(), keep.iter().map(|&i| 1.0 / eig.eigenvalues[i].sqrt()));
    let mut whitened = basis.transpose() * target * &basis;
    for i in 0..keep.len() {
        for j in 0..keep.len() {
            whitened[(i, j)] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    SymmetricEigen::new(symmetrize(whitened)).eigenvalues.iter().copied().fold(0.0, f64::max)
}

/// `mᵀ (A⁺)² m`, treating singular values below `cutoff · σ_max` as zero.
pub fn generalized_coverage(avg: &DMatrix<f64>, m: &DVector<f64>, cutoff: f64) -> f64 {
    let eig = SymmetricEigen::new(avg.clone());
    let lmax = eig.eigenvalues.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let mut total = 0.0;
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l.abs() > cutoff * lmax && l.abs() > 0.0 {
            let c = eig.eigenvectors.column(i).dot(m);
            total += c * c / (l * l);
        }
    }
    total
}

/// Range of `r*(τ)` over trajectories with positive probability under some policy.
pub fn reward_range(mdp: &LinearMdp) -> f64 {
    let theta = mdp.theta_star_flat();
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let mut hi = vec![0.0; ns];
    let mut lo = vec![0.0; ns];
    for h in (0..mdp.horizon()).rev() {
        let r = mdp.features().step_rewards(&theta, h);
        let mut nhi = vec![f64::NEG_INFINITY; ns];
        let mut nlo = vec![f64::INFINITY; ns];
        for s in 0..ns {
            for a in 0..na {
                let row = mdp.transition_row(h, s, a);
                let (mut best, mut worst) = (f64::NEG_INFINITY, f64::INFINITY);
                if h + 1 == mdp.horizon() {
                    best = 0.0;
                    worst = 0.0;
                } else {
                    for (sp, &p) in row.iter().enumerate() {
                        if p > 0.0 {
                            best = best.max(hi[sp]);
                            worst = worst.min(lo[sp]);
                        }
                    }
                }
                nhi[s] = f64::max(nhi[s], r[s * na + a] + best);
                nlo[s] = f64::min(nlo[s], r[s * na + a] + worst);
            }
        }
        hi = nhi;
        lo = nlo;
    }
    let support = (0..ns).filter(|&s| mdp.rho()[s] > 0.0);
    let max = support.clone().map(|s| hi[s]).fold(f64::NEG_INFINITY, f64::max);
    let min = support.map(|s| lo[s]).fold(f64::INFINITY, f64::min);
    max - min
}

/// `1 / (p(1 − p))` at `p = σ(−R)`, the steepest slope of `σ⁻¹` on the reachable range.
pub fn kappa(mdp: &LinearMdp) -> f64 {
    let p = link_sigmoid(-reward_range(mdp));
    1.0 / (p * (1.0 - p))
}

/// Coverage constants of the behavior pair `(μ₀, μ₁)` relative to a target policy.
///
/// The relative condition number compares the pair `(target, μ₁)` against
/// `(μ₀, μ₁)`.
pub fn coverage_diagnostics(
    mdp: &LinearMdp,
    mu0: &Policy,
    mu1: &Policy,
    target: &Policy,
    config: &DiagnosticsConfig,
) -> CoverageDiagnostics {
    let enumerable = (mdp.num_states() as f64).powi(mdp.horizon() as i32)
        * (mdp.num_actions() as f64).powi(mdp.horizon() as i32)
        <= config.enumeration_cap;
    let (sd, sa, target_diff, target_feature, se) = if enumerable {
        let m0 = exact_moments(mdp, mu0);
        let m1 = exact_moments(mdp, mu1);
        let mt = exact_moments(mdp, target);
        (sigma_diff(&m0, &m1), sigma_avg(&m0, &m1), sigma_diff(&mt, &m1), mt.mean, 0.0)
    } else {
        let mut rng = seed::derived_rng(config.seed, &[seed::phase::DIAGNOSTICS]);
        let n = config.monte_carlo_samples.max(2);
        let (sd, se1) = mc_pair_matrix(mdp, mu0, mu1, -1.0, n, &mut rng);
        let (sa, se2) = mc_pair_matrix(mdp, mu0, mu1, 1.0, n, &mut rng);
        let (td, se3) = mc_pair_matrix(mdp, target, mu1, -1.0, n, &mut rng);
        let mut tf = DVector::zeros(mdp.param_dim());
        for _ in 0..n {
            tf += mdp::trajectory_feature(mdp.features(), &mdp::sample_trajectory(mdp, target, &mut rng));
        }
        (sd, sa, td, tf / n as f64, se1.max(se2).max(se3))
    };
    let sd = symmetrize(sd);
    let sa = symmetrize(sa);
    let spectrum = SymmetricEigen::new(sd.clone()).eigenvalues;
    let lmin = spectrum.iter().copied().fold(f64::INFINITY, f64::min);
    let lmax = spectrum.iter().copied().fold(0.0, f64::max);
    let cutoff = config.pinv_cutoff.max(1e-9) * lmax;
    let lmin_row = spectrum.iter().copied().filter(|&l| l > cutoff).fold(f64::INFINITY, f64::min);
    let root_h = (mdp.horizon() as f64).sqrt();
    let xi = lmin.max(0.0) / root_h;
    let xi_row_space = if lmin_row.is_finite() { lmin_row / root_h } else { 0.0 };
    let alpha = relative_condition_number(&symmetrize(target_diff), &sd, config.pinv_cutoff.max(1e-9));
    let nu = generalized_coverage(&sa, &target_feature, config.pinv_cutoff);
    CoverageDiagnostics {
        sigma_diff: sd,
        sigma_avg: sa,
        xi,
        xi_row_space,
        alpha,
        nu,
        kappa: kappa(mdp),
        target_feature,
        standard_error: se,
        exact: enumerable,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::MdpGenerator;

    #[test]
    fn sigmoid_values() {
        assert_eq!(link_sigmoid(0.0), 0.5);
        for x in [-3.0, -0.2, 0.7, 12.0] {
            assert!((link_sigmoid(x) + link_sigmoid(-x) - 1.0).abs() < 1e-15);
            assert!((log_sigmoid(x) - link_sigmoid(x).ln()).abs() < 1e-12);
        }
        assert!((link_sigmoid(2.0) - 1.0 / (1.0 + (-2f64).exp())).abs() < 1e-15);
        assert!((link_sigmoid(2.0) - 0.880797).abs() < 1e-6);
        assert!(log_sigmoid(-800.0).is_finite());
    }

    #[test]
    fn identical_policies_give_balanced_labels() {
        let mdp = MdpGenerator::new(4, 2, 3, 2).generate(0).unwrap();
        let (_, pi) = mdp::optimal_value(&mdp, &mdp.theta_star_flat());
        // Deterministic policy but stochastic transitions: force identical
        // trajectories by checking the rate only over zero-gap pairs.
        let ds = sample_dataset(&mdp, &pi, &pi, 10_000, 1).unwrap();
        let same: Vec<_> = ds.pairs.iter().filter(|p| p.tau0 == p.tau1).collect();
        assert!(same.len() > 500);
        let rate = same.iter().filter(|p| p.label == 1).count() as f64 / same.len() as f64;
        let band = 3.0 * (0.25 / same.len() as f64).sqrt();
        assert!((rate - 0.5).abs() < band.max(0.02), "rate {rate}");
    }

    #[test]
    fn dataset_is_seed_deterministic() {
        let mdp = MdpGenerator::new(4, 2, 3, 2).generate(0).unwrap();
        let pi = Policy::uniform(2, 4, 2);
        let a = sample_dataset(&mdp, &pi, &pi, 50, 7).unwrap();
        let b = sample_dataset(&mdp, &pi, &pi, 50, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.corrupted_count(), 0);
        assert!(sample_dataset(&mdp, &pi, &pi, 1, 7).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let mdp = MdpGenerator::new(3, 2, 2, 2).generate(3).unwrap();
        let pi = Policy::uniform(2, 3, 2);
        let ds = sample_dataset(&mdp, &pi, &pi, 5, 1).unwrap();
        let mut buf = Vec::new();
        ds.write_jsonl(&mut buf).unwrap();
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 5);
        let back = PreferenceDataset::read_jsonl(&buf[..], 2, 2).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn split_is_disjoint_and_balanced() {
        let mdp = MdpGenerator::new(3, 2, 2, 2).generate(3).unwrap();
        let pi = Policy::uniform(2, 3, 2);
        let ds = sample_dataset(&mdp, &pi, &pi, 11, 1).unwrap();
        let (a, b) = ds.split_halves(4);
        assert_eq!((a.len(), b.len()), (6, 5));
        assert_eq!(ds.split_halves(4).0, a);
    }

    #[test]
    fn identical_pairs_have_unit_condition_number() {
        let mdp = MdpGenerator::new(3, 2, 3, 2).generate(1).unwrap();
        let pi = mdp::policies::random_tabular(&mdp, 5);
        let diag = coverage_diagnostics(&mdp, &pi, &pi, &pi, &DiagnosticsConfig::default());
        assert!((diag.alpha - 1.0).abs() < 1e-6, "alpha {}", diag.alpha);
        assert!(diag.kappa >= 4.0);
        assert!(diag.exact);
    }

    #[test]
    fn single_trajectory_has_zero_diff_covariance() {
        let p = vec![vec![vec![0.0, 1.0]], vec![vec![0.0, 1.0]]];
        let mdp = LinearMdp::from_tables(vec![1.0, 0.0], &[p.clone(), p], &[vec![vec![0.1], vec![0.2]], vec![vec![0.3], vec![0.4]]])
            .unwrap();
        let pi = Policy::uniform(2, 2, 1);
        let diag = coverage_diagnostics(&mdp, &pi, &pi, &pi, &DiagnosticsConfig::default());
        assert!(diag.sigma_diff.norm() < 1e-15);
        assert_eq!(diag.xi, 0.0);
        assert_eq!(diag.alpha, 0.0);
    }

    #[test]
    fn full_space_xi_vanishes_but_row_space_xi_does_not() {
        let mdp = MdpGenerator::new(4, 2, 3, 2).generate(0).unwrap();
        let mu0 = Policy::uniform(2, 4, 2);
        let mu1 = mdp::policies::random_tabular(&mdp, 1);
        let diag = coverage_diagnostics(&mdp, &mu0, &mu1, &mu0, &DiagnosticsConfig::default());
        assert!(diag.xi < 1e-12);
        assert!(diag.xi_row_space > 0.0);
    }

    #[test]
    fn target_outside_row_space_is_infinite() {
        let b = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0]));
        assert_eq!(relative_condition_number(&a, &b, 1e-9), f64::INFINITY);
        let a2 = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 0.0]));
        assert!((relative_condition_number(&a2, &b, 1e-9) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_agrees_with_enumeration() {
        let mdp = MdpGenerator::new(3, 2, 2, 2).generate(2).unwrap();
        let mu0 = Policy::uniform(2, 3, 2);
        let mu1 = mdp::policies::random_tabular(&mdp, 3);
        let exact = coverage_diagnostics(&mdp, &mu0, &mu1, &mu1, &DiagnosticsConfig::default());
        let cfg = DiagnosticsConfig { enumeration_cap: 0.0, monte_carlo_samples: 20_000, ..Default::default() };
        let mc = coverage_diagnostics(&mdp, &mu0, &mu1, &mu1, &cfg);
        assert!(!mc.exact && mc.standard_error > 0.0);
        let worst = (&mc.sigma_diff - &exact.sigma_diff).abs().max();
        assert!(worst < 5.0 * mc.standard_error, "{worst} vs se {}", mc.standard_error);
    }

    #[test]
    fn reward_range_on_bandit() {
        let mdp = LinearMdp::from_tables(vec![1.0], &[vec![vec![vec![1.0], vec![1.0]]]], &[vec![vec![-0.5, 1.0]]]).unwrap();
        assert!((reward_range(&mdp) - 1.5).abs() < 1e-15);
        let p = link_sigmoid(-1.5);
        assert!((kappa(&mdp) - 1.0 / (p * (1.0 - p))).abs() < 1e-12);
    }
}
