//! Subgradient estimation from a biased value oracle by Gaussian smoothing,
//! and projected descent driven by those estimates.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    /// Smoothing radius μ.
    pub mu: f64,
    /// Directions per estimate.
    pub samples: usize,
    /// Directions are standard normal restricted to `[-h, h]^dim`.
    pub box_halfwidth: f64,
}

impl SmoothingConfig {
    pub fn new(mu: f64, samples: usize) -> Self {
        Self { mu, samples, box_halfwidth: 4.0 }
    }

    fn check(&self) -> Result<()> {
        if self.mu.is_nan() || self.mu <= 0.0 || self.samples == 0 || self.box_halfwidth.is_nan() || self.box_halfwidth <= 0.0 {
            return Err(Error::InvalidArgument("smoothing needs mu > 0, samples >= 1, box halfwidth > 0".into()));
        }
        Ok(())
    }
}

/// How the default smoothing radius is derived from the oracle bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RadiusRule {
    /// `√ε / √(8·dim)`.
    #[default]
    Statement,
    /// `√ε / (diam(E) · √L)`.
    Proof,
}

/// Euclidean diameter of `[-h, h]^dim`.
pub fn box_diameter(halfwidth: f64, dim: usize) -> f64 {
    2.0 * halfwidth * (dim as f64).sqrt()
}

pub fn default_radius(rule: RadiusRule, noise: f64, dim: usize, lipschitz: f64, halfwidth: f64) -> f64 {
    match rule {
        RadiusRule::Statement => noise.sqrt() / (8.0 * dim as f64).sqrt(),
        RadiusRule::Proof => noise.sqrt() / (box_diameter(halfwidth, dim) * lipschitz.sqrt()),
    }
}

/// `D μ / (M · diam(E))`.
pub fn default_step(domain_diameter: f64, mu: f64, bound: f64, halfwidth: f64, dim: usize) -> f64 {
    domain_diameter * mu / (bound * box_diameter(halfwidth, dim))
}

/// `⌈4 D M / ε⌉`.
pub fn default_iterations(domain_diameter: f64, bound: f64, noise: f64) -> usize {
    (4.0 * domain_diameter * bound / noise).ceil() as usize
}

/// Slack of the approximate-subgradient guarantee for one estimate:
/// `√(C/K)(4M/μ)√(2·dim·ln(2/δ)) + (2ε/μ)·diam(E) + μ L √dim`.
#[allow(clippy::too_many_arguments)]
pub fn subgradient_slack(
    constant: f64,
    samples: usize,
    bound: f64,
    mu: f64,
    dim: usize,
    delta: f64,
    noise: f64,
    halfwidth: f64,
    lipschitz: f64,
) -> f64 {
    let dimf = dim as f64;
    (constant / samples as f64).sqrt() * (4.0 * bound / mu) * (2.0 * dimf * (2.0 / delta).ln()).sqrt()
        + 2.0 * noise / mu * box_diameter(halfwidth, dim)
        + mu * lipschitz * dimf.sqrt()
}

/// One standard normal vector with every coordinate in `[-h, h]`.
pub fn truncated_normal<R: Rng + ?Sized>(dim: usize, halfwidth: f64, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| loop {
        let x: f64 = StandardNormal.sample(rng);
        if x.abs() <= halfwidth {
            break x;
        }
    })
}

/// `(1/K) Σ_k [(V̂(θ + μu_k) − V̂(θ) − μ⟨ref, u_k⟩)/μ] u_k`.
///
/// Calls `oracle` exactly `K + 1` times.
pub fn gaussian_subgradient<F, R>(
    oracle: &mut F,
    theta: &DVector<f64>,
    reference: &DVector<f64>,
    config: &SmoothingConfig,
    rng: &mut R,
) -> Result<DVector<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<f64>,
    R: Rng + ?Sized,
{
    config.check()?;
    let base = oracle(theta)?;
    let mut acc = DVector::zeros(theta.len());
    for _ in 0..config.samples {
        let u = truncated_normal(theta.len(), config.box_halfwidth, rng);
        let shifted = oracle(&(theta + &u * config.mu))?;
        let coeff = (shifted - base - config.mu * reference.dot(&u)) / config.mu;
        acc.axpy(coeff, &u, 1.0);
    }
    Ok(acc / config.samples as f64)
}

#[derive(Debug, Clone)]
pub struct DescentTrace {
    /// Uniform average of `θ_1, …, θ_T` (`θ_1` when `T = 0`).
    pub average: DVector<f64>,
    /// `θ_1, …, θ_{T+1}`, every one a projection output except `θ_1`.
    pub iterates: Vec<DVector<f64>>,
}

/// `θ_{t+1} = Proj(θ_t − η g_t)` for `t = 1..T` with Gaussian-smoothing
/// estimates `g_t`; returns the average of `θ_1..θ_T`.
#[allow(clippy::too_many_arguments)]
pub fn biased_pgd<F, P, R>(
    oracle: &mut F,
    project: &mut P,
    theta0: &DVector<f64>,
    reference: &DVector<f64>,
    config: &SmoothingConfig,
    iterations: usize,
    step: f64,
    rng: &mut R,
) -> Result<DescentTrace>
where
    F: FnMut(&DVector<f64>) -> Result<f64>,
    P: FnMut(&DVector<f64>) -> DVector<f64>,
    R: Rng + ?Sized,
{
    let mut theta = theta0.clone();
    let mut sum = DVector::zeros(theta.len());
    let mut iterates = vec![theta.clone()];
    for _ in 0..iterations {
        let g = gaussian_subgradient(oracle, &theta, reference, config, rng)?;
        sum += &theta;
        theta = project(&(&theta - g * step));
        iterates.push(theta.clone());
    }
    let average = if iterations == 0 { theta0.clone() } else { sum / iterations as f64 };
    Ok(DescentTrace { average, iterates })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn constant_oracle_gives_zero() {
        let mut f = |_: &DVector<f64>| Ok(3.0);
        let g = gaussian_subgradient(&mut f, &DVector::zeros(3), &DVector::zeros(3), &SmoothingConfig::new(0.1, 50), &mut rng(0))
            .unwrap();
        assert_eq!(g, DVector::zeros(3));
    }

    #[test]
    fn counts_oracle_calls() {
        let mut calls = 0;
        let mut f = |_: &DVector<f64>| {
            calls += 1;
            Ok(0.0)
        };
        gaussian_subgradient(&mut f, &DVector::zeros(2), &DVector::zeros(2), &SmoothingConfig::new(0.1, 7), &mut rng(0)).unwrap();
        assert_eq!(calls, 8);
    }

    #[test]
    fn linear_gradient_recovered() {
        let c = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let mut f = |x: &DVector<f64>| Ok(c.dot(x));
        let g = gaussian_subgradient(&mut f, &DVector::zeros(3), &DVector::zeros(3), &SmoothingConfig::new(0.05, 10_000), &mut rng(1))
            .unwrap();
        assert!((g - &c).norm() <= 0.05 * c.norm());
    }

    #[test]
    fn reference_is_subtracted() {
        let c = DVector::from_vec(vec![1.0, 1.0]);
        let mut f = |x: &DVector<f64>| Ok(c.dot(x));
        let g = gaussian_subgradient(&mut f, &DVector::zeros(2), &c, &SmoothingConfig::new(0.05, 100), &mut rng(1)).unwrap();
        assert!(g.norm() < 1e-12);
    }

    #[test]
    fn truncated_samples_stay_in_box() {
        let mut r = rng(4);
        for _ in 0..1000 {
            assert!(truncated_normal(5, 0.5, &mut r).amax() <= 0.5);
        }
    }

    #[test]
    fn zero_iterations_returns_start() {
        let mut f = |x: &DVector<f64>| Ok(x.norm());
        let mut p = |x: &DVector<f64>| x.clone();
        let start = DVector::from_vec(vec![0.3, -0.2]);
        let t = biased_pgd(&mut f, &mut p, &start, &DVector::zeros(2), &SmoothingConfig::new(0.1, 5), 0, 0.1, &mut rng(0))
            .unwrap();
        assert_eq!(t.average, start);
    }

    #[test]
    fn l1_objective_converges_with_exact_oracle() {
        let target = DVector::from_vec(vec![0.5, -1.0, 0.25]);
        let mut f = |x: &DVector<f64>| Ok((x - &target).abs().sum());
        let mut p = |x: &DVector<f64>| x.map(|v| v.clamp(-2.0, 2.0));
        let cfg = SmoothingConfig::new(0.005, 20);
        let t = biased_pgd(&mut f, &mut p, &DVector::zeros(3), &DVector::zeros(3), &cfg, 6000, 0.01, &mut rng(3)).unwrap();
        let gap = (&t.average - &target).abs().sum();
        assert!(gap <= 0.1, "gap {gap}");
        assert!(t.iterates.iter().all(|x| x.amax() <= 2.0));
    }

    #[test]
    fn defaults() {
        assert!((default_radius(RadiusRule::Statement, 0.08, 1, 1.0, 4.0) - 0.1).abs() < 1e-15);
        assert!((box_diameter(4.0, 4) - 16.0).abs() < 1e-15);
        assert_eq!(default_iterations(1.0, 1.0, 0.5), 8);
    }
}
