use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{OracleDiagnostics, OracleResult, RobustOracle, Transition, TransitionSet};
use crate::error::{Error, Result};
use crate::mdp::{FeatureMap, LinearMdp, Policy, Trajectory};
use crate::seed::StdRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobustLsviConfig {
    /// Pessimism coefficient `b` on `‖φ‖_{Λ⁻¹}`.
    pub penalty: f64,
    pub ridge: f64,
    pub trim_rounds: usize,
}

impl Default for RobustLsviConfig {
    fn default() -> Self {
        Self { penalty: 0.1, ridge: 1e-6, trim_rounds: 3 }
    }
}

/// Pessimistic least-squares value iteration with trimmed per-step regressions.
#[derive(Debug, Clone)]
pub struct RobustLsvi {
    features: FeatureMap,
    rho: Vec<f64>,
    data: TransitionSet,
    epsilon: f64,
    config: RobustLsviConfig,
}

impl RobustLsvi {
    pub fn new(mdp: &LinearMdp, trajectories: &[Trajectory], epsilon: f64, config: RobustLsviConfig) -> Self {
        Self::from_transitions(
            mdp.features().clone(),
            mdp.rho().to_vec(),
            TransitionSet::from_trajectories(mdp.horizon(), trajectories),
            epsilon,
            config,
        )
    }

    pub fn from_transitions(features: FeatureMap, rho: Vec<f64>, data: TransitionSet, epsilon: f64, config: RobustLsviConfig) -> Self {
        Self { features, rho, data, epsilon, config }
    }

    /// Ridge fit on `rows`, returning weights and the Gram matrix.
    fn fit(&self, samples: &[Transition], targets: &[f64], rows: &[usize]) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let d = self.features.dim();
        let mut gram = DMatrix::identity(d, d) * self.config.ridge;
        let mut rhs = DVector::zeros(d);
        for &i in rows {
            let phi = self.features.get(samples[i].state, samples[i].action);
            gram.ger(1.0, phi, phi, 1.0);
            rhs.axpy(targets[i], phi, 1.0);
        }
        let chol = gram.clone().cholesky()?;
        Some((chol.solve(&rhs), gram))
    }
}

impl RobustOracle for RobustLsvi {
    fn name(&self) -> &'static str {
        "rlsvi"
    }

    fn is_first_order(&self) -> bool {
        false
    }

    fn solve(&self, theta: &DVector<f64>, _rng: &mut StdRng) -> Result<OracleResult> {
        let (ns, na, d) = (self.features.num_states(), self.features.num_actions(), self.features.dim());
        let horizon = self.data.horizon();
        let step_max: Vec<f64> = (0..horizon)
            .map(|h| self.features.step_rewards(theta, h).iter().fold(0.0, |m: f64, r| m.max(r.abs())))
            .collect();
        let mut next_v = vec![0.0; ns];
        let mut actions = vec![vec![0usize; ns]; horizon];
        for h in (0..horizon).rev() {
            let samples = &self.data.per_step[h];
            let rewards = self.features.step_rewards(theta, h);
            let targets: Vec<f64> =
                samples.iter().map(|t| rewards[t.state * na + t.action] + next_v[t.next_state]).collect();
            let drop = (self.epsilon * samples.len() as f64 - 1e-9).ceil().max(0.0) as usize;
            let keep = samples.len().saturating_sub(drop);
            if keep < d {
                return Err(Error::InsufficientCoverage { step: h });
            }
            let mut rows: Vec<usize> = (0..samples.len()).collect();
            let (mut w, mut gram) = self.fit(samples, &targets, &rows).ok_or(Error::InsufficientCoverage { step: h })?;
            if drop > 0 {
                for _ in 0..self.config.trim_rounds {
                    let mut resid: Vec<(f64, usize)> = (0..samples.len())
                        .map(|i| ((self.features.get(samples[i].state, samples[i].action).dot(&w) - targets[i]).abs(), i))
                        .collect();
                    resid.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                    rows = resid[..keep].iter().map(|r| r.1).collect();
                    rows.sort_unstable();
                    (w, gram) = self.fit(samples, &targets, &rows).ok_or(Error::InsufficientCoverage { step: h })?;
                }
            }
            let inv = gram.try_inverse().ok_or(Error::InsufficientCoverage { step: h })?;
            let bound: f64 = step_max[h..].iter().sum();
            let mut v = vec![0.0; ns];
            for s in 0..ns {
                let mut best = f64::NEG_INFINITY;
                for a in 0..na {
                    let phi = self.features.get(s, a);
                    let width = phi.dot(&(&inv * phi)).max(0.0).sqrt();
                    // Clip the fit first so that an unsupported action can sink
                    // below every supported one without unbounded values.
                    let q = (phi.dot(&w).clamp(-bound, bound) - self.config.penalty * width).max(-2.0 * bound);
                    if q > best {
                        best = q;
                        actions[h][s] = a;
                    }
                }
                v[s] = best;
            }
            next_v = v;
        }
        let value = self.rho.iter().zip(&next_v).map(|(p, v)| p * v).sum();
        Ok(OracleResult {
            policy: Policy::deterministic(na, &actions),
            value_estimate: value,
            subgradient: None,
            diagnostics: OracleDiagnostics { iterations: horizon, last_gradient_norm: None },
        })
    }
}
