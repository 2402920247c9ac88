//! Offline primal-dual solver over the reparametrised occupancy LP.
//!
//! Dual weights `w_h` define `Q_h = φᵀw_h`; primal weights `β_h` encode
//! expected features through `Λ_h β_h ≈ Φᵀq_h` with `Λ_h` the data second
//! moment. Policies follow multiplicative-weights updates on `Q`, and the
//! returned subgradient is `Λ̂_h β̄_h` for every step.

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{OracleDiagnostics, OracleResult, RobustOracle, Transition, TransitionSet};
use crate::error::{Error, Result};
use crate::mdp::{softmax_in_place, FeatureMap, LinearMdp, Policy, SoftmaxPolicy, Trajectory};
use crate::robust_stats::{robust_covariance, robust_mean, RobustMeanConfig, RobustMethod};
use crate::seed::StdRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrimalDualConfig {
    /// `T`; default `⌈√N_m⌉` with `N_m` the number of transitions used for gradients.
    pub iterations: Option<usize>,
    /// `K`; default `⌊N_m / (2HT)⌋`.
    pub batch: Option<usize>,
    pub eta_w: Option<f64>,
    pub eta_b: Option<f64>,
    pub alpha_mirror: Option<f64>,
    /// Radius `ν` of the primal ball; default `max_h max_{s,a} ‖Λ̂_h⁺ φ(s,a)‖`.
    pub b_radius: Option<f64>,
    /// Radius of the dual ball; default `2H√d`.
    pub w_radius: Option<f64>,
    /// Share of trajectories held out for the covariance estimates.
    pub covariance_fraction: f64,
    pub method: RobustMethod,
    /// Variance proxy for filtering gradient batches; estimated when absent.
    pub gradient_sigma_sq: Option<f64>,
}

impl Default for PrimalDualConfig {
    fn default() -> Self {
        Self {
            iterations: None,
            batch: None,
            eta_w: None,
            eta_b: None,
            alpha_mirror: None,
            b_radius: None,
            w_radius: None,
            covariance_fraction: 0.2,
            method: RobustMethod::SpectralFilter,
            gradient_sigma_sq: None,
        }
    }
}

/// Fully resolved schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrimalDualSchedule {
    pub iterations: usize,
    pub batch: usize,
    pub eta_w: f64,
    pub eta_b: f64,
    pub alpha_mirror: f64,
    pub b_radius: f64,
    pub w_radius: f64,
}

#[derive(Debug, Clone)]
pub struct PrimalDualOracle {
    features: FeatureMap,
    rho: Vec<f64>,
    pools: TransitionSet,
    second_moments: Vec<DMatrix<f64>>,
    epsilon: f64,
    method: RobustMethod,
    gradient_sigma_sq: Option<f64>,
    schedule: PrimalDualSchedule,
}

impl PrimalDualOracle {
    /// Splits `trajectories` into a covariance part (the first
    /// `⌈fraction·n⌉`, dealt out to steps by index) and a gradient part.
    pub fn new(mdp: &LinearMdp, trajectories: &[Trajectory], epsilon: f64, config: PrimalDualConfig) -> Result<Self> {
        let horizon = mdp.horizon();
        let n_cov = ((config.covariance_fraction * trajectories.len() as f64).ceil() as usize).min(trajectories.len());
        let (cov_part, grad_part) = trajectories.split_at(n_cov);
        let per_step = n_cov / horizon;
        let mut step_features = vec![Vec::with_capacity(per_step); horizon];
        for (i, t) in cov_part.iter().enumerate() {
            let h = (i * horizon) / n_cov.max(1);
            let (s, a) = (t.states[h], t.actions[h]);
            step_features[h].push(mdp.features().get(s, a).clone());
        }
        Self::from_parts(
            mdp.features().clone(),
            mdp.rho().to_vec(),
            TransitionSet::from_trajectories(horizon, grad_part),
            &step_features,
            epsilon,
            config,
        )
    }

    /// Builds the oracle from gradient transitions and per-step feature
    /// samples for the second-moment estimates.
    pub fn from_parts(
        features: FeatureMap,
        rho: Vec<f64>,
        pools: TransitionSet,
        covariance_samples: &[Vec<DVector<f64>>],
        epsilon: f64,
        config: PrimalDualConfig,
    ) -> Result<Self> {
        let horizon = pools.horizon();
        let d = features.dim();
        for (h, pool) in pools.per_step.iter().enumerate() {
            if pool.is_empty() {
                return Err(Error::InsufficientCoverage { step: h });
            }
        }
        let recommended = if epsilon > 0.0 {
            let ld = (d as f64).ln().max(1.0);
            (d * d) as f64 / (epsilon * epsilon) * ld * ld
        } else {
            (d * d) as f64
        };
        let cov_cfg = RobustMeanConfig::new(epsilon).with_method(config.method);
        let mut second_moments = Vec::with_capacity(horizon);
        for (h, samples) in covariance_samples.iter().enumerate() {
            if (samples.len() as f64) < recommended {
                warn!("step {h}: {} covariance samples, fewer than the recommended {recommended:.0}", samples.len());
            }
            second_moments.push(robust_covariance(samples, &cov_cfg)?);
        }
        if second_moments.len() != horizon {
            return Err(Error::InvalidArgument("one covariance sample set per step is required".into()));
        }

        let n_m = pools.total();
        let hf = horizon as f64;
        let df = d as f64;
        let iterations = config.iterations.unwrap_or_else(|| (n_m as f64).sqrt().ceil() as usize).max(1);
        let batch = config.batch.unwrap_or(n_m / (2 * horizon * iterations));
        if batch < d.max(2) {
            return Err(Error::GradientBatchTooSmall { batch, dim: d });
        }
        let b_radius = match config.b_radius {
            Some(r) => r,
            None => data_radius(&features, &second_moments),
        };
        let t = iterations as f64;
        let na = features.num_actions() as f64;
        let schedule = PrimalDualSchedule {
            iterations,
            batch,
            eta_w: config.eta_w.unwrap_or(hf / (b_radius * (df * t).sqrt())),
            eta_b: config.eta_b.unwrap_or(b_radius / (df.powf(1.5) * (2.0 * (hf * hf + 1.0) * t).sqrt())),
            alpha_mirror: config.alpha_mirror.unwrap_or((2.0 * na.ln() / (df * t)).sqrt() / hf),
            b_radius,
            w_radius: config.w_radius.unwrap_or(2.0 * hf * df.sqrt()),
        };
        Ok(Self {
            features,
            rho,
            pools,
            second_moments,
            epsilon,
            method: config.method,
            gradient_sigma_sq: config.gradient_sigma_sq,
            schedule,
        })
    }

    pub fn schedule(&self) -> &PrimalDualSchedule {
        &self.schedule
    }

    pub fn second_moments(&self) -> &[DMatrix<f64>] {
        &self.second_moments
    }

    fn mean_config(&self) -> RobustMeanConfig {
        let mut cfg = RobustMeanConfig::new(self.epsilon).with_method(self.method);
        cfg.sigma_sq = self.gradient_sigma_sq;
        cfg
    }

    /// `Σ_b π_h(b|s) φ(s,b)`.
    fn policy_feature(&self, policy: &SoftmaxPolicy, step: usize, state: usize, buf: &mut [f64]) -> DVector<f64> {
        for (a, b) in buf.iter_mut().enumerate() {
            *b = policy.temperature * self.features.get(state, a).dot(&policy.weights[step]);
        }
        softmax_in_place(buf);
        let mut out = DVector::zeros(self.features.dim());
        for (a, &pa) in buf.iter().enumerate() {
            out.axpy(pa, self.features.get(state, a), 1.0);
        }
        out
    }
}

/// `max_h max_{s,a} ‖Λ_h⁺ φ(s,a)‖`, floored at 1.
fn data_radius(features: &FeatureMap, moments: &[DMatrix<f64>]) -> f64 {
    let mut radius = 0.0f64;
    for m in moments {
        let pinv = pseudo_inverse(m, 1e-10);
        for phi in features.rows() {
            radius = radius.max((&pinv * phi).norm());
        }
    }
    radius.max(1.0)
}

fn pseudo_inverse(m: &DMatrix<f64>, cutoff: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let lmax = eig.eigenvalues.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let inv = eig.eigenvalues.map(|l| if l.abs() > cutoff * lmax && l != 0.0 { 1.0 / l } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

fn project(v: &mut DVector<f64>, radius: f64) {
    let n = v.norm();
    if n > radius {
        *v *= radius / n;
    }
}

/// Cycles through a shuffled pool, reshuffling on every pass.
struct Cursor {
    order: Vec<usize>,
    pos: usize,
}

impl Cursor {
    fn new(len: usize, rng: &mut StdRng) -> Self {
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(rng);
        Self { order, pos: 0 }
    }

    fn take(&mut self, n: usize, rng: &mut StdRng) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

impl RobustOracle for PrimalDualOracle {
    fn name(&self) -> &'static str {
        "primal-dual"
    }

    fn is_first_order(&self) -> bool {
        true
    }

    fn solve(&self, theta: &DVector<f64>, rng: &mut StdRng) -> Result<OracleResult> {
        let sch = self.schedule;
        let horizon = self.pools.horizon();
        let (ns, na, d) = (self.features.num_states(), self.features.num_actions(), self.features.dim());
        let half = sch.batch / 2;
        let mean_cfg = self.mean_config();
        let rewards: Vec<Vec<f64>> = (0..horizon).map(|h| self.features.step_rewards(theta, h)).collect();

        let mut cursors: Vec<Cursor> = self.pools.per_step.iter().map(|p| Cursor::new(p.len(), rng)).collect();
        let mut w = vec![DVector::zeros(d); horizon];
        let mut beta = vec![DVector::zeros(d); horizon];
        let mut beta_sum = vec![DVector::zeros(d); horizon];
        let mut logits = SoftmaxPolicy { weights: vec![DVector::zeros(d); horizon], temperature: sch.alpha_mirror };
        let mut components = Vec::with_capacity(sch.iterations);
        let mut buf = vec![0.0; na];
        let mut last_norm = 0.0;

        for _ in 0..sch.iterations {
            components.push(Policy::SoftmaxLinear(logits.clone()));
            // Chunks per step: [0, half) second-moment term of w_h,
            // [half, 2·half) flow term of w_{h+1}, [2·half, 2·half + K) for β_h.
            let chunks: Vec<Vec<Transition>> = (0..horizon)
                .map(|h| {
                    cursors[h].take(2 * half + sch.batch, rng).into_iter().map(|i| self.pools.per_step[h][i]).collect()
                })
                .collect();
            let w_prev = w.clone();

            let initial_flow = {
                let mut f = DVector::zeros(d);
                for s in 0..ns {
                    if self.rho[s] > 0.0 {
                        f.axpy(self.rho[s], &self.policy_feature(&logits, 0, s, &mut buf), 1.0);
                    }
                }
                f
            };
            for h in 0..horizon {
                let mut samples = Vec::with_capacity(half);
                for j in 0..half {
                    let flow = if h == 0 {
                        initial_flow.clone()
                    } else {
                        let tr = chunks[h - 1][half + j];
                        let weight = self.features.get(tr.state, tr.action).dot(&beta[h - 1]);
                        self.policy_feature(&logits, h, tr.next_state, &mut buf) * weight
                    };
                    let tr2 = chunks[h][j];
                    let phi2 = self.features.get(tr2.state, tr2.action);
                    samples.push(flow - phi2 * phi2.dot(&beta[h]));
                }
                let g = robust_mean(&samples, &mean_cfg)?;
                last_norm = g.norm();
                w[h] -= g * sch.eta_w;
                project(&mut w[h], sch.w_radius);
            }

            for h in 0..horizon {
                let mut samples = Vec::with_capacity(sch.batch);
                for tr in &chunks[h][2 * half..] {
                    let phi = self.features.get(tr.state, tr.action);
                    let next = if h + 1 < horizon {
                        self.policy_feature(&logits, h + 1, tr.next_state, &mut buf).dot(&w_prev[h + 1])
                    } else {
                        0.0
                    };
                    let td = rewards[h][tr.state * na + tr.action] + next - phi.dot(&w_prev[h]);
                    samples.push(phi * td);
                }
                let g = robust_mean(&samples, &mean_cfg)?;
                beta[h] += g * sch.eta_b;
                project(&mut beta[h], sch.b_radius);
                beta_sum[h] += &beta[h];
            }

            for (acc, wp) in logits.weights.iter_mut().zip(&w_prev) {
                *acc += wp;
            }
        }

        let t = sch.iterations as f64;
        let mut sub = DVector::zeros(horizon * d);
        let mut value = 0.0;
        for (h, (moment, beta)) in self.second_moments.iter().zip(&beta_sum).enumerate() {
            let v = moment * (beta / t);
            value += v.dot(&theta.rows(h * d, d));
            sub.rows_mut(h * d, d).copy_from(&v);
        }
        Ok(OracleResult {
            policy: Policy::mixture(components),
            value_estimate: value,
            subgradient: Some(sub),
            diagnostics: OracleDiagnostics { iterations: sch.iterations, last_gradient_norm: Some(last_norm) },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{self, MdpGenerator};
    use crate::seed::rng_from_seed;

    fn oracle_for(seed: u64, n: usize, cfg: PrimalDualConfig) -> (LinearMdp, PrimalDualOracle) {
        let m = MdpGenerator::new(4, 2, 3, 2).generate(seed).unwrap();
        let pi = Policy::uniform(2, 4, 2);
        let mut rng = rng_from_seed(seed);
        let trajs: Vec<_> = (0..n).map(|_| mdp::sample_trajectory(&m, &pi, &mut rng)).collect();
        let o = PrimalDualOracle::new(&m, &trajs, 0.0, cfg).unwrap();
        (m, o)
    }

    #[test]
    fn default_schedule_follows_sample_size() {
        let (_, o) = oracle_for(0, 2000, PrimalDualConfig::default());
        let s = o.schedule();
        // 1600 gradient trajectories, 2 steps each.
        assert_eq!(s.iterations, 57);
        assert_eq!(s.batch, 3200 / (2 * 2 * 57));
        assert!((s.w_radius - 4.0 * 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn small_batch_rejected() {
        let m = MdpGenerator::new(4, 2, 3, 2).generate(0).unwrap();
        let pi = Policy::uniform(2, 4, 2);
        let mut rng = rng_from_seed(0);
        let trajs: Vec<_> = (0..40).map(|_| mdp::sample_trajectory(&m, &pi, &mut rng)).collect();
        let r = PrimalDualOracle::new(&m, &trajs, 0.0, PrimalDualConfig { batch: Some(2), ..Default::default() });
        assert!(matches!(r, Err(Error::GradientBatchTooSmall { .. })));
    }

    #[test]
    fn iterates_respect_balls_and_are_deterministic() {
        let cfg = PrimalDualConfig { iterations: Some(50), batch: Some(16), ..Default::default() };
        let (m, o) = oracle_for(1, 500, cfg);
        let theta = m.theta_star_flat();
        let a = o.solve(&theta, &mut rng_from_seed(5)).unwrap();
        let b = o.solve(&theta, &mut rng_from_seed(5)).unwrap();
        assert_eq!(a.value_estimate, b.value_estimate);
        assert_eq!(a.policy.components().len(), 50);
        let sub = a.subgradient.unwrap();
        let bound = 2f64.sqrt() * 3.0 * o.schedule().b_radius;
        assert!(sub.norm() <= bound + 1e-9);
    }
}
