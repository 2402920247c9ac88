//! Robust offline RL oracles queried with a reward parameter.
//!
//! Zero-order oracles return a policy and a value estimate; first-order
//! oracles additionally return an (approximate) subgradient of `V*(θ)`.

mod exact;
mod primal_dual;
mod rlsvi;

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mdp::{LinearMdp, Policy, Trajectory};
use crate::seed::StdRng;

pub use exact::ExactOracle;
pub use primal_dual::{PrimalDualConfig, PrimalDualOracle};
pub use rlsvi::{RobustLsvi, RobustLsviConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleDiagnostics {
    pub iterations: usize,
    /// Norm of the last averaged dual-weight gradient, when applicable.
    pub last_gradient_norm: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub policy: Policy,
    pub value_estimate: f64,
    /// Flat `(v̂₁, …, v̂_H)`, present for first-order oracles.
    pub subgradient: Option<DVector<f64>>,
    pub diagnostics: OracleDiagnostics,
}

pub trait RobustOracle: Send + Sync {
    fn name(&self) -> &'static str;

    fn is_first_order(&self) -> bool;

    /// Solves the offline problem with rewards `r_h(s,a) = φ(s,a)ᵀθ_h`.
    fn solve(&self, theta: &DVector<f64>, rng: &mut StdRng) -> Result<OracleResult>;
}

/// Wraps an oracle and counts `solve` calls.
pub struct CountingOracle<'a> {
    inner: &'a dyn RobustOracle,
    calls: AtomicUsize,
}

impl<'a> CountingOracle<'a> {
    pub fn new(inner: &'a dyn RobustOracle) -> Self {
        Self { inner, calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl RobustOracle for CountingOracle<'_> {
    fn name(&self) -> &'static str {
        self.inner.name()
    }

    fn is_first_order(&self) -> bool {
        self.inner.is_first_order()
    }

    fn solve(&self, theta: &DVector<f64>, rng: &mut StdRng) -> Result<OracleResult> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.solve(theta, rng)
    }
}

/// One offline transition `(s_h, a_h, s_{h+1})`; rewards are relabeled per query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub next_state: usize,
}

/// Transitions grouped by step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransitionSet {
    pub per_step: Vec<Vec<Transition>>,
}

impl TransitionSet {
    /// Every trajectory contributes one transition per step.
    pub fn from_trajectories<'a>(horizon: usize, trajectories: impl IntoIterator<Item = &'a Trajectory>) -> Self {
        let mut per_step = vec![Vec::new(); horizon];
        for t in trajectories {
            for (h, bucket) in per_step.iter_mut().enumerate() {
                bucket.push(Transition { state: t.states[h], action: t.actions[h], next_state: t.states[h + 1] });
            }
        }
        Self { per_step }
    }

    pub fn horizon(&self) -> usize {
        self.per_step.len()
    }

    pub fn total(&self) -> usize {
        self.per_step.iter().map(Vec::len).sum()
    }
}

/// Which oracle a pipeline uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OracleKind {
    Exact,
    Rlsvi(RobustLsviConfig),
    PrimalDual(PrimalDualConfig),
}

impl OracleKind {
    pub fn name(&self) -> &'static str {
        match self {
            OracleKind::Exact => "exact",
            OracleKind::Rlsvi(_) => "rlsvi",
            OracleKind::PrimalDual(_) => "primal-dual",
        }
    }

    /// Builds the oracle from the environment's known parts and the offline
    /// trajectories. The exact oracle ignores the data.
    pub fn build(&self, mdp: &LinearMdp, trajectories: &[Trajectory], epsilon: f64) -> Result<Box<dyn RobustOracle>> {
        Ok(match self {
            OracleKind::Exact => Box::new(ExactOracle::new(mdp.clone())),
            OracleKind::Rlsvi(cfg) => Box::new(RobustLsvi::new(mdp, trajectories, epsilon, cfg.clone())),
            OracleKind::PrimalDual(cfg) => Box::new(PrimalDualOracle::new(mdp, trajectories, epsilon, cfg.clone())?),
        })
    }
}
