//! Finite-horizon linear MDPs with exact planning and evaluation.
//!
//! Rewards and transitions are linear in a known feature table:
//! `r_h(s, a) = φ(s, a)ᵀ θ_h` and `P_h(s' | s, a) = φ(s, a)ᵀ μ_h(s')`.
//! Reward parameters are passed around flat, as one vector of length `H·d`
//! whose `h`-th block of `d` entries is `θ_h`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, StdRng};

/// Slack allowed on `‖φ(s,a)‖ ≤ 1` and the parameter norm bounds.
const NORM_TOL: f64 = 1e-9;
/// Transition entries this close below zero are clipped to zero.
const CLIP_TOL: f64 = 1e-12;
/// Row sums of `P_h(·|s,a)` must be within this of one.
const STOCHASTIC_TOL: f64 = 1e-9;

/// Explicit feature table, one row per `(state, action)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    num_states: usize,
    num_actions: usize,
    dim: usize,
    table: Vec<DVector<f64>>,
}

impl FeatureMap {
    /// `rows[s * num_actions + a]` is `φ(s, a)`.
    pub fn new(num_states: usize, num_actions: usize, rows: Vec<DVector<f64>>) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidMdp("need at least one state and one action".into()));
        }
        if rows.len() != num_states * num_actions {
            return Err(Error::InvalidMdp(format!(
                "feature table has {} rows, expected {}",
                rows.len(),
                num_states * num_actions
            )));
        }
        let dim = rows[0].len();
        if dim == 0 {
            return Err(Error::InvalidMdp("feature dimension must be at least 1".into()));
        }
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidMdp("feature rows have mixed dimensions".into()));
        }
        Ok(Self { num_states, num_actions, dim, table: rows })
    }

    /// One-hot features, `d = S·A`.
    pub fn tabular(num_states: usize, num_actions: usize) -> Self {
        let d = num_states * num_actions;
        let rows = (0..d)
            .map(|i| {
                let mut v = DVector::zeros(d);
                v[i] = 1.0;
                v
            })
            .collect();
        Self { num_states, num_actions, dim: d, table: rows }
    }

    #[inline]
    pub fn get(&self, state: usize, action: usize) -> &DVector<f64> {
        &self.table[state * self.num_actions + action]
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn rows(&self) -> &[DVector<f64>] {
        &self.table
    }

    /// The `SA × d` matrix Φ.
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.table.len(), self.dim, |i, j| self.table[i][j])
    }

    /// `Φ θ_h` for the block `h` of a flat parameter vector.
    pub fn step_rewards(&self, theta: &DVector<f64>, step: usize) -> Vec<f64> {
        let block = theta.rows(step * self.dim, self.dim);
        self.table.iter().map(|phi| phi.dot(&block)).collect()
    }
}

/// A state/action sequence of length `H` plus the terminal state.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn steps(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.states.iter().copied().zip(self.actions.iter().copied())
    }
}

/// Concatenated trajectory feature `[φ(s₁,a₁); …; φ(s_H,a_H)]`.
pub fn trajectory_feature(features: &FeatureMap, traj: &Trajectory) -> DVector<f64> {
    let d = features.dim();
    let mut out = DVector::zeros(traj.horizon() * d);
    for (h, (s, a)) in traj.steps().enumerate() {
        out.rows_mut(h * d, d).copy_from(features.get(s, a));
    }
    out
}

/// Per-step action distribution indexed `[h][s * A + a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    pub num_actions: usize,
    pub probs: Vec<Vec<f64>>,
}

/// `π_h(a|s) ∝ exp(temperature · φ(s,a)ᵀ w_h)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxPolicy {
    pub weights: Vec<DVector<f64>>,
    pub temperature: f64,
}

/// Markovian per-step policies, or a uniform mixture of them (one component
/// is drawn at the start of each episode).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Policy {
    Tabular(TabularPolicy),
    SoftmaxLinear(SoftmaxPolicy),
    Mixture(Vec<Policy>),
}

impl Policy {
    pub fn uniform(horizon: usize, num_states: usize, num_actions: usize) -> Self {
        let row = vec![1.0 / num_actions as f64; num_states * num_actions];
        Policy::Tabular(TabularPolicy { num_actions, probs: vec![row; horizon] })
    }

    /// Deterministic policy from `actions[h][s]`.
    pub fn deterministic(num_actions: usize, actions: &[Vec<usize>]) -> Self {
        let probs = actions
            .iter()
            .map(|per_state| {
                let mut row = vec![0.0; per_state.len() * num_actions];
                for (s, &a) in per_state.iter().enumerate() {
                    row[s * num_actions + a] = 1.0;
                }
                row
            })
            .collect();
        Policy::Tabular(TabularPolicy { num_actions, probs })
    }

    /// Uniform mixture; nested mixtures are flattened.
    pub fn mixture(components: Vec<Policy>) -> Self {
        let mut flat = Vec::with_capacity(components.len());
        for c in components {
            match c {
                Policy::Mixture(inner) => flat.extend(inner),
                other => flat.push(other),
            }
        }
        if flat.len() == 1 {
            flat.pop().unwrap()
        } else {
            Policy::Mixture(flat)
        }
    }

    /// The Markov components (a single-element slice for non-mixtures).
    pub fn components(&self) -> &[Policy] {
        match self {
            Policy::Mixture(c) => c,
            other => std::slice::from_ref(other),
        }
    }

    /// Fills `out` with `π_h(·|s)`.
    ///
    /// # Panics
    /// On a mixture; mixtures are not Markov, use [`Policy::components`].
    pub fn action_distribution(&self, features: &FeatureMap, step: usize, state: usize, out: &mut [f64]) {
        let na = features.num_actions();
        match self {
            Policy::Tabular(t) => {
                out.copy_from_slice(&t.probs[step][state * na..(state + 1) * na]);
            }
            Policy::SoftmaxLinear(sm) => {
                let w = &sm.weights[step];
                for (a, o) in out.iter_mut().enumerate() {
                    *o = sm.temperature * features.get(state, a).dot(w);
                }
                softmax_in_place(out);
            }
            Policy::Mixture(_) => panic!("mixture policies have no per-state action distribution"),
        }
    }
}

pub(crate) fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        total += *l;
    }
    for l in logits.iter_mut() {
        *l /= total;
    }
}

/// `q[h][s * A + a]`: probability of visiting `(s, a)` at step `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMeasure {
    pub num_actions: usize,
    pub q: Vec<Vec<f64>>,
}

impl OccupancyMeasure {
    /// `Φᵀ q_h`.
    pub fn expected_feature(&self, features: &FeatureMap, step: usize) -> DVector<f64> {
        let mut out = DVector::zeros(features.dim());
        for (phi, &p) in features.rows().iter().zip(&self.q[step]) {
            if p != 0.0 {
                out.axpy(p, phi, 1.0);
            }
        }
        out
    }

    /// `Σ_h q_hᵀ Φ θ_h`.
    pub fn value(&self, features: &FeatureMap, theta: &DVector<f64>) -> f64 {
        (0..self.q.len())
            .map(|h| {
                let r = features.step_rewards(theta, h);
                self.q[h].iter().zip(&r).map(|(q, r)| q * r).sum::<f64>()
            })
            .sum()
    }

    /// Largest violation of per-step normalisation and Bellman flow.
    pub fn max_flow_violation(&self, mdp: &LinearMdp) -> f64 {
        let (ns, na) = (mdp.num_states(), mdp.num_actions());
        let mut worst = 0.0f64;
        for (h, qh) in self.q.iter().enumerate() {
            worst = worst.max((qh.iter().sum::<f64>() - 1.0).abs());
            if h + 1 < self.q.len() {
                let mut next = vec![0.0; ns];
                for (sa, &p) in qh.iter().enumerate() {
                    for (sp, n) in next.iter_mut().enumerate() {
                        *n += p * mdp.transition_row(h, sa / na, sa % na)[sp];
                    }
                }
                for (sp, n) in next.iter().enumerate() {
                    let marg: f64 = self.q[h + 1][sp * na..(sp + 1) * na].iter().sum();
                    worst = worst.max((marg - n).abs());
                }
            }
        }
        worst
    }
}

/// Ground-truth linear MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpDocument", into = "MdpDocument")]
pub struct LinearMdp {
    horizon: usize,
    rho: Vec<f64>,
    features: FeatureMap,
    mu: Vec<DMatrix<f64>>,
    theta_star: Vec<DVector<f64>>,
    /// `transitions[h][(s * A + a) * S + s']`, clipped.
    transitions: Vec<Vec<f64>>,
}

impl LinearMdp {
    /// Shape-checked constructor. Invariants beyond shapes are reported by
    /// [`validate`], not enforced here.
    pub fn new(
        horizon: usize,
        rho: Vec<f64>,
        features: FeatureMap,
        mu: Vec<DMatrix<f64>>,
        theta_star: Vec<DVector<f64>>,
    ) -> Result<Self> {
        let (ns, d) = (features.num_states(), features.dim());
        if horizon == 0 {
            return Err(Error::InvalidMdp("horizon must be at least 1".into()));
        }
        if rho.len() != ns {
            return Err(Error::InvalidMdp(format!("rho has {} entries, expected {ns}", rho.len())));
        }
        if mu.len() != horizon || mu.iter().any(|m| m.nrows() != ns || m.ncols() != d) {
            return Err(Error::InvalidMdp(format!("mu must be {horizon} matrices of shape {ns}x{d}")));
        }
        if theta_star.len() != horizon || theta_star.iter().any(|t| t.len() != d) {
            return Err(Error::InvalidMdp(format!("theta_star must be {horizon} vectors of length {d}")));
        }
        let transitions = mu
            .iter()
            .map(|m| {
                let mut row = Vec::with_capacity(features.rows().len() * ns);
                for phi in features.rows() {
                    let p = m * phi;
                    row.extend(p.iter().map(|&x| if (-CLIP_TOL..0.0).contains(&x) { 0.0 } else { x }));
                }
                row
            })
            .collect();
        Ok(Self { horizon, rho, features, mu, theta_star, transitions })
    }

    /// Builds a tabular MDP (one-hot features) from explicit transition and
    /// reward tables: `p[h][s][a][s']` and `r[h][s][a]`.
    pub fn from_tables(rho: Vec<f64>, p: &[Vec<Vec<Vec<f64>>>], r: &[Vec<Vec<f64>>]) -> Result<Self> {
        let horizon = p.len();
        let ns = rho.len();
        let na = p.first().and_then(|ph| ph.first()).map_or(0, |row| row.len());
        let features = FeatureMap::tabular(ns, na);
        let d = ns * na;
        let mu = p
            .iter()
            .map(|ph| DMatrix::from_fn(ns, d, |sp, k| ph[k / na][k % na][sp]))
            .collect();
        let theta = r
            .iter()
            .map(|rh| DVector::from_fn(d, |k, _| rh[k / na][k % na]))
            .collect();
        Self::new(horizon, rho, features, mu, theta)
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_states(&self) -> usize {
        self.features.num_states()
    }

    pub fn num_actions(&self) -> usize {
        self.features.num_actions()
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    /// `H · d`, the length of flat reward parameters and trajectory features.
    pub fn param_dim(&self) -> usize {
        self.horizon * self.dim()
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn features(&self) -> &FeatureMap {
        &self.features
    }

    pub fn mu(&self) -> &[DMatrix<f64>] {
        &self.mu
    }

    pub fn theta_star(&self) -> &[DVector<f64>] {
        &self.theta_star
    }

    pub fn theta_star_flat(&self) -> DVector<f64> {
        flatten_blocks(&self.theta_star)
    }

    /// `P_h(·|s,a)`.
    #[inline]
    pub fn transition_row(&self, step: usize, state: usize, action: usize) -> &[f64] {
        let ns = self.num_states();
        let k = state * self.num_actions() + action;
        &self.transitions[step][k * ns..(k + 1) * ns]
    }

    /// Returns a copy with the reward parameters replaced.
    pub fn with_theta_star(&self, theta: &DVector<f64>) -> Self {
        let mut out = self.clone();
        out.theta_star = split_blocks(theta, self.horizon, self.dim());
        out
    }
}

pub fn flatten_blocks(blocks: &[DVector<f64>]) -> DVector<f64> {
    let total: usize = blocks.iter().map(|b| b.len()).sum();
    let mut out = DVector::zeros(total);
    let mut offset = 0;
    for b in blocks {
        out.rows_mut(offset, b.len()).copy_from(b);
        offset += b.len();
    }
    out
}

pub fn split_blocks(flat: &DVector<f64>, horizon: usize, dim: usize) -> Vec<DVector<f64>> {
    (0..horizon).map(|h| flat.rows(h * dim, dim).into_owned()).collect()
}

/// On-disk JSON layout: `{H, S, A, d, rho, features, mu, theta_star}` with
/// `features[s * A + a]`, `mu[h][s'][k]`, `theta_star[h][k]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdpDocument {
    #[serde(rename = "H")]
    pub horizon: usize,
    #[serde(rename = "S")]
    pub num_states: usize,
    #[serde(rename = "A")]
    pub num_actions: usize,
    pub d: usize,
    pub rho: Vec<f64>,
    pub features: Vec<Vec<f64>>,
    pub mu: Vec<Vec<Vec<f64>>>,
    pub theta_star: Vec<Vec<f64>>,
}

impl TryFrom<MdpDocument> for LinearMdp {
    type Error = Error;

    fn try_from(doc: MdpDocument) -> Result<Self> {
        let rows = doc.features.into_iter().map(DVector::from_vec).collect();
        let features = FeatureMap::new(doc.num_states, doc.num_actions, rows)?;
        if features.dim() != doc.d {
            return Err(Error::InvalidMdp(format!("declared d={} but features have {}", doc.d, features.dim())));
        }
        let mut mu = Vec::with_capacity(doc.mu.len());
        for (h, mh) in doc.mu.into_iter().enumerate() {
            if mh.len() != doc.num_states || mh.iter().any(|r| r.len() != doc.d) {
                return Err(Error::InvalidMdp(format!("mu[{h}] must be {}x{}", doc.num_states, doc.d)));
            }
            let flat: Vec<f64> = mh.into_iter().flatten().collect();
            mu.push(DMatrix::from_row_slice(doc.num_states, doc.d, &flat));
        }
        let theta = doc.theta_star.into_iter().map(DVector::from_vec).collect();
        LinearMdp::new(doc.horizon, doc.rho, features, mu, theta)
    }
}

impl From<LinearMdp> for MdpDocument {
    fn from(m: LinearMdp) -> Self {
        MdpDocument {
            horizon: m.horizon,
            num_states: m.num_states(),
            num_actions: m.num_actions(),
            d: m.dim(),
            rho: m.rho.clone(),
            features: m.features.rows().iter().map(|r| r.iter().copied().collect()).collect(),
            mu: m
                .mu
                .iter()
                .map(|mh| mh.row_iter().map(|r| r.iter().copied().collect()).collect())
                .collect(),
            theta_star: m.theta_star.iter().map(|t| t.iter().copied().collect()).collect(),
        }
    }
}

/// One failed invariant, located as precisely as the check allows.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub step: Option<usize>,
    pub state: Option<usize>,
    pub action: Option<usize>,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    FeatureNorm(f64),
    NegativeTransition(f64),
    TransitionNotStochastic(f64),
    RewardNorm(f64),
    MeasureNorm(f64),
    InitialDistribution(f64),
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let loc = |name: &str, v: Option<usize>| v.map(|x| format!(" {name}={x}")).unwrap_or_default();
        let what = match &self.kind {
            ViolationKind::FeatureNorm(n) => format!("feature norm {n} exceeds 1"),
            ViolationKind::NegativeTransition(p) => format!("negative transition probability {p}"),
            ViolationKind::TransitionNotStochastic(s) => format!("transition not stochastic (sums to {s})"),
            ViolationKind::RewardNorm(n) => format!("reward parameter norm {n} exceeds sqrt(d)"),
            ViolationKind::MeasureNorm(n) => format!("measure norm {n} exceeds sqrt(d)"),
            ViolationKind::InitialDistribution(s) => format!("initial distribution invalid (sums to {s})"),
        };
        write!(f, "{what}{}{}{}", loc("h", self.step), loc("s", self.state), loc("a", self.action))
    }
}

/// Lists every violated linear-MDP invariant; empty means valid.
pub fn validate(mdp: &LinearMdp) -> Vec<Violation> {
    let mut out = Vec::new();
    let (ns, na, d) = (mdp.num_states(), mdp.num_actions(), mdp.dim());
    let sqrt_d = (d as f64).sqrt();
    let v = |step, state, action, kind| Violation { step, state, action, kind };

    for s in 0..ns {
        for a in 0..na {
            let n = mdp.features.get(s, a).norm();
            if n > 1.0 + NORM_TOL {
                out.push(v(None, Some(s), Some(a), ViolationKind::FeatureNorm(n)));
            }
        }
    }
    let rho_sum: f64 = mdp.rho.iter().sum();
    if (rho_sum - 1.0).abs() > STOCHASTIC_TOL || mdp.rho.iter().any(|&p| p < 0.0) {
        out.push(v(None, None, None, ViolationKind::InitialDistribution(rho_sum)));
    }
    for h in 0..mdp.horizon {
        let tn = mdp.theta_star[h].norm();
        if tn > sqrt_d + NORM_TOL {
            out.push(v(Some(h), None, None, ViolationKind::RewardNorm(tn)));
        }
        let mn = mdp.mu[h].row_sum().norm();
        if mn > sqrt_d + NORM_TOL {
            out.push(v(Some(h), None, None, ViolationKind::MeasureNorm(mn)));
        }
        for s in 0..ns {
            for a in 0..na {
                let row = mdp.transition_row(h, s, a);
                if let Some(&p) = row.iter().find(|&&p| p < 0.0) {
                    out.push(v(Some(h), Some(s), Some(a), ViolationKind::NegativeTransition(p)));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > STOCHASTIC_TOL {
                    out.push(v(Some(h), Some(s), Some(a), ViolationKind::TransitionNotStochastic(sum)));
                }
            }
        }
    }
    out
}

pub(crate) fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Round-off: fall back to the last index with positive mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Rolls out one episode from `ρ` under `policy` and the true transitions.
pub fn sample_trajectory<R: Rng + ?Sized>(mdp: &LinearMdp, policy: &Policy, rng: &mut R) -> Trajectory {
    let component = match policy {
        Policy::Mixture(c) => &c[rng.random_range(0..c.len())],
        p => p,
    };
    let na = mdp.num_actions();
    let mut probs = vec![0.0; na];
    let mut states = Vec::with_capacity(mdp.horizon + 1);
    let mut actions = Vec::with_capacity(mdp.horizon);
    let mut s = sample_index(&mdp.rho, rng);
    for h in 0..mdp.horizon {
        component.action_distribution(&mdp.features, h, s, &mut probs);
        let a = sample_index(&probs, rng);
        states.push(s);
        actions.push(a);
        s = sample_index(mdp.transition_row(h, s, a), rng);
    }
    states.push(s);
    Trajectory { states, actions }
}

/// Result of exact backward induction.
#[derive(Debug, Clone)]
pub struct OptimalSolution {
    pub value: f64,
    pub policy: Policy,
    /// `values[h][s]`, with `values[H]` all zero.
    pub values: Vec<Vec<f64>>,
}

/// Exact optimum under `r_h(s,a) = φ(s,a)ᵀθ_h`; ties go to the lowest action.
pub fn backward_induction(mdp: &LinearMdp, theta: &DVector<f64>) -> OptimalSolution {
    let (ns, na, hz) = (mdp.num_states(), mdp.num_actions(), mdp.horizon);
    let mut values = vec![vec![0.0; ns]; hz + 1];
    let mut actions = vec![vec![0usize; ns]; hz];
    for h in (0..hz).rev() {
        let r = mdp.features.step_rewards(theta, h);
        for s in 0..ns {
            let mut best = f64::NEG_INFINITY;
            for a in 0..na {
                let cont: f64 = mdp.transition_row(h, s, a).iter().zip(&values[h + 1]).map(|(p, v)| p * v).sum();
                let q = r[s * na + a] + cont;
                if q > best {
                    best = q;
                    actions[h][s] = a;
                }
            }
            values[h][s] = best;
        }
    }
    let value = mdp.rho.iter().zip(&values[0]).map(|(p, v)| p * v).sum();
    OptimalSolution { value, policy: Policy::deterministic(na, &actions), values }
}

/// `(V*(θ), greedy policy)`.
pub fn optimal_value(mdp: &LinearMdp, theta: &DVector<f64>) -> (f64, Policy) {
    let sol = backward_induction(mdp, theta);
    (sol.value, sol.policy)
}

/// Exact policy evaluation by dynamic programming (mixtures average their components).
pub fn policy_value(mdp: &LinearMdp, policy: &Policy, theta: &DVector<f64>) -> f64 {
    let comps = policy.components();
    comps.iter().map(|c| markov_policy_value(mdp, c, theta)).sum::<f64>() / comps.len() as f64
}

fn markov_policy_value(mdp: &LinearMdp, policy: &Policy, theta: &DVector<f64>) -> f64 {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let mut next = vec![0.0; ns];
    let mut probs = vec![0.0; na];
    for h in (0..mdp.horizon).rev() {
        let r = mdp.features.step_rewards(theta, h);
        let mut cur = vec![0.0; ns];
        for (s, c) in cur.iter_mut().enumerate() {
            policy.action_distribution(&mdp.features, h, s, &mut probs);
            for (a, &pa) in probs.iter().enumerate() {
                if pa == 0.0 {
                    continue;
                }
                let cont: f64 = mdp.transition_row(h, s, a).iter().zip(&next).map(|(p, v)| p * v).sum();
                *c += pa * (r[s * na + a] + cont);
            }
        }
        next = cur;
    }
    mdp.rho.iter().zip(&next).map(|(p, v)| p * v).sum()
}

/// Exact occupancy by forward recursion (mixtures average their components).
pub fn occupancy_measure(mdp: &LinearMdp, policy: &Policy) -> OccupancyMeasure {
    let comps = policy.components();
    let mut acc = markov_occupancy(mdp, &comps[0]);
    for c in &comps[1..] {
        let o = markov_occupancy(mdp, c);
        for (qa, qb) in acc.q.iter_mut().zip(&o.q) {
            for (x, y) in qa.iter_mut().zip(qb) {
                *x += y;
            }
        }
    }
    let k = comps.len() as f64;
    if comps.len() > 1 {
        acc.q.iter_mut().flatten().for_each(|x| *x /= k);
    }
    acc
}

fn markov_occupancy(mdp: &LinearMdp, policy: &Policy) -> OccupancyMeasure {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let mut state_dist = mdp.rho.clone();
    let mut probs = vec![0.0; na];
    let mut q = Vec::with_capacity(mdp.horizon);
    for h in 0..mdp.horizon {
        let mut qh = vec![0.0; ns * na];
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            if state_dist[s] == 0.0 {
                continue;
            }
            policy.action_distribution(&mdp.features, h, s, &mut probs);
            for a in 0..na {
                let m = state_dist[s] * probs[a];
                qh[s * na + a] = m;
                if m != 0.0 {
                    for (n, p) in next.iter_mut().zip(mdp.transition_row(h, s, a)) {
                        *n += m * p;
                    }
                }
            }
        }
        q.push(qh);
        state_dist = next;
    }
    OccupancyMeasure { num_actions: na, q }
}

/// `Φᵀ q_h^π`.
pub fn expected_feature(mdp: &LinearMdp, policy: &Policy, step: usize) -> DVector<f64> {
    occupancy_measure(mdp, policy).expected_feature(&mdp.features, step)
}

/// `E_π[φ(τ)]`, the concatenation of per-step expected features.
pub fn expected_trajectory_feature(mdp: &LinearMdp, policy: &Policy) -> DVector<f64> {
    let occ = occupancy_measure(mdp, policy);
    let blocks: Vec<_> = (0..mdp.horizon).map(|h| occ.expected_feature(&mdp.features, h)).collect();
    flatten_blocks(&blocks)
}

/// How feature vectors are drawn by [`MdpGenerator`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    /// Points on the probability simplex (`Dirichlet(concentration)`).
    Simplex { concentration: f64 },
    /// One-hot per `(s, a)`; forces `d = S·A`.
    Tabular,
}

/// Random linear-MDP generator.
///
/// A row-stochastic transition kernel is built first as a mixture of `d`
/// latent next-state distributions weighted by the features, then `μ_h` is
/// recovered from `(Φ, P_h)` by least squares and the instance re-validated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpGenerator {
    pub states: usize,
    pub actions: usize,
    pub dim: usize,
    pub horizon: usize,
    pub features: FeatureKind,
    /// Dirichlet concentration of the latent next-state distributions.
    pub transition_concentration: f64,
}

impl MdpGenerator {
    pub fn new(states: usize, actions: usize, dim: usize, horizon: usize) -> Self {
        Self {
            states,
            actions,
            dim,
            horizon,
            features: FeatureKind::Simplex { concentration: 0.5 },
            transition_concentration: 0.5,
        }
    }

    pub fn tabular(states: usize, actions: usize, horizon: usize) -> Self {
        Self {
            states,
            actions,
            dim: states * actions,
            horizon,
            features: FeatureKind::Tabular,
            transition_concentration: 0.5,
        }
    }

    pub fn generate(&self, seed: u64) -> Result<LinearMdp> {
        if self.states == 0 || self.actions == 0 || self.horizon == 0 || self.dim == 0 {
            return Err(Error::InvalidArgument("generator sizes must be positive".into()));
        }
        if let FeatureKind::Simplex { .. } = self.features {
            if self.dim > self.states * self.actions {
                return Err(Error::InvalidArgument(format!(
                    "dim {} exceeds S*A = {}; features cannot have full column rank",
                    self.dim,
                    self.states * self.actions
                )));
            }
        }
        for attempt in 0..100u64 {
            let mut rng = seed::derived_rng(seed, &[seed::phase::GENERATOR, attempt]);
            if let Some(mdp) = self.try_generate(&mut rng)? {
                return Ok(mdp);
            }
        }
        Err(Error::InvalidMdp("generator failed to produce a valid instance in 100 attempts".into()))
    }

    fn try_generate(&self, rng: &mut StdRng) -> Result<Option<LinearMdp>> {
        let (ns, na, hz) = (self.states, self.actions, self.horizon);
        let features = match self.features {
            FeatureKind::Tabular => FeatureMap::tabular(ns, na),
            FeatureKind::Simplex { concentration } => {
                let rows = (0..ns * na).map(|_| DVector::from_vec(dirichlet(self.dim, concentration, rng))).collect();
                FeatureMap::new(ns, na, rows)?
            }
        };
        let d = features.dim();
        let phi = features.matrix();
        let pinv = match phi.clone().pseudo_inverse(1e-10) {
            Ok(p) => p,
            Err(_) => return Ok(None),
        };
        let mut mu = Vec::with_capacity(hz);
        let mut kernels = Vec::with_capacity(hz);
        for _ in 0..hz {
            // Latent next-state distributions ψ_k, one per feature coordinate.
            let rows: Vec<_> = (0..d)
                .map(|_| nalgebra::RowDVector::from_vec(dirichlet(ns, self.transition_concentration, rng)))
                .collect();
            let psi = DMatrix::from_rows(&rows);
            let p = &phi * &psi; // SA × S, row-stochastic
            let mu_t = &pinv * &p; // d × S
            mu.push(mu_t.transpose());
            kernels.push(p);
        }
        let theta = (0..hz)
            .map(|_| DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let rho = dirichlet(ns, 1.0, rng);
        let mdp = LinearMdp::new(hz, rho, features, mu, theta)?;
        // Least squares must reproduce P exactly and the instance must validate.
        for (h, p) in kernels.iter().enumerate() {
            for k in 0..ns * na {
                let row = mdp.transition_row(h, k / na, k % na);
                if row.iter().zip(p.row(k).iter()).any(|(a, b)| (a - b).abs() > 1e-9) {
                    return Ok(None);
                }
            }
        }
        if !validate(&mdp).is_empty() {
            return Ok(None);
        }
        Ok(Some(mdp))
    }
}

fn dirichlet<R: Rng + ?Sized>(n: usize, concentration: f64, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(concentration, 1.0).expect("positive concentration");
    loop {
        let mut v: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
        let total: f64 = v.iter().sum();
        if total > 0.0 && total.is_finite() {
            v.iter_mut().for_each(|x| *x /= total);
            return v;
        }
    }
}

/// Deterministic and random policy helpers used by experiments.
pub mod policies {
    use super::*;

    /// `π_h(·|s)` drawn uniformly from the simplex for each `(h, s)`.
    pub fn random_tabular(mdp: &LinearMdp, seed: u64) -> Policy {
        let mut rng = seed::rng_from_seed(seed);
        let (ns, na) = (mdp.num_states(), mdp.num_actions());
        let probs = (0..mdp.horizon())
            .map(|_| (0..ns).flat_map(|_| dirichlet(na, 1.0, &mut rng)).collect())
            .collect();
        Policy::Tabular(TabularPolicy { num_actions: na, probs })
    }

    /// Plays the optimal action for the true reward with probability `1 − explore`,
    /// otherwise uniform.
    pub fn epsilon_greedy(mdp: &LinearMdp, explore: f64) -> Policy {
        let sol = backward_induction(mdp, &mdp.theta_star_flat());
        mix_with_uniform(mdp, &sol.policy, explore)
    }

    /// `(1 − weight)·π + weight·uniform`, state by state.
    pub fn mix_with_uniform(mdp: &LinearMdp, policy: &Policy, weight: f64) -> Policy {
        let (ns, na) = (mdp.num_states(), mdp.num_actions());
        let mut buf = vec![0.0; na];
        let probs = (0..mdp.horizon())
            .map(|h| {
                let mut row = Vec::with_capacity(ns * na);
                for s in 0..ns {
                    policy.action_distribution(mdp.features(), h, s, &mut buf);
                    row.extend(buf.iter().map(|p| (1.0 - weight) * p + weight / na as f64));
                }
                row
            })
            .collect();
        Policy::Tabular(TabularPolicy { num_actions: na, probs })
    }
}
