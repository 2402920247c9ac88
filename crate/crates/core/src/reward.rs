//! Reward estimation from preferences: likelihood, trimmed MLE and the
//! likelihood confidence set with Euclidean projection.

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preference::{link_sigmoid, log_sigmoid, ComparisonMatrix};

/// Per-point `ln σ(oₙ θᵀxₙ)`.
pub fn pointwise_log_likelihood(theta: &DVector<f64>, data: &ComparisonMatrix) -> DVector<f64> {
    let m = &data.diffs * theta;
    m.zip_map(&data.labels, |m, o| log_sigmoid(o * m))
}

/// Mean log-likelihood over `data`.
pub fn log_likelihood(theta: &DVector<f64>, data: &ComparisonMatrix) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    pointwise_log_likelihood(theta, data).sum() / data.len() as f64
}

/// Gradient of [`log_likelihood`]: mean of `oₙ xₙ / (1 + exp(oₙ θᵀxₙ))`.
pub fn log_likelihood_grad(theta: &DVector<f64>, data: &ComparisonMatrix) -> DVector<f64> {
    if data.is_empty() {
        return DVector::zeros(theta.len());
    }
    let w = pointwise_weights(theta, data);
    data.diffs.tr_mul(&w) / data.len() as f64
}

fn pointwise_weights(theta: &DVector<f64>, data: &ComparisonMatrix) -> DVector<f64> {
    let m = &data.diffs * theta;
    m.zip_map(&data.labels, |m, o| o * link_sigmoid(-o * m))
}

/// Hessian of [`log_likelihood`] (negative semidefinite).
pub fn log_likelihood_hessian(theta: &DVector<f64>, data: &ComparisonMatrix) -> DMatrix<f64> {
    let m = &data.diffs * theta;
    let mut scaled = data.diffs.clone();
    for (i, &mi) in m.iter().enumerate() {
        let s = link_sigmoid(mi);
        scaled.row_mut(i).scale_mut(s * (1.0 - s));
    }
    -(data.diffs.tr_mul(&scaled)) / data.len().max(1) as f64
}

pub fn project_to_ball(theta: &DVector<f64>, radius: f64) -> DVector<f64> {
    let n = theta.norm();
    if n > radius {
        theta * (radius / n)
    } else {
        theta.clone()
    }
}

/// Settings for the inner concave maximisation over the ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AscentConfig {
    /// Stop once the gradient mapping norm falls below this.
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for AscentConfig {
    fn default() -> Self {
        Self { tolerance: 1e-8, max_iters: 20_000 }
    }
}

/// Maximises the mean log-likelihood over `‖θ‖ ≤ radius` by projected
/// gradient ascent (Barzilai–Borwein trial steps, Armijo backtracking).
/// The objective never decreases from `init`.
pub fn maximize_over_ball(data: &ComparisonMatrix, init: &DVector<f64>, radius: f64, cfg: &AscentConfig) -> DVector<f64> {
    let mut theta = project_to_ball(init, radius);
    let mut f = log_likelihood(&theta, data);
    let mut g = log_likelihood_grad(&theta, data);
    let mut step = 1.0;
    for _ in 0..cfg.max_iters {
        if (project_to_ball(&(&theta + &g), radius) - &theta).norm() <= cfg.tolerance {
            break;
        }
        let mut s = step;
        let (next, f_next) = loop {
            let cand = project_to_ball(&(&theta + &g * s), radius);
            let fc = log_likelihood(&cand, data);
            if fc >= f + 1e-4 * g.dot(&(&cand - &theta)) || s < 1e-14 {
                break (cand, fc);
            }
            s *= 0.5;
        };
        if f_next < f {
            // Only reachable through round-off at the very bottom of the search.
            break;
        }
        let g_next = log_likelihood_grad(&next, data);
        let ds = &next - &theta;
        let dg = &g_next - &g;
        let curvature = -ds.dot(&dg);
        step = if curvature > 0.0 { (ds.norm_squared() / curvature).clamp(1e-6, 1e6) } else { 1.0 };
        let moved = ds.norm();
        theta = next;
        f = f_next;
        g = g_next;
        if moved == 0.0 {
            break;
        }
    }
    theta
}

/// Plain (untrimmed) MLE over the ball, started at zero.
pub fn fit_mle(data: &ComparisonMatrix, radius: f64, cfg: &AscentConfig) -> DVector<f64> {
    maximize_over_ball(data, &DVector::zeros(data.param_dim()), radius, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrimmedMleConfig {
    pub epsilon: f64,
    /// Progress threshold; `None` means `max(ε², 1e-10)`.
    pub eta_slack: Option<f64>,
    /// `None` means `√(Hd)`, i.e. the square root of the parameter dimension.
    pub ball_radius: Option<f64>,
    pub max_outer_iters: usize,
    pub inner: AscentConfig,
}

impl TrimmedMleConfig {
    pub fn new(epsilon: f64) -> Self {
        Self { epsilon, eta_slack: None, ball_radius: None, max_outer_iters: 100, inner: AscentConfig::default() }
    }

    pub fn eta(&self) -> f64 {
        self.eta_slack.unwrap_or((self.epsilon * self.epsilon).max(1e-10))
    }

    pub fn radius(&self, param_dim: usize) -> f64 {
        self.ball_radius.unwrap_or((param_dim as f64).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardEstimate {
    pub theta_hat: DVector<f64>,
    /// Sorted indices of the kept points.
    pub selected_subset: Vec<usize>,
    /// `(1/N) Σ_{n∈Ŝ} ln P_θ̂(oₙ|xₙ)`.
    pub log_likelihood: f64,
    /// Gradient mapping norm of the subset objective at `θ̂`.
    pub gradient_mapping_norm: f64,
    /// Trimmed objective after each subset selection; nondecreasing.
    pub history: Vec<f64>,
    pub outer_iterations: usize,
    pub converged: bool,
}

/// `⌈(1 − ε) N⌉`, guarded against round-off.
pub fn trimmed_size(epsilon: f64, n: usize) -> usize {
    (((1.0 - epsilon) * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Indices of the `k` points with the highest log-likelihood, ties by lower index; returned sorted.
pub fn top_subset(theta: &DVector<f64>, data: &ComparisonMatrix, k: usize) -> Vec<usize> {
    let ll = pointwise_log_likelihood(theta, data);
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.sort_by(|&a, &b| ll[b].total_cmp(&ll[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

fn subset_objective(theta: &DVector<f64>, data: &ComparisonMatrix, subset: &[usize]) -> f64 {
    let ll = pointwise_log_likelihood(theta, data);
    subset.iter().map(|&i| ll[i]).sum::<f64>() / data.len() as f64
}

/// Alternating trimmed maximum likelihood: pick the best-fitting
/// `⌈(1 − ε)N⌉` points, refit on them, repeat until the refit raises the
/// summed subset log-likelihood by at most `η`, then return the iterate
/// before the last refit.
pub fn trimmed_mle(data: &ComparisonMatrix, config: &TrimmedMleConfig) -> Result<RewardEstimate> {
    let n = data.len();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    if !(0.0..0.5).contains(&config.epsilon) {
        return Err(Error::CorruptionTooLarge { epsilon: config.epsilon });
    }
    let radius = config.radius(data.param_dim());
    let eta = config.eta();
    let k = trimmed_size(config.epsilon, n);

    let mut theta = DVector::zeros(data.param_dim());
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut subset = top_subset(&theta, data, k);
    for t in 0..config.max_outer_iters {
        iterations = t + 1;
        let current = subset_objective(&theta, data, &subset);
        history.push(current);
        let sub = data.select(&subset);
        let next = maximize_over_ball(&sub, &theta, radius, &config.inner);
        // The threshold applies to the summed, not the averaged, likelihood.
        if (subset_objective(&next, data, &subset) - current) * n as f64 <= eta {
            converged = true;
            break;
        }
        theta = next;
        subset = top_subset(&theta, data, k);
    }
    if !converged {
        warn!("trimmed MLE stopped after {iterations} outer iterations without meeting the progress threshold");
    }
    let sub = data.select(&subset);
    let g = log_likelihood_grad(&theta, &sub);
    let gm = (project_to_ball(&(&theta + &g), radius) - &theta).norm();
    Ok(RewardEstimate {
        log_likelihood: subset_objective(&theta, data, &subset),
        theta_hat: theta,
        selected_subset: subset,
        gradient_mapping_norm: gm,
        history,
        outer_iterations: iterations,
        converged,
    })
}

/// `(1/N) Σ_{n∈Ŝ} ∇ ln P_θ̂(oₙ|xₙ)ᵀ (θ_ref − θ̂) / ‖θ_ref − θ̂‖` with `Ŝ`
/// the top `⌈(1 − ε)N⌉` points under `θ̂`.
pub fn stationarity_gap(theta_hat: &DVector<f64>, data: &ComparisonMatrix, epsilon: f64, theta_ref: &DVector<f64>) -> f64 {
    let dir = theta_ref - theta_hat;
    let norm = dir.norm();
    if norm == 0.0 {
        return 0.0;
    }
    let subset = top_subset(theta_hat, data, trimmed_size(epsilon, data.len()));
    let w = pointwise_weights(theta_hat, data);
    let proj = &data.diffs * dir;
    subset.iter().map(|&i| w[i] * proj[i]).sum::<f64>() / (data.len() as f64 * norm)
}

/// `6εH√d + 2 (d/N) ln(HN/δ)`.
pub fn confidence_zeta(epsilon: f64, horizon: usize, dim: usize, n: usize, delta: f64) -> f64 {
    let (h, d, nf) = (horizon as f64, dim as f64, n as f64);
    6.0 * epsilon * h * d.sqrt() + 2.0 * (d / nf) * (h * nf / delta).ln()
}

/// `{θ : ‖θ‖ ≤ R, mean ll(θ) − mean ll(θ̂) ≥ −ζ}` over the held data.
#[derive(Debug, Clone)]
pub struct ConfidenceSet {
    pub theta_hat: DVector<f64>,
    pub zeta: f64,
    pub radius: f64,
    data: ComparisonMatrix,
    center_loglik: f64,
}

/// Projection result with the multipliers certifying optimality.
#[derive(Debug, Clone)]
pub struct Projection {
    pub point: DVector<f64>,
    /// Multiplier of the likelihood constraint.
    pub likelihood_multiplier: f64,
    /// Multiplier of the ball constraint.
    pub ball_multiplier: f64,
    /// Largest of stationarity, feasibility and complementarity residuals.
    pub kkt_residual: f64,
}

impl ConfidenceSet {
    pub fn new(theta_hat: DVector<f64>, zeta: f64, radius: f64, data: ComparisonMatrix) -> Result<Self> {
        if zeta.is_nan() || zeta < 0.0 || radius.is_nan() || radius <= 0.0 {
            return Err(Error::InvalidArgument("confidence set needs zeta >= 0 and radius > 0".into()));
        }
        if theta_hat.len() != data.param_dim() {
            return Err(Error::InvalidArgument("center and data dimensions differ".into()));
        }
        let center_loglik = log_likelihood(&theta_hat, &data);
        Ok(Self { theta_hat, zeta, radius, data, center_loglik })
    }

    /// `mean ll(θ) − mean ll(θ̂) + ζ`; nonnegative inside the likelihood constraint.
    pub fn constraint(&self, theta: &DVector<f64>) -> f64 {
        log_likelihood(theta, &self.data) - self.center_loglik + self.zeta
    }

    pub fn contains(&self, theta: &DVector<f64>) -> bool {
        theta.norm() <= self.radius * (1.0 + 1e-12) && self.constraint(theta) >= 0.0
    }

    pub fn data(&self) -> &ComparisonMatrix {
        &self.data
    }

    pub fn project(&self, theta: &DVector<f64>) -> DVector<f64> {
        self.project_with_certificate(theta).point
    }

    /// Euclidean projection by bracketing the likelihood multiplier; the
    /// inner problem for a fixed multiplier is solved by projected Newton.
    pub fn project_with_certificate(&self, theta: &DVector<f64>) -> Projection {
        if self.contains(theta) {
            return Projection { point: theta.clone(), likelihood_multiplier: 0.0, ball_multiplier: 0.0, kkt_residual: 0.0 };
        }
        let radial = project_to_ball(theta, self.radius);
        if self.constraint(&radial) >= 0.0 {
            let mu = (theta.norm() / self.radius - 1.0).max(0.0);
            return Projection { point: radial, likelihood_multiplier: 0.0, ball_multiplier: mu, kkt_residual: 0.0 };
        }

        let mut warm = radial.clone();
        let mut lo = 0.0;
        let mut h_lo = self.constraint(&radial);
        let mut hi = 1.0;
        let mut z_hi = self.inner_solve(theta, hi, &warm);
        let mut h_hi = self.constraint(&z_hi);
        while h_hi < 0.0 {
            lo = hi;
            h_lo = h_hi;
            warm = z_hi;
            hi *= 4.0;
            assert!(hi < 1e15, "likelihood constraint cannot be satisfied; the center must be a member");
            z_hi = self.inner_solve(theta, hi, &warm);
            h_hi = self.constraint(&z_hi);
        }
        // Illinois regula falsi on h(λ) = g(z(λ)), nondecreasing in λ.
        let mut side = 0i8;
        for _ in 0..200 {
            if h_hi <= 1e-13 || hi - lo <= 1e-13 * hi {
                break;
            }
            let lam = (lo * h_hi - hi * h_lo) / (h_hi - h_lo);
            let lam = if lam > lo && lam < hi { lam } else { 0.5 * (lo + hi) };
            let z = self.inner_solve(theta, lam, &z_hi);
            let h = self.constraint(&z);
            if h >= 0.0 {
                hi = lam;
                h_hi = h;
                z_hi = z;
                if side == 1 {
                    h_lo *= 0.5;
                }
                side = 1;
            } else {
                lo = lam;
                h_lo = h;
                if side == -1 {
                    h_hi *= 0.5;
                }
                side = -1;
            }
        }
        // Restore the true h_hi if Illinois halved it.
        let h_final = self.constraint(&z_hi);
        let grad = log_likelihood_grad(&z_hi, &self.data);
        let r = &z_hi - theta - &grad * hi;
        let norm = z_hi.norm();
        let on_sphere = norm >= self.radius * (1.0 - 1e-9);
        let mu = if on_sphere { (-z_hi.dot(&r) / (norm * norm)).max(0.0) } else { 0.0 };
        let stationarity = (&r + &z_hi * mu).norm();
        let kkt = stationarity
            .max((hi * h_final).abs())
            .max((mu * (norm - self.radius)).abs())
            .max((norm - self.radius).max(0.0))
            .max((-h_final).max(0.0));
        Projection { point: z_hi, likelihood_multiplier: hi, ball_multiplier: mu, kkt_residual: kkt }
    }

    /// `argmin_{‖z‖≤R} ½‖z − θ‖² − λ·ll(z)`.
    fn inner_solve(&self, theta: &DVector<f64>, lambda: f64, warm: &DVector<f64>) -> DVector<f64> {
        let objective = |z: &DVector<f64>| 0.5 * (z - theta).norm_squared() - lambda * log_likelihood(z, &self.data);
        let mut z = project_to_ball(warm, self.radius);
        let mut fz = objective(&z);
        let dim = z.len();
        for _ in 0..100 {
            let grad = &z - theta - log_likelihood_grad(&z, &self.data) * lambda;
            let hess = DMatrix::identity(dim, dim) - log_likelihood_hessian(&z, &self.data) * lambda;
            let cand = ball_constrained_newton(&hess, &z, &grad, self.radius);
            let dir = &cand - &z;
            let slope = grad.dot(&dir);
            if dir.norm() <= 1e-13 * (1.0 + z.norm()) || slope >= 0.0 {
                break;
            }
            let mut t = 1.0;
            let mut accepted = false;
            while t > 1e-12 {
                let trial = &z + &dir * t;
                let ft = objective(&trial);
                if ft <= fz + 1e-4 * t * slope {
                    z = trial;
                    fz = ft;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        z
    }
}

/// Minimises the quadratic model `gᵀ(y − z) + ½(y − z)ᵀH(y − z)` over `‖y‖ ≤ R`
/// for positive definite `H`.
fn ball_constrained_newton(hess: &DMatrix<f64>, z: &DVector<f64>, grad: &DVector<f64>, radius: f64) -> DVector<f64> {
    let eig = SymmetricEigen::new(hess.clone());
    let rhs = hess * z - grad;
    let coords = eig.eigenvectors.tr_mul(&rhs);
    let solve = |shift: f64| {
        let scaled = DVector::from_iterator(coords.len(), coords.iter().zip(eig.eigenvalues.iter()).map(|(c, e)| c / (e + shift)));
        &eig.eigenvectors * scaled
    };
    let free = solve(0.0);
    if free.norm() <= radius {
        return free;
    }
    let mut lo = 0.0;
    let mut hi = coords.norm() / radius;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if solve(mid).norm() > radius {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.max(1.0) {
            break;
        }
    }
    project_to_ball(&solve(hi), radius)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn synthetic(n: usize, dim: usize, seed: u64, theta: &DVector<f64>) -> ComparisonMatrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let diffs = DMatrix::from_fn(n, dim, |_, _| rng.random_range(-1.0..1.0));
        let labels = DVector::from_iterator(
            n,
            (0..n).map(|i| {
                let p = link_sigmoid(diffs.row(i).dot(&theta.transpose()));
                if rng.random::<f64>() < p {
                    1.0
                } else {
                    -1.0
                }
            }),
        );
        ComparisonMatrix { diffs, labels }
    }

    #[test]
    fn zero_parameter_gives_log_half() {
        let data = synthetic(10, 3, 0, &DVector::zeros(3));
        assert!((log_likelihood(&DVector::zeros(3), &data) - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = synthetic(50, 4, 1, &DVector::from_vec(vec![1.0, -0.5, 0.3, 0.0]));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let theta = DVector::from_fn(4, |_, _| rng.random_range(-2.0..2.0));
            let g = log_likelihood_grad(&theta, &data);
            for k in 0..4 {
                let mut e = DVector::zeros(4);
                e[k] = 1e-5;
                let fd = (log_likelihood(&(&theta + &e), &data) - log_likelihood(&(&theta - &e), &data)) / 2e-5;
                assert!((fd - g[k]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn saturation_approaches_zero_from_below() {
        let data = ComparisonMatrix { diffs: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), labels: DVector::from_vec(vec![1.0]) };
        let mut last = f64::NEG_INFINITY;
        for t in [1.0, 10.0, 40.0] {
            let v = log_likelihood(&DVector::from_vec(vec![t, 0.0]), &data);
            assert!(v < 0.0 && v > last);
            last = v;
        }
    }

    #[test]
    fn identical_points_push_to_boundary() {
        let x = [0.6, 0.8, 0.0];
        let diffs = DMatrix::from_fn(5, 3, |_, j| x[j]);
        let data = ComparisonMatrix { diffs, labels: DVector::from_element(5, -1.0) };
        let est = trimmed_mle(&data, &TrimmedMleConfig::new(0.0)).unwrap();
        let r = 3f64.sqrt();
        let expect = DVector::from_vec(vec![-0.6 * r, -0.8 * r, 0.0]);
        assert!((&est.theta_hat - expect).norm() < 1e-6, "{}", est.theta_hat);
    }

    #[test]
    fn history_is_monotone_and_subset_sized() {
        let truth = DVector::from_vec(vec![1.0, -1.0, 0.5]);
        let mut data = synthetic(400, 3, 3, &truth);
        for i in 0..40 {
            data.labels[i] = -data.labels[i];
        }
        let est = trimmed_mle(&data, &TrimmedMleConfig::new(0.1)).unwrap();
        assert_eq!(est.selected_subset.len(), 360);
        for w in est.history.windows(2) {
            assert!(w[1] >= w[0] - 1e-12);
        }
        assert!(est.theta_hat.norm() <= 3f64.sqrt() + 1e-12);
    }

    #[test]
    fn stationarity_is_linear_in_direction() {
        let truth = DVector::from_vec(vec![0.4, 0.2]);
        let data = synthetic(100, 2, 5, &truth);
        let th = DVector::from_vec(vec![0.1, 0.1]);
        let a = DVector::from_vec(vec![1.0, 0.0]);
        let b = &th * 2.0 - &a;
        assert!((stationarity_gap(&th, &data, 0.0, &a) + stationarity_gap(&th, &data, 0.0, &b)).abs() < 1e-14);
        let mle = fit_mle(&data, 10.0, &AscentConfig::default());
        assert!(stationarity_gap(&mle, &data, 0.0, &a).abs() < 1e-6);
    }

    #[test]
    fn zeta_formula() {
        let z = confidence_zeta(0.1, 2, 3, 100, 0.1);
        assert!((z - 2.5345).abs() < 1e-3, "{z}");
        let first = |e| confidence_zeta(e, 2, 3, 100, 0.1) - confidence_zeta(0.0, 2, 3, 100, 0.1);
        assert!((first(0.2) - 2.0 * first(0.1)).abs() < 1e-12);
        assert!(confidence_zeta(0.0, 2, 3, 100_000_000, 0.1) < 1e-5);
    }

    fn small_set() -> ConfidenceSet {
        let truth = DVector::from_vec(vec![1.0, -0.5, 0.2]);
        let data = synthetic(300, 3, 7, &truth);
        let est = trimmed_mle(&data, &TrimmedMleConfig::new(0.0)).unwrap();
        ConfidenceSet::new(est.theta_hat, 0.02, 3f64.sqrt(), data).unwrap()
    }

    #[test]
    fn membership_basics() {
        let set = small_set();
        assert!(set.contains(&set.theta_hat));
        let far = DVector::from_vec(vec![2.0 * 3f64.sqrt(), 0.0, 0.0]);
        assert!(!set.contains(&far));
    }

    #[test]
    fn projection_is_optimal_and_idempotent() {
        let set = small_set();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let x = DVector::from_fn(3, |_, _| rng.random_range(-3.0..3.0));
            let p = set.project_with_certificate(&x);
            assert!(set.contains(&p.point));
            assert!(p.kkt_residual <= 1e-5, "kkt {}", p.kkt_residual);
            assert!((set.project(&p.point) - &p.point).norm() < 1e-8);
            let best = (&p.point - &x).norm();
            let mut found = 0;
            while found < 200 {
                let y = DVector::from_fn(3, |_, _| rng.random_range(-1.8..1.8));
                if set.contains(&y) {
                    found += 1;
                    assert!(best <= (&y - &x).norm() + 1e-6);
                }
            }
        }
    }

    #[test]
    fn radial_projection_when_likelihood_slack() {
        let data = synthetic(50, 2, 1, &DVector::zeros(2));
        let set = ConfidenceSet::new(DVector::zeros(2), 100.0, 1.0, data).unwrap();
        let x = DVector::from_vec(vec![3.0, 4.0]);
        assert!((set.project(&x) - DVector::from_vec(vec![0.6, 0.8])).norm() < 1e-12);
    }
}
