//! Coverage constants of a configured instance and the suboptimality bounds
//! they imply, with every hidden constant and log factor set to one.

use nalgebra::DMatrix;
use robust_rlhf::mdp;
use robust_rlhf::preference::coverage_diagnostics;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InstanceShape {
    pub states: usize,
    pub actions: usize,
    pub dim: usize,
    pub horizon: usize,
}

/// Bound values at one corruption level. `None` marks an infinite value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundRow {
    pub epsilon: f64,
    /// `(H³ + √(Hd)) ε / ξ`.
    pub uniform: Option<f64>,
    /// Same with the row-space coverage in place of `ξ`.
    pub uniform_row_space: Option<f64>,
    /// `H² d κ √(αε) + H^{5/4} d^{3/4} (αε)^{1/4}`.
    pub condition_number: Option<f64>,
    /// `ν κ √ε H² d^{3/2}`.
    pub first_order: f64,
    /// `H^{3/2} d⁵ / ε³`.
    pub condition_number_calls: Option<f64>,
    /// `1 / (εν)`.
    pub first_order_calls: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub instance: InstanceShape,
    pub xi: f64,
    pub xi_row_space: f64,
    /// `None` when the target pair leaves the behavior row space.
    pub alpha: Option<f64>,
    pub nu: f64,
    pub kappa: f64,
    pub exact: bool,
    pub standard_error: f64,
    pub sigma_diff: Vec<Vec<f64>>,
    pub sigma_avg: Vec<Vec<f64>>,
    pub bounds: Vec<BoundRow>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn uniform_bound(h: f64, d: f64, xi: f64, eps: f64) -> Option<f64> {
    if eps == 0.0 {
        return Some(0.0);
    }
    (xi > 0.0).then(|| (h.powi(3) + (h * d).sqrt()) * eps / xi)
}

pub fn bound_row(shape: InstanceShape, xi: f64, xi_row_space: f64, alpha: f64, nu: f64, kappa: f64, eps: f64) -> BoundRow {
    let (h, d) = (shape.horizon as f64, shape.dim as f64);
    let ae = alpha * eps;
    let condition_number = if eps == 0.0 {
        Some(0.0)
    } else {
        finite(h * h * d * kappa * ae.sqrt() + h.powf(1.25) * d.powf(0.75) * ae.powf(0.25))
    };
    BoundRow {
        epsilon: eps,
        uniform: uniform_bound(h, d, xi, eps),
        uniform_row_space: uniform_bound(h, d, xi_row_space, eps),
        condition_number,
        first_order: nu * kappa * eps.sqrt() * h * h * d.powf(1.5),
        condition_number_calls: finite(h.powf(1.5) * d.powi(5) / eps.powi(3)),
        first_order_calls: finite(1.0 / (eps * nu)),
    }
}

/// Diagnostics for the behavior pair against the optimal policy.
pub fn diagnose(cfg: &ExperimentConfig) -> Result<DiagnosticsReport> {
    let m = cfg.mdp.build()?;
    let mu0 = cfg.behavior.mu0.build(&m);
    let mu1 = cfg.behavior.mu1.build(&m);
    let (_, target) = mdp::optimal_value(&m, &m.theta_star_flat());
    let diag = coverage_diagnostics(&m, &mu0, &mu1, &target, &cfg.diagnostics);
    let shape = InstanceShape { states: m.num_states(), actions: m.num_actions(), dim: m.dim(), horizon: m.horizon() };
    let bounds = cfg
        .epsilon_grid
        .iter()
        .map(|&e| bound_row(shape, diag.xi, diag.xi_row_space, diag.alpha, diag.nu, diag.kappa, e))
        .collect();
    Ok(DiagnosticsReport {
        instance: shape,
        xi: diag.xi,
        xi_row_space: diag.xi_row_space,
        alpha: finite(diag.alpha),
        nu: diag.nu,
        kappa: diag.kappa,
        exact: diag.exact,
        standard_error: diag.standard_error,
        sigma_diff: rows(&diag.sigma_diff),
        sigma_avg: rows(&diag.sigma_avg),
        bounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SHAPE: InstanceShape = InstanceShape { states: 4, actions: 2, dim: 3, horizon: 2 };

    #[test]
    fn zero_corruption_bounds_vanish() {
        let row = bound_row(SHAPE, 0.0, 0.2, 2.0, 5.0, 4.0, 0.0);
        assert_eq!(row.uniform, Some(0.0));
        assert_eq!(row.condition_number, Some(0.0));
        assert_eq!(row.first_order, 0.0);
        assert_eq!(row.first_order_calls, None);
    }

    #[test]
    fn degenerate_constants_are_reported_as_infinite() {
        let row = bound_row(SHAPE, 0.0, 0.2, f64::INFINITY, 5.0, 4.0, 0.1);
        assert_eq!(row.uniform, None);
        assert_eq!(row.condition_number, None);
        let expected = (8.0 + 6f64.sqrt()) * 0.1 / 0.2;
        assert!((row.uniform_row_space.unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn first_order_formula() {
        let row = bound_row(SHAPE, 0.1, 0.1, 1.0, 2.0, 4.0, 0.04);
        assert!((row.first_order - 2.0 * 4.0 * 0.2 * 4.0 * 27f64.sqrt()).abs() < 1e-12);
        assert!((row.first_order_calls.unwrap() - 12.5).abs() < 1e-12);
        assert!((row.condition_number_calls.unwrap() - 8f64.sqrt() * 243.0 / 0.04f64.powi(3)).abs() < 1e-6);
    }
}
