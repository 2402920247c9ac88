use nalgebra::DVector;

use super::{OracleDiagnostics, OracleResult, RobustOracle};
use crate::error::Result;
use crate::mdp::{self, LinearMdp};
use crate::seed::StdRng;

/// Exact planner with full model access; the subgradient is the expected
/// trajectory feature of the greedy optimal policy.
#[derive(Debug, Clone)]
pub struct ExactOracle {
    mdp: LinearMdp,
}

impl ExactOracle {
    pub fn new(mdp: LinearMdp) -> Self {
        Self { mdp }
    }
}

impl RobustOracle for ExactOracle {
    fn name(&self) -> &'static str {
        "exact"
    }

    fn is_first_order(&self) -> bool {
        true
    }

    fn solve(&self, theta: &DVector<f64>, _rng: &mut StdRng) -> Result<OracleResult> {
        let (value, policy) = mdp::optimal_value(&self.mdp, theta);
        let subgradient = mdp::expected_trajectory_feature(&self.mdp, &policy);
        Ok(OracleResult { policy, value_estimate: value, subgradient: Some(subgradient), diagnostics: OracleDiagnostics::default() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::MdpGenerator;
    use crate::seed::rng_from_seed;
    use rand::Rng;

    #[test]
    fn zero_reward_subgradient_is_greedy_feature() {
        let m = MdpGenerator::new(4, 2, 3, 2).generate(0).unwrap();
        let r = ExactOracle::new(m.clone()).solve(&DVector::zeros(6), &mut rng_from_seed(0)).unwrap();
        assert_eq!(r.value_estimate, 0.0);
        let (_, greedy) = mdp::optimal_value(&m, &DVector::zeros(6));
        assert_eq!(r.subgradient.unwrap(), mdp::expected_trajectory_feature(&m, &greedy));
    }

    #[test]
    fn subgradient_inequality() {
        let m = MdpGenerator::new(5, 3, 4, 3).generate(1).unwrap();
        let oracle = ExactOracle::new(m.clone());
        let mut rng = rng_from_seed(3);
        let theta = m.theta_star_flat();
        let r = oracle.solve(&theta, &mut rng).unwrap();
        assert_eq!(r.value_estimate, mdp::optimal_value(&m, &theta).0);
        let g = r.subgradient.unwrap();
        for _ in 0..100 {
            let other = DVector::from_fn(12, |_, _| rng.random_range(-1.0..1.0));
            let lhs = mdp::optimal_value(&m, &other).0;
            assert!(lhs >= r.value_estimate + g.dot(&(&other - &theta)) - 1e-9);
        }
    }
}
