//! Entropic unbalanced transport with KL-relaxed marginals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::CostMatrix;
use crate::plan::{check_shapes, check_weights, coupling_cost, SolverParams, SolverTag, TransportPlan};
use crate::sinkhorn::{scale, StopRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Divergence {
    #[default]
    Kl,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UotParams {
    /// Weight of the marginal penalties.
    pub tau: f64,
    pub entropic: SolverParams,
    #[serde(default)]
    pub divergence: Divergence,
}

impl UotParams {
    pub fn new(tau: f64, entropic: SolverParams) -> Self {
        Self { tau, entropic, divergence: Divergence::Kl }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::invalid(format!("tau {} must be positive", self.tau)));
        }
        self.entropic.validate_entropic()
    }
}

/// Generalized KL: `sum p log(p/q) - p + q`, with `0 log 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::invalid("vectors differ in length"));
    }
    if p.iter().any(|&x| !(x >= 0.0)) {
        return Err(Error::invalid("p must be nonnegative"));
    }
    if q.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::invalid("q must be positive"));
    }
    Ok(kl_terms(p, q))
}

/// Same as [`kl_divergence`] but tolerates `q_i = 0` when `p_i = 0`.
fn kl_terms(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| match (pi > 0.0, qi > 0.0) {
            (true, true) => pi * (pi / qi).ln() - pi + qi,
            (false, _) => qi,
            (true, false) => f64::INFINITY,
        })
        .sum()
}

/// `<C, pi> + tau KL(pi 1 | a) + tau KL(pi^T 1 | b)`.
pub fn uot_objective(plan: &ndarray::Array2<f64>, a: &[f64], b: &[f64], cost: &CostMatrix, tau: f64) -> Result<f64> {
    let transport = coupling_cost(plan, cost)?;
    let rows: Vec<f64> = plan.rows().into_iter().map(|r| r.sum()).collect();
    let cols: Vec<f64> = plan.columns().into_iter().map(|c| c.sum()).collect();
    Ok(transport + tau * kl_terms(&rows, a) + tau * kl_terms(&cols, b))
}

/// Entropic UOT. The entropy term is `eps KL(pi | a b^T)`; the recorded
/// objective excludes it.
pub fn solve_uot_entropic(a: &[f64], b: &[f64], cost: &CostMatrix, params: &UotParams) -> Result<TransportPlan> {
    check_shapes(a, b, cost)?;
    params.validate()?;
    check_weights(a, "source")?;
    check_weights(b, "target")?;
    let damping = params.tau / (params.tau + params.entropic.epsilon);
    let run = scale(a, b, cost.entries(), &params.entropic, damping, StopRule::PotentialChange);
    let objective = uot_objective(&run.coupling, a, b, cost, params.tau)?;
    let mut plan = TransportPlan::new(run.coupling, objective, SolverTag::UotEntropic);
    plan.converged = run.converged && objective.is_finite();
    plan.iterations = run.iterations;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{cost_between, Metric};
    use crate::sinkhorn::solve_ot_entropic;
    use ndarray::{array, Array2};

    fn five_by_five() -> CostMatrix {
        let x = array![[0.1, 0.9], [0.4, 0.2], [0.8, 0.5], [0.3, 0.6], [0.95, 0.05]];
        let y = array![[0.6, 0.7], [0.2, 0.1], [0.5, 0.45], [0.9, 0.9], [0.05, 0.35]];
        cost_between(&x, &y, Metric::Euclidean).unwrap()
    }

    #[test]
    fn kl_of_equal_vectors_is_zero() {
        let p = [0.2, 0.3, 0.5];
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn kl_from_zero_is_total_mass() {
        let q = [0.25, 0.25, 0.5];
        assert!((kl_divergence(&[0.0; 3], &q).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn kl_worked_value() {
        // 0.5 ln 2 + 0.5 ln(2/3) - 1 + 1
        let expect = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        let got = kl_divergence(&[0.5, 0.5], &[0.25, 0.75]).unwrap();
        assert!((got - expect).abs() < 1e-15);
        assert!((got - 0.143_841_036_225_890_1).abs() < 1e-12);
    }

    #[test]
    fn kl_rejects_bad_inputs() {
        assert!(kl_divergence(&[-0.1], &[1.0]).is_err());
        assert!(kl_divergence(&[0.1], &[0.0]).is_err());
    }

    #[test]
    fn beats_reference_plans() {
        let c = five_by_five();
        let w = [0.2; 5];
        let tau = 0.5;
        let p = solve_uot_entropic(&w, &w, &c, &UotParams::new(tau, SolverParams::default())).unwrap();
        assert!(p.converged);
        assert!(p.objective <= 2.0 * tau);
        let indep = Array2::from_elem((5, 5), 0.04);
        assert!(p.objective <= uot_objective(&indep, &w, &w, &c, tau).unwrap());
        assert!(p.coupling.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn large_tau_recovers_balanced() {
        let c = five_by_five();
        let w = [0.2; 5];
        let params = SolverParams { epsilon: 0.01, tolerance: 1e-9, max_iterations: 200_000 };
        let uot = solve_uot_entropic(&w, &w, &c, &UotParams::new(100.0, params)).unwrap();
        let ot = solve_ot_entropic(&w, &w, &c, &params).unwrap();
        let viol: f64 = uot.row_sums().iter().chain(uot.col_sums().iter()).map(|s| (s - 0.2).abs()).sum();
        assert!(viol <= 0.02, "violation {viol}");
        assert!((uot.objective - ot.objective).abs() <= 0.1);
    }

    #[test]
    fn bit_identical_reruns() {
        let c = five_by_five();
        let w = [0.2; 5];
        let params = UotParams::new(1.0, SolverParams::default());
        let p1 = solve_uot_entropic(&w, &w, &c, &params).unwrap();
        let p2 = solve_uot_entropic(&w, &w, &c, &params).unwrap();
        assert_eq!(p1, p2);
    }
}
