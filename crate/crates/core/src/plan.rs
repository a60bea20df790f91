use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::CostMatrix;

/// Which solver produced a plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverTag {
    Exact,
    Entropic,
    UotEntropic,
    PotExact,
    PotEntropic,
}

/// A nonnegative coupling together with what the solver reported about it.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub coupling: Array2<f64>,
    pub total_mass: f64,
    /// Objective recorded at solve time: `<C, pi>` for OT/POT, the relaxed
    /// objective (cost plus marginal penalties) for UOT.
    pub objective: f64,
    pub solver: SolverTag,
    pub converged: bool,
    pub iterations: usize,
}

impl TransportPlan {
    pub(crate) fn new(coupling: Array2<f64>, objective: f64, solver: SolverTag) -> Self {
        let total_mass = coupling.sum();
        Self { coupling, total_mass, objective, solver, converged: true, iterations: 0 }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.coupling.dim()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.coupling.rows().into_iter().map(|r| r.sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        self.coupling.columns().into_iter().map(|c| c.sum()).collect()
    }

    /// Nonzero entries as `(i, j, mass)` triplets in row-major order.
    pub fn triplets(&self, threshold: f64) -> Vec<(usize, usize, f64)> {
        sparse_triplets(&self.coupling, threshold)
    }
}

pub(crate) fn sparse_triplets(m: &Array2<f64>, threshold: f64) -> Vec<(usize, usize, f64)> {
    m.indexed_iter()
        .filter(|(_, &v)| v > threshold)
        .map(|((i, j), &v)| (i, j, v))
        .collect()
}

/// Numerical controls shared by the entropic solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    pub epsilon: f64,
    /// L1 marginal violation (balanced) or sup-norm potential change (unbalanced) at which to stop.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self { epsilon: 0.01, tolerance: 1e-7, max_iterations: 10_000 }
    }
}

impl SolverParams {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self { epsilon, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::invalid("epsilon must be finite and nonnegative"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid("tolerance must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations must be at least 1"));
        }
        Ok(())
    }

    pub(crate) fn validate_entropic(&self) -> Result<()> {
        self.validate()?;
        if self.epsilon <= 0.0 {
            return Err(Error::invalid("entropic solvers need epsilon > 0"));
        }
        Ok(())
    }
}

/// `<C, pi>`.
pub fn plan_cost(plan: &TransportPlan, cost: &CostMatrix) -> Result<f64> {
    coupling_cost(&plan.coupling, cost)
}

pub(crate) fn coupling_cost(coupling: &Array2<f64>, cost: &CostMatrix) -> Result<f64> {
    if coupling.dim() != cost.shape() {
        return Err(Error::invalid(format!(
            "plan shape {:?} does not match cost shape {:?}",
            coupling.dim(),
            cost.shape()
        )));
    }
    Ok(coupling.iter().zip(cost.entries().iter()).map(|(p, c)| p * c).sum())
}

/// Validates a weight vector and returns its sum.
pub(crate) fn check_weights(w: &[f64], what: &str) -> Result<f64> {
    if w.is_empty() {
        return Err(Error::invalid(format!("{what} weights are empty")));
    }
    if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::invalid(format!("{what} weights must be finite and nonnegative")));
    }
    Ok(w.iter().sum())
}

pub(crate) fn check_shapes(a: &[f64], b: &[f64], cost: &CostMatrix) -> Result<()> {
    if cost.shape() != (a.len(), b.len()) {
        return Err(Error::invalid(format!(
            "cost shape {:?} does not match marginals ({}, {})",
            cost.shape(),
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn zero_plan_costs_nothing() {
        let c = CostMatrix::precomputed(Array2::from_elem((3, 3), 2.0)).unwrap();
        let p = TransportPlan::new(Array2::zeros((3, 3)), 0.0, SolverTag::Exact);
        assert_eq!(plan_cost(&p, &c).unwrap(), 0.0);
    }

    #[test]
    fn scaled_identity_against_ones() {
        let n = 4;
        let c = CostMatrix::precomputed(Array2::ones((n, n))).unwrap();
        let p = TransportPlan::new(Array2::eye(n) / n as f64, 0.0, SolverTag::Exact);
        assert!((plan_cost(&p, &c).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        let c = CostMatrix::precomputed(Array2::ones((2, 3))).unwrap();
        let p = TransportPlan::new(Array2::zeros((3, 2)), 0.0, SolverTag::Exact);
        assert!(plan_cost(&p, &c).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(SolverParams::default().validate_entropic().is_ok());
        assert!(SolverParams { tolerance: 0.0, ..Default::default() }.validate().is_err());
        assert!(SolverParams { max_iterations: 0, ..Default::default() }.validate().is_err());
        assert!(SolverParams::with_epsilon(0.0).validate_entropic().is_err());
    }
}
