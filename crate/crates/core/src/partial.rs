//! Partial optimal transport through the dummy-point reduction.
//!
//! Transporting only a fraction `s` of the mass is the same as a balanced
//! problem where each side gains one extra support of mass `1 - s`. Moving
//! mass to or from a dummy is free; dummy-to-dummy costs `A > 0`. Stripping
//! the dummy row and column off the optimal extended plan gives the partial
//! plan.

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::transportation_simplex;
use crate::measure::CostMatrix;
use crate::plan::{check_shapes, check_weights, coupling_cost, SolverParams, SolverTag, TransportPlan};
use crate::sinkhorn::{scale, StopRule};

const PROB_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartialParams {
    /// Fraction `s` of the mass to transport, in `(0, 1]`.
    pub fraction: f64,
    /// Dummy-to-dummy cost. `None` picks 1.0 for the exact solver and
    /// `max(C) + 1` for the entropic one.
    pub dummy_cost: Option<f64>,
    pub entropic: Option<SolverParams>,
}

impl PartialParams {
    pub fn exact(fraction: f64) -> Self {
        Self { fraction, dummy_cost: None, entropic: None }
    }

    pub fn entropic(fraction: f64, params: SolverParams) -> Self {
        Self { fraction, dummy_cost: None, entropic: Some(params) }
    }

    pub fn with_dummy_cost(mut self, a: f64) -> Self {
        self.dummy_cost = Some(a);
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_fraction(self.fraction)?;
        if let Some(a) = self.dummy_cost {
            check_dummy(a)?;
        }
        if let Some(p) = &self.entropic {
            p.validate_entropic()?;
        }
        Ok(())
    }
}

fn check_fraction(s: f64) -> Result<()> {
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::invalid(format!("fraction {s} outside (0, 1]")));
    }
    Ok(())
}

fn check_dummy(a: f64) -> Result<()> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::invalid(format!("dummy cost {a} must be positive")));
    }
    Ok(())
}

fn check_probabilities(a: &[f64], b: &[f64], cost: &CostMatrix) -> Result<()> {
    check_shapes(a, b, cost)?;
    let sa = check_weights(a, "source")?;
    let sb = check_weights(b, "target")?;
    if (sa - 1.0).abs() > PROB_TOL || (sb - 1.0).abs() > PROB_TOL {
        return Err(Error::invalid(format!("partial transport needs probability weights, got {sa} and {sb}")));
    }
    Ok(())
}

/// The extended balanced problem: `([a, 1-s], [b, 1-s], [[C, 0], [0, A]])`.
pub fn extend_with_dummy(
    a: &[f64],
    b: &[f64],
    cost: &CostMatrix,
    fraction: f64,
    dummy_cost: f64,
) -> Result<(Vec<f64>, Vec<f64>, CostMatrix)> {
    check_fraction(fraction)?;
    check_dummy(dummy_cost)?;
    check_probabilities(a, b, cost)?;
    let (n, m) = cost.shape();
    let rest = 1.0 - fraction;
    let mut ea = a.to_vec();
    ea.push(rest);
    let mut eb = b.to_vec();
    eb.push(rest);
    let mut ec = Array2::zeros((n + 1, m + 1));
    ec.slice_mut(s![..n, ..m]).assign(cost.entries());
    ec[[n, m]] = dummy_cost;
    Ok((ea, eb, CostMatrix::precomputed(ec)?))
}

fn strip(extended: &Array2<f64>) -> Array2<f64> {
    let (n1, m1) = extended.dim();
    extended.slice(s![..n1 - 1, ..m1 - 1]).to_owned()
}

pub fn solve_pot_exact(a: &[f64], b: &[f64], cost: &CostMatrix, params: &PartialParams) -> Result<TransportPlan> {
    params.validate()?;
    let dummy = params.dummy_cost.unwrap_or(1.0);
    let (ea, eb, ec) = extend_with_dummy(a, b, cost, params.fraction, dummy)?;
    let (flow, pivots) = transportation_simplex(&ea, &eb, ec.entries())?;
    let coupling = strip(&flow);
    let objective = coupling_cost(&coupling, cost)?;
    let mut plan = TransportPlan::new(coupling, objective, SolverTag::PotExact);
    plan.iterations = pivots;
    Ok(plan)
}

pub fn solve_pot_entropic(a: &[f64], b: &[f64], cost: &CostMatrix, params: &PartialParams) -> Result<TransportPlan> {
    params.validate()?;
    let Some(sp) = params.entropic else {
        return Err(Error::invalid("entropic partial transport needs solver parameters"));
    };
    let dummy = params.dummy_cost.unwrap_or(cost.max() + 1.0);
    let (ea, eb, ec) = extend_with_dummy(a, b, cost, params.fraction, dummy)?;
    let run = scale(&ea, &eb, ec.entries(), &sp, 1.0, StopRule::MarginalL1);
    let mut coupling = strip(&run.coupling);
    let mass = coupling.sum();
    let mut converged = run.converged;
    if (mass - params.fraction).abs() <= sp.tolerance && mass > 0.0 {
        coupling *= params.fraction / mass;
    } else {
        converged = false;
    }
    let objective = coupling_cost(&coupling, cost)?;
    let mut plan = TransportPlan::new(coupling, objective, SolverTag::PotEntropic);
    plan.converged = converged;
    plan.iterations = run.iterations;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::solve_ot_exact;
    use crate::measure::{build_cost, cost_between, DiscreteMeasure, Metric};
    use ndarray::array;

    fn example_batch() -> CostMatrix {
        let x = DiscreteMeasure::uniform(array![[0.0, 1.0], [0.0, 2.0], [0.0, 3.0]]).unwrap();
        let y = DiscreteMeasure::uniform(array![[1.0, 3.0], [1.0, 4.0], [1.0, 5.0]]).unwrap();
        build_cost(&x, &y, Metric::Euclidean).unwrap()
    }

    fn five_by_five() -> CostMatrix {
        let x = array![[0.1, 0.9], [0.4, 0.2], [0.8, 0.5], [0.3, 0.6], [0.95, 0.05]];
        let y = array![[0.6, 0.7], [0.2, 0.1], [0.5, 0.45], [0.9, 0.9], [0.05, 0.35]];
        cost_between(&x, &y, Metric::Euclidean).unwrap()
    }

    #[test]
    fn full_fraction_puts_no_mass_on_dummy() {
        let c = CostMatrix::precomputed(Array2::ones((2, 2))).unwrap();
        let (ea, eb, _) = extend_with_dummy(&[0.5, 0.5], &[0.5, 0.5], &c, 1.0, 1.0).unwrap();
        assert_eq!(ea, vec![0.5, 0.5, 0.0]);
        assert_eq!(eb, vec![0.5, 0.5, 0.0]);
    }

    #[test]
    fn half_fraction_extension() {
        let c = CostMatrix::precomputed(array![[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let (ea, _, ec) = extend_with_dummy(&[0.5, 0.5], &[0.5, 0.5], &c, 0.5, 7.0).unwrap();
        assert_eq!(ea, vec![0.5, 0.5, 0.5]);
        assert!((ea.iter().sum::<f64>() - 1.5).abs() < 1e-15);
        assert_eq!(ec.entries(), &array![[1.0, 2.0, 0.0], [3.0, 4.0, 0.0], [0.0, 0.0, 7.0]]);
    }

    #[test]
    fn example_batch_extension_has_corner() {
        let w = [1.0 / 3.0; 3];
        let (ea, eb, ec) = extend_with_dummy(&w, &w, &example_batch(), 2.0 / 3.0, 1.0).unwrap();
        for x in ea.iter().chain(eb.iter()) {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(ec.shape(), (4, 4));
        assert_eq!(ec.entries()[[3, 3]], 1.0);
        assert_eq!(ec.entries()[[3, 0]], 0.0);
    }

    #[test]
    fn rejects_bad_fraction() {
        let c = example_batch();
        let w = [1.0 / 3.0; 3];
        for s in [0.0, -0.1, 1.1, f64::NAN] {
            assert!(matches!(extend_with_dummy(&w, &w, &c, s, 1.0), Err(Error::InvalidInput(_))));
        }
    }

    #[test]
    fn one_third_moves_the_cheapest_pair() {
        // cheapest pair is (0,3)-(1,3) at sqrt(1)=1
        let w = [1.0 / 3.0; 3];
        let p = solve_pot_exact(&w, &w, &example_batch(), &PartialParams::exact(1.0 / 3.0)).unwrap();
        assert!((p.coupling[[2, 0]] - 1.0 / 3.0).abs() < 1e-12);
        assert!((p.total_mass - 1.0 / 3.0).abs() < 1e-12);
        assert!((p.objective - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn full_fraction_matches_balanced() {
        let c = five_by_five();
        let w = [0.2; 5];
        let ot = solve_ot_exact(&w, &w, &c).unwrap();
        let pot = solve_pot_exact(&w, &w, &c, &PartialParams::exact(1.0)).unwrap();
        assert!((ot.objective - pot.objective).abs() < 1e-9);
    }

    #[test]
    fn entropic_close_to_exact() {
        let c = five_by_five();
        let w = [0.2; 5];
        let exact = solve_pot_exact(&w, &w, &c, &PartialParams::exact(0.5)).unwrap();
        let ent = solve_pot_entropic(&w, &w, &c, &PartialParams::entropic(0.5, SolverParams::with_epsilon(0.01))).unwrap();
        assert!(ent.converged);
        assert!((ent.total_mass - 0.5).abs() < 1e-7);
        assert!((ent.objective - exact.objective).abs() <= 0.05);
    }

    #[test]
    fn entropic_needs_params() {
        let c = five_by_five();
        let w = [0.2; 5];
        assert!(solve_pot_entropic(&w, &w, &c, &PartialParams::exact(0.5)).is_err());
    }
}
