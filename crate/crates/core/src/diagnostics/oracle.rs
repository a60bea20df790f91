//! Exhaustive oracle for small transport problems.
//!
//! When every weight and the fraction `s` are multiples of `1/q`, some
//! optimal plan of the (partial) transport problem has all entries in
//! multiples of `1/q`, because vertices of a transportation polytope with
//! integer margins are integral. Enumerating every such integral flow
//! therefore finds the true optimum without relying on any LP machinery.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::measure::CostMatrix;
use crate::plan::{check_shapes, check_weights, coupling_cost, SolverTag, TransportPlan};

pub const MAX_CELLS: usize = 36;
const GRID_TOL: f64 = 1e-9;

fn as_units(x: f64, q: usize) -> Option<usize> {
    let scaled = x * q as f64;
    let r = scaled.round();
    ((scaled - r).abs() <= GRID_TOL * q as f64 && r >= 0.0).then_some(r as usize)
}

/// Smallest `q <= cap` putting every value on the `1/q` grid.
pub fn common_denominator(values: &[f64], cap: usize) -> Option<usize> {
    (1..=cap).find(|&q| values.iter().all(|&x| as_units(x, q).is_some()))
}

struct Search {
    cells: Vec<(usize, usize, f64)>,
    row_cap: Vec<usize>,
    col_cap: Vec<usize>,
    flow: Vec<usize>,
    best_cost: f64,
    best: Option<Vec<usize>>,
    cost_scale: f64,
}

impl Search {
    fn run(&mut self, at: usize, remaining: usize, cost: f64) {
        if remaining == 0 {
            if self.best.is_none() || cost < self.best_cost {
                self.best_cost = cost;
                self.best = Some(self.flow.clone());
            }
            return;
        }
        if at == self.cells.len() {
            return;
        }
        let (i, j, c) = self.cells[at];
        // cells are sorted by cost, so c is the cheapest any remaining unit can go
        let bound = cost + remaining as f64 * c;
        if self.best.is_some() && bound >= self.best_cost - 1e-15 * self.cost_scale {
            return;
        }
        let top = remaining.min(self.row_cap[i]).min(self.col_cap[j]);
        for x in (0..=top).rev() {
            self.row_cap[i] -= x;
            self.col_cap[j] -= x;
            self.flow[at] = x;
            self.run(at + 1, remaining - x, cost + x as f64 * c);
            self.row_cap[i] += x;
            self.col_cap[j] += x;
        }
        self.flow[at] = 0;
    }
}

/// Minimum-cost plan in `Pi_s(a, b)` (or `Pi(a, b)` when `s = 1` and the
/// weights sum to one) found by exhaustive search over `1/q`-grid flows.
pub fn brute_force_plan(
    a: &[f64],
    b: &[f64],
    cost: &CostMatrix,
    fraction: f64,
    denominator_cap: usize,
) -> Result<TransportPlan> {
    check_shapes(a, b, cost)?;
    check_weights(a, "source")?;
    check_weights(b, "target")?;
    let (n, m) = cost.shape();
    if n * m > MAX_CELLS {
        return Err(Error::Unsupported(format!("{n}x{m} exceeds {MAX_CELLS} cells")));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("fraction {fraction} outside (0, 1]")));
    }
    let mut values: Vec<f64> = a.iter().chain(b).copied().collect();
    values.push(fraction);
    let q = common_denominator(&values, denominator_cap)
        .ok_or_else(|| Error::Unsupported(format!("weights are not multiples of 1/q for any q <= {denominator_cap}")))?;
    let units = |x: f64| as_units(x, q).expect("checked above");

    let total = units(fraction);
    let row_cap: Vec<usize> = a.iter().map(|&x| units(x)).collect();
    let col_cap: Vec<usize> = b.iter().map(|&x| units(x)).collect();
    if total > row_cap.iter().sum() || total > col_cap.iter().sum() {
        return Err(Error::invalid("fraction exceeds the available mass"));
    }

    let mut cells: Vec<(usize, usize, f64)> =
        cost.entries().indexed_iter().map(|((i, j), &c)| (i, j, c)).collect();
    cells.sort_by(|x, y| x.2.total_cmp(&y.2).then((x.0, x.1).cmp(&(y.0, y.1))));
    let scale = cost.max().max(1.0);
    let mut search = Search {
        flow: vec![0; cells.len()],
        cells,
        row_cap,
        col_cap,
        best_cost: f64::INFINITY,
        best: None,
        cost_scale: scale,
    };
    search.run(0, total, 0.0);
    let best = search.best.ok_or_else(|| Error::SolverFailure("no feasible integral flow".into()))?;

    let mut coupling = Array2::zeros((n, m));
    for (&(i, j, _), &x) in search.cells.iter().zip(&best) {
        coupling[[i, j]] = x as f64 / q as f64;
    }
    let objective = coupling_cost(&coupling, cost)?;
    let tag = if (fraction - 1.0).abs() < GRID_TOL { SolverTag::Exact } else { SolverTag::PotExact };
    Ok(TransportPlan::new(coupling, objective, tag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn single_cell() {
        let c = CostMatrix::precomputed(array![[3.0]]).unwrap();
        let p = brute_force_plan(&[1.0], &[1.0], &c, 1.0, 12).unwrap();
        assert_eq!(p.coupling, array![[1.0]]);
    }

    #[test]
    fn denominators() {
        assert_eq!(common_denominator(&[0.5, 0.25], 12), Some(4));
        assert_eq!(common_denominator(&[1.0 / 3.0, 2.0 / 3.0], 12), Some(3));
        assert_eq!(common_denominator(&[0.1, 0.9], 6), None);
    }

    #[test]
    fn off_grid_is_unsupported() {
        let c = CostMatrix::precomputed(Array2::ones((2, 2))).unwrap();
        let w = [1.0 / std::f64::consts::PI, 1.0 - 1.0 / std::f64::consts::PI];
        assert!(matches!(brute_force_plan(&w, &w, &c, 1.0, 12), Err(Error::Unsupported(_))));
    }

    #[test]
    fn too_many_cells() {
        let c = CostMatrix::precomputed(Array2::ones((7, 6))).unwrap();
        let a = [1.0 / 7.0; 7];
        let b = [1.0 / 6.0; 6];
        assert!(matches!(brute_force_plan(&a, &b, &c, 1.0, 42), Err(Error::Unsupported(_))));
    }

    #[test]
    fn partial_picks_cheapest_cells() {
        let c = CostMatrix::precomputed(array![[5.0, 1.0], [2.0, 9.0]]).unwrap();
        let w = [0.5, 0.5];
        let p = brute_force_plan(&w, &w, &c, 0.5, 12).unwrap();
        assert_eq!(p.coupling, array![[0.0, 0.5], [0.0, 0.0]]);
        assert_eq!(p.objective, 0.5);
    }
}
