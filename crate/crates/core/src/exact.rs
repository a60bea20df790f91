//! Exact balanced optimal transport.
//!
//! The general path is the transportation simplex: a least-cost starting
//! basis, duals from the spanning tree of basic cells, and Dantzig pricing
//! (most negative reduced cost). A long run of degenerate pivots switches to
//! Bland's rule (first improving cell in row-major order, lowest-index leaving
//! cell) until the objective strictly decreases again, so degenerate
//! instances cannot cycle. Uniform square problems are assignment problems and
//! go through a shortest-augmenting-path Hungarian solver instead, which
//! returns a permutation vertex of the same polytope.

use std::collections::VecDeque;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::measure::{build_cost, CostMatrix, DiscreteMeasure, Metric};
use crate::plan::{check_shapes, check_weights, coupling_cost, SolverTag, TransportPlan};

pub(crate) const MASS_TOL: f64 = 1e-9;

pub fn solve_ot_exact(a: &[f64], b: &[f64], cost: &CostMatrix) -> Result<TransportPlan> {
    check_shapes(a, b, cost)?;
    let sa = check_weights(a, "source")?;
    let sb = check_weights(b, "target")?;
    if (sa - sb).abs() > MASS_TOL {
        return Err(Error::invalid(format!("marginal masses differ: {sa} vs {sb}")));
    }
    let (coupling, pivots) = if is_uniform_square(a, b) {
        (assignment_plan(a[0], cost.entries()), 0)
    } else {
        transportation_simplex(a, b, cost.entries())?
    };
    let objective = coupling_cost(&coupling, cost)?;
    let mut plan = TransportPlan::new(coupling, objective, SolverTag::Exact);
    plan.iterations = pivots;
    Ok(plan)
}

/// Always uses the transportation simplex, even on assignment-shaped inputs.
pub fn solve_ot_simplex(a: &[f64], b: &[f64], cost: &CostMatrix) -> Result<TransportPlan> {
    check_shapes(a, b, cost)?;
    let sa = check_weights(a, "source")?;
    let sb = check_weights(b, "target")?;
    if (sa - sb).abs() > MASS_TOL {
        return Err(Error::invalid(format!("marginal masses differ: {sa} vs {sb}")));
    }
    let (coupling, pivots) = transportation_simplex(a, b, cost.entries())?;
    let objective = coupling_cost(&coupling, cost)?;
    let mut plan = TransportPlan::new(coupling, objective, SolverTag::Exact);
    plan.iterations = pivots;
    Ok(plan)
}

/// Wasserstein-2 distance: square root of the exact OT cost under squared
/// Euclidean ground cost.
pub fn wasserstein2(source: &DiscreteMeasure, target: &DiscreteMeasure) -> Result<f64> {
    let (ms, mt) = (source.total_mass(), target.total_mass());
    if (ms - mt).abs() > MASS_TOL {
        return Err(Error::invalid(format!("total masses differ: {ms} vs {mt}")));
    }
    let cost = build_cost(source, target, Metric::SquaredEuclidean)?;
    let a = source.weights().to_vec();
    let b = target.weights().to_vec();
    let plan = solve_ot_exact(&a, &b, &cost)?;
    Ok(plan.objective.max(0.0).sqrt())
}

fn is_uniform_square(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.len() > 1 && a[0] > 0.0 && a.iter().chain(b).all(|&w| w == a[0])
}

struct Basis {
    n: usize,
    m: usize,
    flow: Array2<f64>,
    basic: Array2<bool>,
    row_adj: Vec<Vec<usize>>,
    col_adj: Vec<Vec<usize>>,
}

impl Basis {
    fn insert(&mut self, i: usize, j: usize, x: f64) {
        self.basic[[i, j]] = true;
        self.flow[[i, j]] = x;
        self.row_adj[i].push(j);
        self.col_adj[j].push(i);
    }

    fn remove(&mut self, i: usize, j: usize) {
        self.basic[[i, j]] = false;
        self.flow[[i, j]] = 0.0;
        self.row_adj[i].retain(|&c| c != j);
        self.col_adj[j].retain(|&r| r != i);
    }

    fn empty(n: usize, m: usize) -> Self {
        Basis {
            n,
            m,
            flow: Array2::zeros((n, m)),
            basic: Array2::from_elem((n, m), false),
            row_adj: vec![Vec::new(); n],
            col_adj: vec![Vec::new(); m],
        }
    }

    /// Least-cost start: one pass over the cells in ascending cost order,
    /// each allocation retiring exactly one line (the last one retires both),
    /// which leaves `n + m - 1` basic cells forming a spanning tree.
    fn least_cost(a: &[f64], b: &[f64], cost: &Array2<f64>) -> Self {
        let (n, m) = (a.len(), b.len());
        let mut basis = Basis::empty(n, m);
        let mut order: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
        order.sort_by(|x, y| cost[*x].total_cmp(&cost[*y]).then(x.cmp(y)));
        let mut ra = a.to_vec();
        let mut rb = b.to_vec();
        let mut row_alive = vec![true; n];
        let mut col_alive = vec![true; m];
        let (mut rows_left, mut cols_left) = (n, m);
        for (i, j) in order {
            if !row_alive[i] || !col_alive[j] {
                continue;
            }
            let x = ra[i].min(rb[j]).max(0.0);
            basis.insert(i, j, x);
            ra[i] -= x;
            rb[j] -= x;
            if rows_left == 1 && cols_left == 1 {
                break;
            }
            let retire_row = if rows_left == 1 {
                false
            } else if cols_left == 1 {
                true
            } else {
                ra[i] <= rb[j]
            };
            if retire_row {
                row_alive[i] = false;
                rows_left -= 1;
            } else {
                col_alive[j] = false;
                cols_left -= 1;
            }
        }
        basis
    }

    /// Node ids: rows are `0..n`, columns are `n..n+m`.
    fn duals(&self, cost: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
        let (n, m) = (self.n, self.m);
        let mut u = vec![f64::NAN; n];
        let mut v = vec![f64::NAN; m];
        u[0] = 0.0;
        let mut queue = VecDeque::from([0usize]);
        while let Some(node) = queue.pop_front() {
            if node < n {
                for &j in &self.row_adj[node] {
                    if v[j].is_nan() {
                        v[j] = cost[[node, j]] - u[node];
                        queue.push_back(n + j);
                    }
                }
            } else {
                let j = node - n;
                for &i in &self.col_adj[j] {
                    if u[i].is_nan() {
                        u[i] = cost[[i, j]] - v[j];
                        queue.push_back(i);
                    }
                }
            }
        }
        (u, v)
    }

    /// Basic cells on the tree path from row `p` to column `q`, listed
    /// starting from the end adjacent to row `p`.
    fn path(&self, p: usize, q: usize) -> Vec<(usize, usize)> {
        let (n, m) = (self.n, self.m);
        let mut parent = vec![usize::MAX; n + m];
        let start = n + q;
        parent[start] = start;
        let mut queue = VecDeque::from([start]);
        while let Some(node) = queue.pop_front() {
            if node == p {
                break;
            }
            if node < n {
                for &j in &self.row_adj[node] {
                    if parent[n + j] == usize::MAX {
                        parent[n + j] = node;
                        queue.push_back(n + j);
                    }
                }
            } else {
                for &i in &self.col_adj[node - n] {
                    if parent[i] == usize::MAX {
                        parent[i] = node;
                        queue.push_back(i);
                    }
                }
            }
        }
        let mut cells = Vec::new();
        let mut node = p;
        while node != start {
            let prev = parent[node];
            let cell = if node < n { (node, prev - n) } else { (prev, node - n) };
            cells.push(cell);
            node = prev;
        }
        cells
    }
}

/// Returns the optimal flow and the number of pivots performed.
pub(crate) fn transportation_simplex(a: &[f64], b: &[f64], cost: &Array2<f64>) -> Result<(Array2<f64>, usize)> {
    let (n, m) = (a.len(), b.len());
    let scale = cost.iter().fold(0.0f64, |acc, c| acc.max(c.abs()));
    let rc_tol = 1e-11 * scale;
    let mass = a.iter().sum::<f64>().max(f64::MIN_POSITIVE);
    let tie_tol = 1e-14 * mass;
    let max_pivots = 10_000usize.max(50 * n * m);

    let degenerate_limit = n + m;

    let mut basis = Basis::least_cost(a, b, cost);
    let mut pivots = 0;
    let mut degenerate_run = 0;
    loop {
        let (u, v) = basis.duals(cost);
        let reduced = |i: usize, j: usize| cost[[i, j]] - u[i] - v[j];
        let entering = if degenerate_run < degenerate_limit {
            // Dantzig: most negative reduced cost, first in row-major order on ties
            let mut best = None;
            let mut best_rc = -rc_tol;
            for i in 0..n {
                for j in 0..m {
                    if !basis.basic[[i, j]] {
                        let rc = reduced(i, j);
                        if rc < best_rc {
                            best_rc = rc;
                            best = Some((i, j));
                        }
                    }
                }
            }
            best
        } else {
            // Bland: first improving cell in row-major order
            (0..n).find_map(|i| (0..m).find(|&j| !basis.basic[[i, j]] && reduced(i, j) < -rc_tol).map(|j| (i, j)))
        };
        let Some((p, q)) = entering else { break };
        if pivots == max_pivots {
            return Err(Error::SolverFailure(format!(
                "transportation simplex exceeded {max_pivots} pivots"
            )));
        }
        pivots += 1;

        let path = basis.path(p, q);
        debug_assert!(path.len() % 2 == 1);
        let theta = path.iter().step_by(2).map(|&(i, j)| basis.flow[[i, j]]).fold(f64::INFINITY, f64::min);
        let leaving = path
            .iter()
            .step_by(2)
            .filter(|&&(i, j)| basis.flow[[i, j]] <= theta + tie_tol)
            .min_by_key(|&&(i, j)| i * m + j)
            .copied()
            .expect("cycle has a decreasing cell");
        if theta > tie_tol {
            degenerate_run = 0;
        } else {
            degenerate_run += 1;
        }
        for (k, &(i, j)) in path.iter().enumerate() {
            let f = &mut basis.flow[[i, j]];
            if k % 2 == 0 {
                *f = (*f - theta).max(0.0);
            } else {
                *f += theta;
            }
        }
        basis.remove(leaving.0, leaving.1);
        basis.insert(p, q, theta);
    }
    Ok((basis.flow, pivots))
}

/// Uniform `n x n` problem: the optimal vertex is a scaled permutation.
fn assignment_plan(weight: f64, cost: &Array2<f64>) -> Array2<f64> {
    let n = cost.nrows();
    let perm = hungarian(cost);
    let mut plan = Array2::zeros((n, n));
    for (i, &j) in perm.iter().enumerate() {
        plan[[i, j]] = weight;
    }
    plan
}

/// Shortest augmenting path with potentials; returns the column assigned to each row.
pub(crate) fn hungarian(cost: &Array2<f64>) -> Vec<usize> {
    let n = cost.nrows();
    let m = cost.ncols();
    assert!(n <= m);
    // 1-based bookkeeping, column 0 is the virtual start
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut minv = vec![0.0f64; m + 1];
    let mut used = vec![false; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|x| *x = f64::INFINITY);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let row = cost.row(i0 - 1);
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = row[j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=m {
        if owner[j] != 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    assignment
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn example_batch() -> CostMatrix {
        let x = DiscreteMeasure::uniform(array![[0.0, 1.0], [0.0, 2.0], [0.0, 3.0]]).unwrap();
        let y = DiscreteMeasure::uniform(array![[1.0, 3.0], [1.0, 4.0], [1.0, 5.0]]).unwrap();
        build_cost(&x, &y, Metric::Euclidean).unwrap()
    }

    #[test]
    fn single_support() {
        let c = CostMatrix::precomputed(array![[2.5]]).unwrap();
        let p = solve_ot_exact(&[1.0], &[1.0], &c).unwrap();
        assert_eq!(p.coupling, array![[1.0]]);
        assert_eq!(p.objective, 2.5);
    }

    #[test]
    fn example_batch_is_monotone_matching() {
        let c = example_batch();
        let w = [1.0 / 3.0; 3];
        for plan in [solve_ot_exact(&w, &w, &c).unwrap(), solve_ot_simplex(&w, &w, &c).unwrap()] {
            for i in 0..3 {
                for j in 0..3 {
                    let expect = if i == j { 1.0 / 3.0 } else { 0.0 };
                    assert!((plan.coupling[[i, j]] - expect).abs() < 1e-12, "{i},{j}");
                }
            }
            assert!((plan.objective - 5f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn sum_mismatch_is_invalid() {
        let c = CostMatrix::precomputed(Array2::ones((2, 2))).unwrap();
        let err = solve_ot_exact(&[0.5, 0.5], &[0.5, 0.4], &c).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn zero_weight_rows_get_zero_mass() {
        let c = CostMatrix::precomputed(array![[1.0, 2.0, 0.5], [0.1, 3.0, 2.0], [1.0, 1.0, 1.0]]).unwrap();
        let a = [0.5, 0.0, 0.5];
        let b = [0.0, 0.6, 0.4];
        let p = solve_ot_exact(&a, &b, &c).unwrap();
        assert!(p.coupling.row(1).iter().all(|&x| x == 0.0));
        assert!(p.coupling.column(0).iter().all(|&x| x == 0.0));
        let rs = p.row_sums();
        let cs = p.col_sums();
        for i in 0..3 {
            assert!((rs[i] - a[i]).abs() < 1e-12);
            assert!((cs[i] - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_equal_partial_sums() {
        // rows and columns exhaust simultaneously while building the start
        let c = CostMatrix::precomputed(array![[4.0, 1.0, 3.0], [2.0, 5.0, 1.0], [3.0, 2.0, 6.0]]).unwrap();
        let w = [1.0 / 3.0; 3];
        let p = solve_ot_simplex(&w, &w, &c).unwrap();
        let h = solve_ot_exact(&w, &w, &c).unwrap();
        assert!((p.objective - h.objective).abs() < 1e-12);
        assert!((p.objective - 5.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn highly_degenerate_assignment_matches_hungarian() {
        // every vertex of a uniform square problem is massively degenerate
        let n = 40;
        let c = CostMatrix::precomputed(Array2::from_shape_fn((n, n), |(i, j)| ((i * 7 + j * 13) % 17) as f64)).unwrap();
        let w = vec![1.0 / n as f64; n];
        let p = solve_ot_simplex(&w, &w, &c).unwrap();
        let h = solve_ot_exact(&w, &w, &c).unwrap();
        assert!((p.objective - h.objective).abs() < 1e-12);
    }

    #[test]
    fn w2_trivial_cases() {
        let x = DiscreteMeasure::uniform(array![[0.0, 0.0], [1.0, 2.0], [3.0, -1.0]]).unwrap();
        assert_eq!(wasserstein2(&x, &x).unwrap(), 0.0);
        let p = DiscreteMeasure::uniform(array![[1.0, 1.0]]).unwrap();
        let q = DiscreteMeasure::uniform(array![[4.0, 5.0]]).unwrap();
        assert!((wasserstein2(&p, &q).unwrap() - 5.0).abs() < 1e-12);
        let half = DiscreteMeasure::new(array![[0.0, 0.0]], array![0.5]).unwrap();
        assert!(wasserstein2(&p, &half).is_err());
    }

    #[test]
    fn hungarian_small() {
        let c = array![[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]];
        assert_eq!(hungarian(&c), vec![1, 0, 2]);
    }
}
