//! Log-domain Sinkhorn scaling.
//!
//! Plans are parameterised by dual potentials `f`, `g`:
//! `pi_ij = a_i b_j exp((f_i + g_j - C_ij) / eps)`, and every update is a
//! soft-min over a row or column, so nothing is ever exponentiated outside a
//! log-sum-exp. The same sweep serves the unbalanced solver: a KL marginal
//! penalty with weight `tau` only damps each update by `tau / (tau + eps)`.

use ndarray::Array2;

use crate::error::Result;
use crate::measure::CostMatrix;
use crate::plan::{check_shapes, check_weights, coupling_cost, SolverParams, SolverTag, TransportPlan};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum StopRule {
    /// Summed L1 violation of both marginals.
    MarginalL1,
    /// Sup-norm change of both potentials over one sweep.
    PotentialChange,
}

pub(crate) struct Scaling {
    pub coupling: Array2<f64>,
    pub converged: bool,
    pub iterations: usize,
}

fn log_weights(w: &[f64]) -> Vec<f64> {
    w.iter().map(|&x| if x > 0.0 { x.ln() } else { f64::NEG_INFINITY }).collect()
}

/// `-eps * log sum_k exp(log_w_k + (pot_k - c_k) / eps)`, skipping zero-weight supports.
#[inline]
fn softmin(eps: f64, terms: impl Iterator<Item = (f64, f64, f64)> + Clone) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for (lw, pot, c) in terms.clone() {
        if lw > f64::NEG_INFINITY {
            max = max.max(lw + (pot - c) / eps);
        }
    }
    if max == f64::NEG_INFINITY {
        return 0.0;
    }
    let mut acc = 0.0;
    for (lw, pot, c) in terms {
        if lw > f64::NEG_INFINITY {
            acc += (lw + (pot - c) / eps - max).exp();
        }
    }
    -eps * (max + acc.ln())
}

const RELAX_WINDOW: usize = 20;
const RELAX_PROBE: usize = 200;
const MAX_RELAXATION: f64 = 1.99;
const RELAX_GROWTH: f64 = 1e3;

/// One row then column update; returns the sup-norm change of the potentials.
#[allow(clippy::too_many_arguments)]
fn sweep(la: &[f64], lb: &[f64], cost: &Array2<f64>, eps: f64, damping: f64, omega: f64, f: &mut [f64], g: &mut [f64]) -> f64 {
    let (n, m) = cost.dim();
    let mut delta: f64 = 0.0;
    for i in 0..n {
        if la[i] == f64::NEG_INFINITY {
            continue;
        }
        let row = cost.row(i);
        let new = (1.0 - omega) * f[i] + omega * damping * softmin(eps, (0..m).map(|j| (lb[j], g[j], row[j])));
        delta = delta.max((new - f[i]).abs());
        f[i] = new;
    }
    for j in 0..m {
        if lb[j] == f64::NEG_INFINITY {
            continue;
        }
        let col = cost.column(j);
        let new = (1.0 - omega) * g[j] + omega * damping * softmin(eps, (0..n).map(|i| (la[i], f[i], col[i])));
        delta = delta.max((new - g[j]).abs());
        g[j] = new;
    }
    delta
}

pub(crate) fn scale(
    a: &[f64],
    b: &[f64],
    cost: &Array2<f64>,
    params: &SolverParams,
    damping: f64,
    stop: StopRule,
) -> Scaling {
    let (n, m) = cost.dim();
    let eps = params.epsilon;
    let la = log_weights(a);
    let lb = log_weights(b);
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];

    let plan_of = |f: &[f64], g: &[f64]| {
        let mut p = Array2::zeros((n, m));
        for i in 0..n {
            if la[i] == f64::NEG_INFINITY {
                continue;
            }
            for j in 0..m {
                if lb[j] > f64::NEG_INFINITY {
                    p[[i, j]] = (la[i] + lb[j] + (f[i] + g[j] - cost[[i, j]]) / eps).exp();
                }
            }
        }
        p
    };

    // Over-relaxed sweeps (balanced case only). The plain sweep's linear
    // rate `r` is measured over a window and the relaxation set to the SOR
    // optimum `2 / (1 + sqrt(1 - r))`. Over-relaxation has a transient bump,
    // so only a blow-up (or a non-finite value) counts as failure: the last
    // window snapshot is restored and plain sweeps are used from then on.
    let relax = damping >= 1.0;
    let mut omega = 1.0;
    let mut locked = !relax;
    let mut snapshot = (f.clone(), g.clone());
    let mut window_start_delta = 0.0;
    let mut reference_delta = f64::INFINITY;

    let mut converged = false;
    let mut iterations = 0;
    while iterations < params.max_iterations {
        iterations += 1;
        let delta = sweep(&la, &lb, cost, eps, damping, omega, &mut f, &mut g);
        if !locked && iterations % RELAX_WINDOW == 0 {
            if omega > 1.0 && !(delta < RELAX_GROWTH * reference_delta) {
                f.clone_from(&snapshot.0);
                g.clone_from(&snapshot.1);
                omega = 1.0;
                locked = true;
                continue;
            }
            if iterations == RELAX_PROBE / 2 {
                window_start_delta = delta;
            }
            if omega == 1.0 && iterations == RELAX_PROBE && window_start_delta > 0.0 {
                let rate = (delta / window_start_delta).powf(2.0 / RELAX_PROBE as f64);
                if rate < 1.0 {
                    omega = (2.0 / (1.0 + (1.0 - rate).sqrt())).min(MAX_RELAXATION);
                    reference_delta = delta;
                }
            }
            snapshot = (f.clone(), g.clone());
        }
        let done = match stop {
            StopRule::PotentialChange => delta <= params.tolerance,
            StopRule::MarginalL1 => {
                // over-relaxed sweeps leave both marginals off, so measure both
                let mut cols = vec![0.0; m];
                let mut err = 0.0;
                for i in 0..n {
                    if la[i] == f64::NEG_INFINITY {
                        continue;
                    }
                    let row = cost.row(i);
                    let mut s = 0.0;
                    for j in 0..m {
                        if lb[j] > f64::NEG_INFINITY {
                            let p = (la[i] + lb[j] + (f[i] + g[j] - row[j]) / eps).exp();
                            s += p;
                            cols[j] += p;
                        }
                    }
                    err += (s - a[i]).abs();
                }
                err += cols.iter().zip(b).map(|(c, w)| (c - w).abs()).sum::<f64>();
                err <= params.tolerance
            }
        };
        if done {
            converged = true;
            break;
        }
    }
    Scaling { coupling: plan_of(&f, &g), converged, iterations }
}

/// Entropic balanced OT; the plan minimises `<C, pi> + eps KL(pi | a b^T)`.
///
/// Non-convergence is not an error: the last iterate is returned with
/// `converged == false`.
pub fn solve_ot_entropic(a: &[f64], b: &[f64], cost: &CostMatrix, params: &SolverParams) -> Result<TransportPlan> {
    check_shapes(a, b, cost)?;
    params.validate_entropic()?;
    let sa = check_weights(a, "source")?;
    let sb = check_weights(b, "target")?;
    if (sa - sb).abs() > crate::exact::MASS_TOL {
        return Err(crate::error::Error::invalid(format!("marginal masses differ: {sa} vs {sb}")));
    }
    let run = scale(a, b, cost.entries(), params, 1.0, StopRule::MarginalL1);
    let objective = coupling_cost(&run.coupling, cost)?;
    let mut plan = TransportPlan::new(run.coupling, objective, SolverTag::Entropic);
    plan.converged = run.converged;
    plan.iterations = run.iterations;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::solve_ot_exact;
    use crate::measure::{build_cost, DiscreteMeasure, Metric};
    use ndarray::array;

    fn example_batch() -> CostMatrix {
        let x = DiscreteMeasure::uniform(array![[0.0, 1.0], [0.0, 2.0], [0.0, 3.0]]).unwrap();
        let y = DiscreteMeasure::uniform(array![[1.0, 3.0], [1.0, 4.0], [1.0, 5.0]]).unwrap();
        build_cost(&x, &y, Metric::Euclidean).unwrap()
    }

    fn five_by_five() -> CostMatrix {
        let x = array![[0.1, 0.9], [0.4, 0.2], [0.8, 0.5], [0.3, 0.6], [0.95, 0.05]];
        let y = array![[0.6, 0.7], [0.2, 0.1], [0.5, 0.45], [0.9, 0.9], [0.05, 0.35]];
        crate::measure::cost_between(&x, &y, Metric::Euclidean).unwrap()
    }

    #[test]
    fn marginals_within_tolerance() {
        let c = five_by_five();
        let w = [0.2; 5];
        let p = solve_ot_entropic(&w, &w, &c, &SolverParams::default()).unwrap();
        assert!(p.converged);
        let err: f64 = p.row_sums().iter().chain(p.col_sums().iter()).map(|s| (s - 0.2).abs()).sum();
        assert!(err <= 1e-7);
    }

    #[test]
    fn self_transport_is_cheap() {
        let x = DiscreteMeasure::uniform(array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
        let c = build_cost(&x, &x, Metric::Euclidean).unwrap();
        let w = [0.25; 4];
        let eps = 0.01;
        let p = solve_ot_entropic(&w, &w, &c, &SolverParams::with_epsilon(eps)).unwrap();
        assert!(p.objective <= eps * 4f64.ln() + 1e-6, "{}", p.objective);
    }

    #[test]
    fn example_batch_close_to_exact() {
        let c = example_batch();
        let w = [1.0 / 3.0; 3];
        let exact = solve_ot_exact(&w, &w, &c).unwrap().objective;
        let p = solve_ot_entropic(&w, &w, &c, &SolverParams::with_epsilon(0.01)).unwrap();
        assert!((p.objective - exact).abs() <= 0.05);
    }

    #[test]
    fn epsilon_sweep_approaches_exact() {
        let c = five_by_five();
        let w = [0.2; 5];
        let exact = solve_ot_exact(&w, &w, &c).unwrap().objective;
        let gaps: Vec<f64> = [0.1, 0.01, 0.001]
            .iter()
            .map(|&eps| {
                let params = SolverParams { epsilon: eps, tolerance: 1e-9, max_iterations: 100_000 };
                let p = solve_ot_entropic(&w, &w, &c, &params).unwrap();
                // eps = 1e-3 sits near a tie between two assignments and may use
                // the whole budget; the iterate is still the one being compared
                if eps >= 0.01 {
                    assert!(p.converged, "eps {eps}");
                }
                // an infeasible iterate can undercut the optimum by at most
                // its marginal violation times the largest cost
                let viol: f64 = p.row_sums().iter().chain(p.col_sums().iter()).map(|s| (s - 0.2).abs()).sum();
                let gap = p.objective - exact;
                assert!(gap >= -viol * c.max() - 1e-12, "eps {eps}: {gap} vs {viol}");
                gap
            })
            .collect();
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2].abs(), "{gaps:?}");
    }

    #[test]
    fn non_convergence_is_flagged() {
        let c = five_by_five();
        let w = [0.2; 5];
        let params = SolverParams { epsilon: 0.001, tolerance: 1e-12, max_iterations: 2 };
        let p = solve_ot_entropic(&w, &w, &c, &params).unwrap();
        assert!(!p.converged);
        assert_eq!(p.iterations, 2);
    }

    #[test]
    fn zero_weights_are_respected() {
        let c = five_by_five();
        let a = [0.25, 0.0, 0.25, 0.25, 0.25];
        let b = [0.0, 0.25, 0.25, 0.25, 0.25];
        let p = solve_ot_entropic(&a, &b, &c, &SolverParams::default()).unwrap();
        assert!(p.coupling.row(1).iter().all(|&x| x == 0.0));
        assert!(p.coupling.column(0).iter().all(|&x| x == 0.0));
    }
}
