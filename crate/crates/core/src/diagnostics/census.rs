use ndarray::Array2;
use serde::{Deserialize, Serialize};

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::exact::solve_ot_exact;
use crate::measure::{build_cost, DiscreteMeasure, Metric};
use crate::minibatch::{mb_transport, substream, AggregatedResult, BatchSpec};
use crate::plan::TransportPlan;
use crate::solver::TransportSolver;

/// Threshold for counting an entry of an exact (sparse) plan as a mapping.
pub const EXACT_THRESHOLD: f64 = 1e-9;
/// Threshold for entropic plans, which are dense with tiny entries.
pub const ENTROPIC_THRESHOLD: f64 = 1e-4;

const REFERENCE_TOL: f64 = 1e-12;

/// Mapping counts of an aggregated plan against the full optimal plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MappingCensus {
    pub total: usize,
    pub misspecified: usize,
    pub optimal: usize,
    pub threshold: f64,
}

/// Counts entries of `candidate` above `threshold`, split by whether the
/// reference plan also moves mass there.
pub fn mapping_census(candidate: &Array2<f64>, reference: &TransportPlan, threshold: f64) -> Result<MappingCensus> {
    if candidate.dim() != reference.coupling.dim() {
        return Err(Error::invalid(format!(
            "candidate shape {:?} differs from reference shape {:?}",
            candidate.dim(),
            reference.coupling.dim()
        )));
    }
    if !(threshold >= 0.0) {
        return Err(Error::invalid("threshold must be nonnegative"));
    }
    let mut total = 0;
    let mut optimal = 0;
    for (x, r) in candidate.iter().zip(reference.coupling.iter()) {
        if *x > threshold {
            total += 1;
            if *r > REFERENCE_TOL {
                optimal += 1;
            }
        }
    }
    Ok(MappingCensus { total, misspecified: total - optimal, optimal, threshold })
}

/// Exact OT plan between the two full measures, the census reference.
pub fn reference_plan(source: &DiscreteMeasure, target: &DiscreteMeasure, metric: Metric) -> Result<TransportPlan> {
    let cost = build_cost(source, target, metric)?;
    solve_ot_exact(source.weights().as_slice().unwrap(), target.weights().as_slice().unwrap(), &cost)
}

/// Runs a mini-batch estimator and counts its mappings against the full plan.
pub fn mb_census(
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
    spec: &BatchSpec,
    solver: &dyn TransportSolver,
    metric: Metric,
    threshold: f64,
) -> Result<(MappingCensus, AggregatedResult)> {
    let reference = reference_plan(source, target, metric)?;
    let result = mb_transport(source, target, spec, solver, metric)?;
    Ok((mapping_census(&result.padded_plan, &reference, threshold)?, result))
}

/// Two 2-D bimodal clouds: the source mixes `N((0,0), I)` and `N((0,20), I)`,
/// the target mixes `N((10,0), S)` and `N((10,20), S)` with
/// `S = [[1, -0.8], [-0.8, 1]]`. The first half of each cloud comes from the
/// lower mode.
pub fn bimodal_pair(n: usize, seed: u64) -> Result<(DiscreteMeasure, DiscreteMeasure)> {
    if n < 2 {
        return Err(Error::invalid("need at least two points"));
    }
    let mut rng = substream(seed, u64::MAX - 1);
    let mut z = || -> f64 { StandardNormal.sample(&mut rng) };
    let mut xs = Array2::zeros((n, 2));
    let mut ys = Array2::zeros((n, 2));
    for i in 0..n {
        let top = if i < n / 2 { 0.0 } else { 20.0 };
        xs[[i, 0]] = z();
        xs[[i, 1]] = top + z();
    }
    for i in 0..n {
        let top = if i < n / 2 { 0.0 } else { 20.0 };
        let (z1, z2) = (z(), z());
        // Cholesky factor of S is [[1, 0], [-0.8, 0.6]]
        ys[[i, 0]] = 10.0 + z1;
        ys[[i, 1]] = top - 0.8 * z1 + 0.6 * z2;
    }
    Ok((DiscreteMeasure::uniform(xs)?, DiscreteMeasure::uniform(ys)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::SolverTag;
    use ndarray::array;

    fn reference() -> TransportPlan {
        TransportPlan::new(array![[0.5, 0.0], [0.0, 0.5]], 0.0, SolverTag::Exact)
    }

    #[test]
    fn identical_plan_has_no_misspecified() {
        let r = reference();
        let c = mapping_census(&r.coupling, &r, EXACT_THRESHOLD).unwrap();
        assert_eq!((c.total, c.misspecified, c.optimal), (2, 0, 2));
    }

    #[test]
    fn counts_off_support_entries() {
        let cand = array![[0.25, 0.25], [0.0, 0.5]];
        let c = mapping_census(&cand, &reference(), EXACT_THRESHOLD).unwrap();
        assert_eq!((c.total, c.misspecified, c.optimal), (3, 1, 2));
    }

    #[test]
    fn threshold_is_monotone() {
        let cand = array![[0.3, 1e-3], [1e-6, 0.2]];
        let mut last = usize::MAX;
        for t in [0.0, 1e-7, 1e-4, 0.1, 0.25, 1.0] {
            let c = mapping_census(&cand, &reference(), t).unwrap();
            assert_eq!(c.total, c.misspecified + c.optimal);
            assert!(c.total <= last);
            last = c.total;
        }
    }

    #[test]
    fn shape_mismatch() {
        assert!(mapping_census(&Array2::zeros((3, 2)), &reference(), 0.0).is_err());
    }
}
