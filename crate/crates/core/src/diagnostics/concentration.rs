//! Empirical concentration of the mini-batch partial transport estimator.
//!
//! For a fixed pair of point clouds, batch schedules are resampled many times
//! for each `k` on a grid; the spread of the estimated value (and of the
//! padded plan's marginals, when the exhaustive estimator is affordable)
//! should shrink like `1/sqrt(k)`.

use ndarray::Array2;
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{DiscreteMeasure, Metric};
use crate::minibatch::{full_mb_transport, full_pair_count, mb_transport, substream, BatchSpec, DEFAULT_PAIR_CAP};
use crate::partial::PartialParams;
use crate::solver::Partial;

pub const MIN_REPLICATES: usize = 30;

/// Two Gaussian clouds, `N(0, I_d)` and `N(shift * 1, I_d)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPair {
    pub dim: usize,
    pub shift: f64,
}

impl Default for GaussianPair {
    fn default() -> Self {
        Self { dim: 2, shift: 2.0 }
    }
}

impl GaussianPair {
    pub fn sample(&self, n: usize, seed: u64) -> Result<(DiscreteMeasure, DiscreteMeasure)> {
        if self.dim == 0 || n == 0 {
            return Err(Error::invalid("need n >= 1 and dim >= 1"));
        }
        let mut rng = substream(seed, u64::MAX);
        let mut draw = |offset: f64| {
            Array2::from_shape_fn((n, self.dim), |_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z + offset
            })
        };
        let xs = draw(0.0);
        let ys = draw(self.shift);
        Ok((DiscreteMeasure::uniform(xs)?, DiscreteMeasure::uniform(ys)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationRow {
    pub k: usize,
    pub replicates: usize,
    pub mean: f64,
    pub std: f64,
    /// Mean over replicates of the largest row-sum deviation from the exhaustive plan.
    pub max_plan_row_deviation: Option<f64>,
    /// Same for column sums.
    pub max_plan_col_deviation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub n: usize,
    pub m: usize,
    pub fraction: f64,
    pub seed: u64,
    pub rows: Vec<ConcentrationRow>,
}

impl ConcentrationReport {
    pub fn stds(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.std).collect()
    }
}

pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn check_grid(k_grid: &[usize], replicates: usize) -> Result<()> {
    if k_grid.is_empty() || k_grid.contains(&0) {
        return Err(Error::invalid("k grid must be nonempty and positive"));
    }
    if k_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("k grid must be strictly ascending"));
    }
    if replicates < MIN_REPLICATES {
        return Err(Error::invalid(format!("need at least {MIN_REPLICATES} replicates")));
    }
    Ok(())
}

fn replicate_seed(seed: u64, k_index: usize, replicate: usize) -> u64 {
    substream(seed, ((k_index as u64) << 32) | replicate as u64).next_u64()
}

/// Standard deviation of the m-POT value across resampled schedules, per `k`.
pub fn concentration_value_experiment(
    n: usize,
    m: usize,
    fraction: f64,
    k_grid: &[usize],
    replicates: usize,
    seed: u64,
    data: &GaussianPair,
) -> Result<ConcentrationReport> {
    check_grid(k_grid, replicates)?;
    let (source, target) = data.sample(n, seed)?;
    let solver = Partial(PartialParams::exact(fraction));
    let mut rows = Vec::with_capacity(k_grid.len());
    for (ki, &k) in k_grid.iter().enumerate() {
        let values: Vec<f64> = (0..replicates)
            .into_par_iter()
            .map(|r| {
                let spec = BatchSpec::new(m, k, replicate_seed(seed, ki, r));
                mb_transport(&source, &target, &spec, &solver, Metric::Euclidean).map(|res| res.value)
            })
            .collect::<Result<_>>()?;
        let (mean, std) = mean_std(&values);
        rows.push(ConcentrationRow {
            k,
            replicates,
            mean,
            std,
            max_plan_row_deviation: None,
            max_plan_col_deviation: None,
        });
    }
    Ok(ConcentrationReport { n, m, fraction, seed, rows })
}

fn max_deviation(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

fn marginals(p: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
    (
        p.rows().into_iter().map(|r| r.sum()).collect(),
        p.columns().into_iter().map(|c| c.sum()).collect(),
    )
}

/// Deviation of the sampled padded plan's marginals from the exhaustive
/// estimator's. A grid entry equal to the total number of ordered batch
/// pairs runs the exhaustive schedule itself (deviation zero).
pub fn concentration_plan_experiment(
    n: usize,
    m: usize,
    fraction: f64,
    k_grid: &[usize],
    replicates: usize,
    seed: u64,
    data: &GaussianPair,
) -> Result<ConcentrationReport> {
    check_grid(k_grid, replicates)?;
    let (source, target) = data.sample(n, seed)?;
    let solver = Partial(PartialParams::exact(fraction));
    let full = full_mb_transport(&source, &target, m, &solver, Metric::Euclidean, DEFAULT_PAIR_CAP)?;
    let (full_rows, full_cols) = marginals(&full.padded_plan);
    let all_pairs = full_pair_count(n, n, m);

    let mut rows = Vec::with_capacity(k_grid.len());
    for (ki, &k) in k_grid.iter().enumerate() {
        if k as u128 == all_pairs {
            rows.push(ConcentrationRow {
                k,
                replicates,
                mean: full.value,
                std: 0.0,
                max_plan_row_deviation: Some(0.0),
                max_plan_col_deviation: Some(0.0),
            });
            continue;
        }
        let stats: Vec<(f64, f64, f64)> = (0..replicates)
            .into_par_iter()
            .map(|r| {
                let spec = BatchSpec::new(m, k, replicate_seed(seed, ki, r));
                let res = mb_transport(&source, &target, &spec, &solver, Metric::Euclidean)?;
                let (rs, cs) = marginals(&res.padded_plan);
                Ok((res.value, max_deviation(&rs, &full_rows), max_deviation(&cs, &full_cols)))
            })
            .collect::<Result<_>>()?;
        let values: Vec<f64> = stats.iter().map(|s| s.0).collect();
        let (mean, std) = mean_std(&values);
        let reps = replicates as f64;
        rows.push(ConcentrationRow {
            k,
            replicates,
            mean,
            std,
            max_plan_row_deviation: Some(stats.iter().map(|s| s.1).sum::<f64>() / reps),
            max_plan_col_deviation: Some(stats.iter().map(|s| s.2).sum::<f64>() / reps),
        });
    }
    Ok(ConcentrationReport { n, m, fraction, seed, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_batch_has_no_spread() {
        let r = concentration_value_experiment(6, 6, 0.5, &[1], 30, 4, &GaussianPair::default()).unwrap();
        assert_eq!(r.rows[0].std, 0.0);
    }

    #[test]
    fn rejects_bad_grids() {
        let g = GaussianPair::default();
        assert!(concentration_value_experiment(6, 3, 0.5, &[4, 1], 30, 0, &g).is_err());
        assert!(concentration_value_experiment(6, 3, 0.5, &[1, 4], 10, 0, &g).is_err());
    }

    #[test]
    fn exhaustive_grid_entry_has_zero_deviation() {
        let r = concentration_plan_experiment(5, 2, 0.5, &[4, 100], 30, 1, &GaussianPair::default()).unwrap();
        assert_eq!(r.rows[1].max_plan_row_deviation, Some(0.0));
        assert!(r.rows[0].max_plan_row_deviation.unwrap() > 0.0);
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
