//! Weighted point clouds and ground-cost matrices.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MASS_SLACK: f64 = 1e-9;

/// A finite weighted point cloud. Rows of `points` are support locations.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    points: Array2<f64>,
    weights: Array1<f64>,
}

impl DiscreteMeasure {
    pub fn new(points: Array2<f64>, weights: Array1<f64>) -> Result<Self> {
        let (n, d) = points.dim();
        if n == 0 || d == 0 {
            return Err(Error::invalid("a measure needs at least one point and one coordinate"));
        }
        if weights.len() != n {
            return Err(Error::invalid(format!(
                "{} weights for {} points",
                weights.len(),
                n
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite coordinate"));
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("weights must be finite and nonnegative"));
        }
        let total = weights.sum();
        if total <= 0.0 || total > 1.0 + MASS_SLACK {
            return Err(Error::invalid(format!("total weight {total} outside (0, 1]")));
        }
        Ok(Self { points, weights })
    }

    /// Empirical measure with weight `1/n` on every row.
    pub fn uniform(points: Array2<f64>) -> Result<Self> {
        let n = points.nrows();
        if n == 0 {
            return Err(Error::invalid("empty point cloud"));
        }
        Self::new(points, Array1::from_elem(n, 1.0 / n as f64))
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.sum()
    }

    /// Uniform sub-measure on the listed rows (repeats allowed).
    pub fn select_uniform(&self, rows: &[usize]) -> Result<DiscreteMeasure> {
        if rows.iter().any(|&r| r >= self.len()) {
            return Err(Error::invalid("row index out of range"));
        }
        DiscreteMeasure::uniform(self.points.select(Axis(0), rows))
    }
}

/// Ground metric used to turn two point clouds into a cost matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Euclidean,
    SquaredEuclidean,
    Precomputed,
}

impl Metric {
    pub fn eval(self, x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
        let sq: f64 = x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        match self {
            Metric::Euclidean => sq.sqrt(),
            Metric::SquaredEuclidean | Metric::Precomputed => sq,
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "squared_euclidean" | "sqeuclidean" => Ok(Metric::SquaredEuclidean),
            other => Err(Error::invalid(format!("unknown metric `{other}`"))),
        }
    }
}

/// Pairwise cost matrix, rows indexed by source support, columns by target support.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    entries: Array2<f64>,
    metric: Metric,
}

impl CostMatrix {
    /// Wraps a user-supplied matrix. Entries must be finite and nonnegative.
    pub fn precomputed(entries: Array2<f64>) -> Result<Self> {
        if entries.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::invalid("cost entries must be finite and nonnegative"));
        }
        if entries.is_empty() {
            return Err(Error::invalid("empty cost matrix"));
        }
        Ok(Self { entries, metric: Metric::Precomputed })
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn shape(&self) -> (usize, usize) {
        self.entries.dim()
    }

    pub fn max(&self) -> f64 {
        self.entries.iter().cloned().fold(0.0, f64::max)
    }

    /// `lambda * C`, keeping the metric tag.
    pub fn scaled(&self, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::invalid("scale must be positive"));
        }
        Ok(Self { entries: &self.entries * lambda, metric: self.metric })
    }

    /// Restriction to the given rows and columns, in the given order.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> CostMatrix {
        let entries = self.entries.select(Axis(0), rows).select(Axis(1), cols);
        Self { entries, metric: self.metric }
    }
}

pub fn build_cost(source: &DiscreteMeasure, target: &DiscreteMeasure, metric: Metric) -> Result<CostMatrix> {
    cost_between(source.points(), target.points(), metric)
}

/// Cost matrix between two raw point arrays.
pub fn cost_between(xs: &Array2<f64>, ys: &Array2<f64>, metric: Metric) -> Result<CostMatrix> {
    if xs.ncols() != ys.ncols() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {}",
            xs.ncols(),
            ys.ncols()
        )));
    }
    if metric == Metric::Precomputed {
        return Err(Error::invalid("precomputed costs are built with CostMatrix::precomputed"));
    }
    let mut entries = Array2::zeros((xs.nrows(), ys.nrows()));
    for (i, x) in xs.outer_iter().enumerate() {
        for (j, y) in ys.outer_iter().enumerate() {
            entries[[i, j]] = metric.eval(x, y);
        }
    }
    Ok(CostMatrix { entries, metric })
}
