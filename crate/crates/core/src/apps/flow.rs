//! Stochastic mini-batch Wasserstein gradient flow.
//!
//! The source cloud is a set of particles of mass `1/n` each. Every Euler
//! step draws `k` fresh batch pairs, solves the chosen transport on each
//! (squared-Euclidean cost), and moves the sampled particles along the
//! fixed-plan gradient of the mean batch cost. The gradient with respect to a
//! particle is multiplied by `n`, turning it into the velocity of the
//! particle discretisation of the Wasserstein flow (otherwise the step size
//! would shrink with the number of particles).

use ndarray::{Array2, Axis};
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::wasserstein2;
use crate::measure::{cost_between, DiscreteMeasure, Metric};
use crate::minibatch::{batch_at, substream, BatchSpec};
use crate::solver::SolverKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub loss: SolverKind,
    pub num_batches: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub steps: usize,
    pub seed: u64,
    /// W2 to the target (and a snapshot) every this many steps; the first and
    /// last step are always recorded.
    pub eval_every: usize,
}

impl FlowConfig {
    pub fn validate(&self, n_source: usize, n_target: usize) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be finite and nonnegative"));
        }
        if self.eval_every == 0 {
            return Err(Error::invalid("eval_every must be positive"));
        }
        BatchSpec::new(self.batch_size, self.num_batches, self.seed).validate(n_source.min(n_target))?;
        self.loss.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrajectory {
    pub snapshots: Vec<(usize, Array2<f64>)>,
    pub w2_curve: Vec<(usize, f64)>,
    pub config: FlowConfig,
}

impl FlowTrajectory {
    pub fn final_w2(&self) -> f64 {
        self.w2_curve.last().map(|p| p.1).unwrap_or(f64::NAN)
    }
}

/// `sum_ij pi_ij |x_i - y_j|^2`.
pub fn batch_cost(xs: &Array2<f64>, ys: &Array2<f64>, plan: &Array2<f64>) -> f64 {
    let mut total = 0.0;
    for ((i, j), &p) in plan.indexed_iter() {
        if p != 0.0 {
            let d = &xs.row(i) - &ys.row(j);
            total += p * d.dot(&d);
        }
    }
    total
}

/// Gradient of [`batch_cost`] in `xs` with the plan held fixed:
/// row `i` is `2 sum_j pi_ij (x_i - y_j)`.
pub fn batch_cost_gradient(xs: &Array2<f64>, ys: &Array2<f64>, plan: &Array2<f64>) -> Array2<f64> {
    let mut grad = Array2::zeros(xs.dim());
    for ((i, j), &p) in plan.indexed_iter() {
        if p != 0.0 {
            let d = &xs.row(i) - &ys.row(j);
            grad.row_mut(i).scaled_add(2.0 * p, &d);
        }
    }
    grad
}

fn step_seed(seed: u64, step: usize) -> u64 {
    substream(seed, step as u64).next_u64()
}

/// Runs the flow from `init` towards `target`.
pub fn gradient_flow(init: &DiscreteMeasure, target: &DiscreteMeasure, config: &FlowConfig) -> Result<FlowTrajectory> {
    let (n, nt) = (init.len(), target.len());
    if init.dim() != target.dim() {
        return Err(Error::invalid("source and target dimensions differ"));
    }
    config.validate(n, nt)?;
    let solver = config.loss.build()?;
    let ys = target.points();
    let mut xs = init.points().clone();
    let (k, m) = (config.num_batches, config.batch_size);
    let weights = vec![1.0 / m as f64; m];

    let mut snapshots = Vec::new();
    let mut w2_curve = Vec::new();
    let mut record = |step: usize, xs: &Array2<f64>| -> Result<()> {
        let mu = DiscreteMeasure::new(xs.clone(), init.weights().clone())?;
        w2_curve.push((step, wasserstein2(&mu, target)?));
        snapshots.push((step, xs.clone()));
        Ok(())
    };
    record(0, &xs)?;

    for step in 0..config.steps {
        let spec = BatchSpec::new(m, k, step_seed(config.seed, step));
        let grads: Vec<(Vec<usize>, Array2<f64>)> = (0..k)
            .into_par_iter()
            .map(|i| {
                let pair = batch_at(n, nt, &spec, i);
                let bx = xs.select(Axis(0), &pair.source);
                let by = ys.select(Axis(0), &pair.target);
                let cost = cost_between(&bx, &by, Metric::SquaredEuclidean)?;
                let plan = solver
                    .solve(&weights, &weights, &cost)
                    .map_err(|e| Error::Batch { index: i, source: Box::new(e) })?;
                Ok((pair.source, batch_cost_gradient(&bx, &by, &plan.coupling)))
            })
            .collect::<Result<_>>()?;

        let mut total = Array2::<f64>::zeros(xs.dim());
        for (rows, g) in &grads {
            for (r, &i) in rows.iter().enumerate() {
                total.row_mut(i).scaled_add(1.0, &g.row(r));
            }
        }
        // mean over batches, then the per-particle velocity scale n
        let scale = config.learning_rate * n as f64 / k as f64;
        xs.scaled_add(-scale, &total);
        if xs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(step + 1));
        }
        let done = step + 1;
        if done % config.eval_every == 0 || done == config.steps {
            record(done, &xs)?;
        }
    }
    Ok(FlowTrajectory { snapshots, w2_curve, config: *config })
}

/// 2-D S-curve: `t ~ U(-3pi/2, 3pi/2)`, point `(sin t, sign(t)(cos t - 1))`
/// plus isotropic Gaussian jitter of standard deviation `noise`.
pub fn s_curve(n: usize, noise: f64, seed: u64) -> Result<DiscreteMeasure> {
    if n == 0 || !(noise >= 0.0) {
        return Err(Error::invalid("need n >= 1 and noise >= 0"));
    }
    let mut rng = substream(seed, u64::MAX - 2);
    let mut pts = Array2::zeros((n, 2));
    for i in 0..n {
        let t: f64 = 3.0 * std::f64::consts::PI * (rng.random::<f64>() - 0.5);
        let (z1, z2): (f64, f64) = (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
        pts[[i, 0]] = t.sin() + noise * z1;
        pts[[i, 1]] = t.signum() * (t.cos() - 1.0) + noise * z2;
    }
    DiscreteMeasure::uniform(pts)
}

/// `n` draws from `N(center, std^2 I)`.
pub fn gaussian_blob(n: usize, center: &[f64], std: f64, seed: u64) -> Result<DiscreteMeasure> {
    if n == 0 || center.is_empty() || !(std >= 0.0) {
        return Err(Error::invalid("need n >= 1, a center and std >= 0"));
    }
    let mut rng = substream(seed, u64::MAX - 3);
    let pts = Array2::from_shape_fn((n, center.len()), |(_, d)| {
        let z: f64 = StandardNormal.sample(&mut rng);
        center[d] + std * z
    });
    DiscreteMeasure::uniform(pts)
}

/// The S-curve flow setup: a Gaussian blob flowing onto an S-curve, both
/// with `n` points and drawn from `seed`.
pub fn s_shape_setup(n: usize, seed: u64) -> Result<(DiscreteMeasure, DiscreteMeasure)> {
    let init = gaussian_blob(n, &[0.0, 0.0], 0.5, seed)?;
    let target = s_curve(n, 0.05, seed)?;
    Ok((init, target))
}
