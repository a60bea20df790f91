//! Mini-batch estimators.
//!
//! `k` pairs of `m`-point index sets are drawn, a transport problem between
//! the two uniform `m`-point sub-measures is solved for each pair, and the
//! costs and the zero-padded plans are averaged. The transport used per pair
//! (balanced, unbalanced, partial) is whatever [`TransportSolver`] is passed.

use ndarray::Array2;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{cost_between, DiscreteMeasure, Metric};
use crate::partial::PartialParams;
use crate::plan::TransportPlan;
use crate::solver::{Partial, SolverKind, TransportSolver};

/// Default cap on the number of batch pairs a full enumeration may visit.
pub const DEFAULT_PAIR_CAP: u128 = 1_000_000;

const UNIFORM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Every batch is an independent uniformly random `m`-subset.
    WithReplacement,
    /// Batches are consecutive chunks of a shuffled epoch; a new shuffle
    /// starts when an epoch runs out.
    WithoutReplacement,
}

impl std::str::FromStr for Sampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "with_replacement" | "with-replacement" => Ok(Sampling::WithReplacement),
            "without_replacement" | "without-replacement" => Ok(Sampling::WithoutReplacement),
            other => Err(Error::invalid(format!("unknown sampling `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSpec {
    pub batch_size: usize,
    pub num_batches: usize,
    pub sampling: Sampling,
    pub seed: u64,
}

impl BatchSpec {
    pub fn new(batch_size: usize, num_batches: usize, seed: u64) -> Self {
        Self { batch_size, num_batches, sampling: Sampling::WithReplacement, seed }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.batch_size == 0 || self.batch_size > n {
            return Err(Error::invalid(format!(
                "batch size {} must lie in [1, {n}]",
                self.batch_size
            )));
        }
        if self.num_batches == 0 {
            return Err(Error::invalid("need at least one batch"));
        }
        Ok(())
    }
}

/// One mini-batch pair, as row indices into the source and target clouds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPair {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

/// Deterministic generator for substream `stream` of `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const EPOCH_STREAMS: u64 = 1 << 63;

fn subset(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Vec<usize> {
    let mut v = index::sample(rng, n, m).into_vec();
    v.sort_unstable();
    v
}

fn epoch_chunk(seed: u64, side: u64, n: usize, m: usize, i: usize) -> Vec<usize> {
    let per_epoch = n / m;
    let (epoch, slot) = (i / per_epoch, i % per_epoch);
    let mut rng = substream(seed, EPOCH_STREAMS | ((epoch as u64) << 1) | side);
    let perm = index::sample(&mut rng, n, n).into_vec();
    let mut chunk = perm[slot * m..(slot + 1) * m].to_vec();
    chunk.sort_unstable();
    chunk
}

/// Batch `i` of the schedule; depends only on `(n_source, n_target, spec, i)`.
pub fn batch_at(n_source: usize, n_target: usize, spec: &BatchSpec, i: usize) -> BatchPair {
    let m = spec.batch_size;
    match spec.sampling {
        Sampling::WithReplacement => {
            let mut rng = substream(spec.seed, i as u64);
            let source = subset(&mut rng, n_source, m);
            let target = subset(&mut rng, n_target, m);
            BatchPair { source, target }
        }
        Sampling::WithoutReplacement => BatchPair {
            source: epoch_chunk(spec.seed, 0, n_source, m, i),
            target: epoch_chunk(spec.seed, 1, n_target, m, i),
        },
    }
}

pub fn sample_batches(n: usize, spec: &BatchSpec) -> Result<Vec<BatchPair>> {
    sample_batches_sized(n, n, spec)
}

pub fn sample_batches_sized(n_source: usize, n_target: usize, spec: &BatchSpec) -> Result<Vec<BatchPair>> {
    spec.validate(n_source.min(n_target))?;
    Ok((0..spec.num_batches).map(|i| batch_at(n_source, n_target, spec, i)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
    pub objective: f64,
    pub mass: f64,
    pub converged: bool,
}

/// Averaged cost and zero-padded averaged plan over a batch schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedResult {
    pub value: f64,
    pub padded_plan: Array2<f64>,
    pub batch_records: Vec<BatchRecord>,
}

impl AggregatedResult {
    pub fn total_mass(&self) -> f64 {
        self.padded_plan.sum()
    }

    pub fn all_converged(&self) -> bool {
        self.batch_records.iter().all(|r| r.converged)
    }
}

fn check_uniform(mu: &DiscreteMeasure, what: &str) -> Result<()> {
    let w = 1.0 / mu.len() as f64;
    if mu.weights().iter().any(|&x| (x - w).abs() > UNIFORM_TOL) {
        return Err(Error::invalid(format!("{what} measure must carry uniform weights")));
    }
    Ok(())
}

/// Solves one batch pair between uniform sub-measures.
pub fn solve_batch(
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
    pair: &BatchPair,
    solver: &dyn TransportSolver,
    metric: Metric,
) -> Result<TransportPlan> {
    let xs = source.points().select(ndarray::Axis(0), &pair.source);
    let ys = target.points().select(ndarray::Axis(0), &pair.target);
    let cost = cost_between(&xs, &ys, metric)?;
    let a = vec![1.0 / pair.source.len() as f64; pair.source.len()];
    let b = vec![1.0 / pair.target.len() as f64; pair.target.len()];
    solver.solve(&a, &b, &cost)
}

/// Averages over an explicit schedule. Batches are solved in parallel and
/// reduced in index order.
pub fn mb_transport_with_batches(
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
    batches: &[BatchPair],
    solver: &dyn TransportSolver,
    metric: Metric,
) -> Result<AggregatedResult> {
    check_uniform(source, "source")?;
    check_uniform(target, "target")?;
    if batches.is_empty() {
        return Err(Error::invalid("empty batch schedule"));
    }
    for pair in batches {
        if pair.source.iter().any(|&i| i >= source.len()) || pair.target.iter().any(|&j| j >= target.len()) {
            return Err(Error::invalid("batch index out of range"));
        }
        if pair.source.is_empty() || pair.target.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
    }
    let plans: Vec<Result<TransportPlan>> =
        batches.par_iter().map(|pair| solve_batch(source, target, pair, solver, metric)).collect();

    let mut padded = Array2::zeros((source.len(), target.len()));
    let mut records = Vec::with_capacity(batches.len());
    let mut sum = 0.0;
    for (index, (pair, plan)) in batches.iter().zip(plans).enumerate() {
        let plan = plan.map_err(|e| Error::Batch { index, source: Box::new(e) })?;
        for (r, &i) in pair.source.iter().enumerate() {
            for (c, &j) in pair.target.iter().enumerate() {
                padded[[i, j]] += plan.coupling[[r, c]];
            }
        }
        sum += plan.objective;
        records.push(BatchRecord {
            source: pair.source.clone(),
            target: pair.target.clone(),
            objective: plan.objective,
            mass: plan.total_mass,
            converged: plan.converged,
        });
    }
    let k = batches.len() as f64;
    padded /= k;
    Ok(AggregatedResult { value: sum / k, padded_plan: padded, batch_records: records })
}

pub fn mb_transport(
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
    spec: &BatchSpec,
    solver: &dyn TransportSolver,
    metric: Metric,
) -> Result<AggregatedResult> {
    let batches = sample_batches_sized(source.len(), target.len(), spec)?;
    mb_transport_with_batches(source, target, &batches, solver, metric)
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// All `m`-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, m: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if m > n {
        return out;
    }
    let mut cur: Vec<usize> = (0..m).collect();
    loop {
        out.push(cur.clone());
        let Some(pos) = (0..m).rev().find(|&p| cur[p] < n - m + p) else { break };
        cur[pos] += 1;
        for q in pos + 1..m {
            cur[q] = cur[q - 1] + 1;
        }
    }
    out
}

/// Number of ordered batch pairs a full enumeration visits.
pub fn full_pair_count(n_source: usize, n_target: usize, m: usize) -> u128 {
    binomial(n_source, m) * binomial(n_target, m)
}

/// Exact average over every ordered pair of `m`-subsets.
pub fn full_mb_transport(
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
    m: usize,
    solver: &dyn TransportSolver,
    metric: Metric,
    pair_cap: u128,
) -> Result<AggregatedResult> {
    if m == 0 || m > source.len() || m > target.len() {
        return Err(Error::invalid(format!("batch size {m} out of range")));
    }
    let count = full_pair_count(source.len(), target.len(), m);
    if count > pair_cap {
        return Err(Error::ResourceLimit(format!("{count} batch pairs exceed the cap of {pair_cap}")));
    }
    let xs = combinations(source.len(), m);
    let ys = combinations(target.len(), m);
    let batches: Vec<BatchPair> = xs
        .iter()
        .flat_map(|x| ys.iter().map(move |y| BatchPair { source: x.clone(), target: y.clone() }))
        .collect();
    mb_transport_with_batches(source, target, &batches, solver, metric)
}

pub fn full_mb_pot(
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
    m: usize,
    fraction: f64,
    metric: Metric,
) -> Result<AggregatedResult> {
    full_mb_transport(source, target, m, &Partial(PartialParams::exact(fraction)), metric, DEFAULT_PAIR_CAP)
}

/// One consecutive slice of the big batch, with its aligned targets.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedBlock {
    pub source: Vec<usize>,
    /// Aligned target for each source row; `None` where the row carries no mass.
    pub target: Vec<Option<usize>>,
    /// Big plan restricted to the block's rows and aligned columns.
    pub plan: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub source_indices: Vec<usize>,
    pub target_indices: Vec<usize>,
    /// Row-wise argmax of the big plan, as original target indices.
    pub gamma: Vec<Option<usize>>,
    pub plan: TransportPlan,
    pub blocks: Vec<AlignedBlock>,
}

impl Alignment {
    pub fn absent(&self) -> usize {
        self.gamma.iter().filter(|g| g.is_none()).count()
    }
}

const EMPTY_ROW: f64 = 1e-12;

/// Solves one large (partial) OT between `big_batch` points of each side,
/// aligns every source row with its heaviest target, and cuts the result
/// into blocks of `small_batch` consecutive source rows.
pub fn two_stage_align(
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
    big_batch: usize,
    small_batch: usize,
    kind: &SolverKind,
    seed: u64,
    metric: Metric,
) -> Result<Alignment> {
    if matches!(kind, SolverKind::Uot(_)) {
        return Err(Error::invalid("two-stage alignment supports ot and pot only"));
    }
    let n = source.len().min(target.len());
    if small_batch == 0 || small_batch > big_batch || big_batch > n {
        return Err(Error::invalid(format!(
            "need 1 <= m ({small_batch}) <= big batch ({big_batch}) <= n ({n})"
        )));
    }
    let solver = kind.build()?;
    let spec = BatchSpec::new(big_batch, 1, seed);
    let pair = batch_at(source.len(), target.len(), &spec, 0);
    let plan = solve_batch(source, target, &pair, solver.as_ref(), metric)?;

    let gamma_pos: Vec<Option<usize>> = plan
        .coupling
        .rows()
        .into_iter()
        .map(|row| {
            let mut best: Option<(usize, f64)> = None;
            for (j, &x) in row.iter().enumerate() {
                if best.is_none_or(|(_, b)| x > b) {
                    best = Some((j, x));
                }
            }
            best.filter(|&(_, x)| x > EMPTY_ROW).map(|(j, _)| j)
        })
        .collect();

    let blocks = (0..big_batch / small_batch)
        .map(|b| {
            let rows = b * small_batch..(b + 1) * small_batch;
            let mut sub = Array2::zeros((small_batch, small_batch));
            for (r, i) in rows.clone().enumerate() {
                for (c, k) in rows.clone().enumerate() {
                    if let Some(j) = gamma_pos[k] {
                        sub[[r, c]] = plan.coupling[[i, j]];
                    }
                }
            }
            AlignedBlock {
                source: rows.clone().map(|i| pair.source[i]).collect(),
                target: rows.map(|i| gamma_pos[i].map(|j| pair.target[j])).collect(),
                plan: sub,
            }
        })
        .collect();

    Ok(Alignment {
        gamma: gamma_pos.iter().map(|g| g.map(|j| pair.target[j])).collect(),
        source_indices: pair.source,
        target_indices: pair.target,
        plan,
        blocks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::ExactOt;
    use ndarray::array;

    #[test]
    fn full_batch_is_a_permutation() {
        let spec = BatchSpec { batch_size: 7, num_batches: 1, sampling: Sampling::WithoutReplacement, seed: 3 };
        let b = sample_batches(7, &spec).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].source, (0..7).collect::<Vec<_>>());
        assert_eq!(b[0].target, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = BatchSpec::new(6, 32, 99);
        let a = sample_batches(10, &spec).unwrap();
        let b = sample_batches(10, &spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 32);
        for p in &a {
            assert_eq!(p.source.len(), 6);
            let mut s = p.source.clone();
            s.dedup();
            assert_eq!(s.len(), 6);
        }
        let other = sample_batches(10, &BatchSpec::new(6, 32, 100)).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn epochs_cover_each_index_once() {
        let spec = BatchSpec { batch_size: 3, num_batches: 3, sampling: Sampling::WithoutReplacement, seed: 1 };
        let b = sample_batches(9, &spec).unwrap();
        let mut all: Vec<usize> = b.iter().flat_map(|p| p.source.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn batch_larger_than_data_rejected() {
        let spec = BatchSpec::new(5, 1, 0);
        assert!(matches!(sample_batches(4, &spec), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn enumeration_counts() {
        assert_eq!(combinations(8, 3).len(), 56);
        assert_eq!(full_pair_count(8, 8, 3), 3136);
        assert_eq!(combinations(4, 4), vec![vec![0, 1, 2, 3]]);
    }

    #[test]
    fn single_full_batch_equals_full_ot() {
        let x = DiscreteMeasure::uniform(array![[0.0, 0.0], [1.0, 0.3], [0.2, 0.9], [0.7, 0.7]]).unwrap();
        let y = DiscreteMeasure::uniform(array![[0.5, 0.1], [0.9, 0.9], [0.1, 0.4], [0.3, 0.3]]).unwrap();
        let spec = BatchSpec { batch_size: 4, num_batches: 1, sampling: Sampling::WithoutReplacement, seed: 5 };
        let r = mb_transport(&x, &y, &spec, &ExactOt, Metric::Euclidean).unwrap();
        let c = crate::measure::build_cost(&x, &y, Metric::Euclidean).unwrap();
        let full = crate::exact::solve_ot_exact(&[0.25; 4], &[0.25; 4], &c).unwrap();
        assert!((r.value - full.objective).abs() < 1e-9);
    }

    #[test]
    fn non_uniform_measure_rejected() {
        let x = DiscreteMeasure::new(array![[0.0], [1.0]], array![0.3, 0.7]).unwrap();
        let spec = BatchSpec::new(1, 1, 0);
        assert!(mb_transport(&x, &x, &spec, &ExactOt, Metric::Euclidean).is_err());
    }
}
