//! Discrete optimal transport between point clouds, in three flavours
//! (balanced, KL-unbalanced, partial), and mini-batch estimators built on
//! top of them.
//!
//! Solvers are plain functions ([`solve_ot_exact`], [`solve_ot_entropic`],
//! [`solve_uot_entropic`], [`solve_pot_exact`], [`solve_pot_entropic`]) and are
//! also available as [`TransportSolver`] trait objects selected by name
//! through a [`SolverRegistry`].

// Validation is written as `!(x > 0.0)` on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod apps;
pub mod diagnostics;
pub mod error;
pub mod exact;
pub mod io;
pub mod measure;
pub mod minibatch;
pub mod partial;
pub mod plan;
pub mod sinkhorn;
pub mod solver;
pub mod unbalanced;

pub use error::{Error, Result};
pub use exact::{solve_ot_exact, solve_ot_simplex, wasserstein2};
pub use measure::{build_cost, cost_between, CostMatrix, DiscreteMeasure, Metric};
pub use minibatch::{
    full_mb_pot, full_mb_transport, mb_transport, mb_transport_with_batches, sample_batches, two_stage_align,
    AggregatedResult, Alignment, BatchPair, BatchSpec, Sampling,
};
pub use partial::{extend_with_dummy, solve_pot_entropic, solve_pot_exact, PartialParams};
pub use plan::{plan_cost, SolverParams, SolverTag, TransportPlan};
pub use sinkhorn::solve_ot_entropic;
pub use solver::{SolverKind, SolverOptions, SolverRegistry, TransportSolver};
pub use unbalanced::{kl_divergence, solve_uot_entropic, UotParams};
