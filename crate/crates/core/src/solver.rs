//! Runtime-selectable transport solvers.
//!
//! Every solver implements [`TransportSolver`]. A [`SolverKind`] is the
//! typed, serializable description of one; a [`SolverRegistry`] maps kind
//! names (`ot`, `uot`, `pot`) to builders that turn loose
//! [`SolverOptions`] (e.g. parsed CLI flags) into a kind.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::solve_ot_exact;
use crate::measure::CostMatrix;
use crate::partial::{solve_pot_entropic, solve_pot_exact, PartialParams};
use crate::plan::{SolverParams, TransportPlan};
use crate::sinkhorn::solve_ot_entropic;
use crate::unbalanced::{solve_uot_entropic, UotParams};

pub trait TransportSolver: Send + Sync {
    fn name(&self) -> &'static str;

    fn solve(&self, a: &[f64], b: &[f64], cost: &CostMatrix) -> Result<TransportPlan>;

    /// Mass every returned plan should carry on probability inputs, when fixed.
    fn target_mass(&self) -> Option<f64> {
        Some(1.0)
    }
}

pub struct ExactOt;

impl TransportSolver for ExactOt {
    fn name(&self) -> &'static str {
        "ot"
    }

    fn solve(&self, a: &[f64], b: &[f64], cost: &CostMatrix) -> Result<TransportPlan> {
        solve_ot_exact(a, b, cost)
    }
}

pub struct EntropicOt(pub SolverParams);

impl TransportSolver for EntropicOt {
    fn name(&self) -> &'static str {
        "ot-entropic"
    }

    fn solve(&self, a: &[f64], b: &[f64], cost: &CostMatrix) -> Result<TransportPlan> {
        solve_ot_entropic(a, b, cost, &self.0)
    }
}

pub struct EntropicUot(pub UotParams);

impl TransportSolver for EntropicUot {
    fn name(&self) -> &'static str {
        "uot"
    }

    fn solve(&self, a: &[f64], b: &[f64], cost: &CostMatrix) -> Result<TransportPlan> {
        solve_uot_entropic(a, b, cost, &self.0)
    }

    fn target_mass(&self) -> Option<f64> {
        None
    }
}

pub struct Partial(pub PartialParams);

impl TransportSolver for Partial {
    fn name(&self) -> &'static str {
        if self.0.entropic.is_some() {
            "pot-entropic"
        } else {
            "pot"
        }
    }

    fn solve(&self, a: &[f64], b: &[f64], cost: &CostMatrix) -> Result<TransportPlan> {
        match self.0.entropic {
            Some(_) => solve_pot_entropic(a, b, cost, &self.0),
            None => solve_pot_exact(a, b, cost, &self.0),
        }
    }

    fn target_mass(&self) -> Option<f64> {
        Some(self.0.fraction)
    }
}

/// Which per-batch transport to use: balanced, unbalanced or partial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SolverKind {
    Ot { entropic: Option<SolverParams> },
    Uot(UotParams),
    Pot(PartialParams),
}

impl SolverKind {
    pub fn exact_ot() -> Self {
        SolverKind::Ot { entropic: None }
    }

    pub fn exact_pot(fraction: f64) -> Self {
        SolverKind::Pot(PartialParams::exact(fraction))
    }

    pub fn tag(&self) -> &'static str {
        match self {
            SolverKind::Ot { .. } => "ot",
            SolverKind::Uot(_) => "uot",
            SolverKind::Pot(_) => "pot",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SolverKind::Ot { entropic: Some(p) } => p.validate_entropic(),
            SolverKind::Ot { entropic: None } => Ok(()),
            SolverKind::Uot(p) => p.validate(),
            SolverKind::Pot(p) => p.validate(),
        }
    }

    pub fn build(&self) -> Result<Box<dyn TransportSolver>> {
        self.validate()?;
        Ok(match *self {
            SolverKind::Ot { entropic: None } => Box::new(ExactOt),
            SolverKind::Ot { entropic: Some(p) } => Box::new(EntropicOt(p)),
            SolverKind::Uot(p) => Box::new(EntropicUot(p)),
            SolverKind::Pot(p) => Box::new(Partial(p)),
        })
    }
}

/// Loose parameter bag; each registered builder picks what it needs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub epsilon: Option<f64>,
    pub tau: Option<f64>,
    pub fraction: Option<f64>,
    pub dummy_cost: Option<f64>,
    pub tolerance: Option<f64>,
    pub max_iterations: Option<usize>,
}

impl SolverOptions {
    fn entropic(&self) -> Option<SolverParams> {
        self.epsilon.filter(|&e| e > 0.0).map(|epsilon| {
            let d = SolverParams::default();
            SolverParams {
                epsilon,
                tolerance: self.tolerance.unwrap_or(d.tolerance),
                max_iterations: self.max_iterations.unwrap_or(d.max_iterations),
            }
        })
    }
}

pub type KindBuilder = fn(&SolverOptions) -> Result<SolverKind>;

fn build_ot(o: &SolverOptions) -> Result<SolverKind> {
    Ok(SolverKind::Ot { entropic: o.entropic() })
}

fn build_uot(o: &SolverOptions) -> Result<SolverKind> {
    let tau = o.tau.ok_or_else(|| Error::invalid("uot needs tau"))?;
    let entropic = o
        .entropic()
        .or_else(|| o.epsilon.is_none().then(SolverParams::default))
        .ok_or_else(|| Error::invalid("uot needs epsilon > 0"))?;
    Ok(SolverKind::Uot(UotParams::new(tau, entropic)))
}

fn build_pot(o: &SolverOptions) -> Result<SolverKind> {
    let fraction = o.fraction.ok_or_else(|| Error::invalid("pot needs a transport fraction s"))?;
    Ok(SolverKind::Pot(PartialParams { fraction, dummy_cost: o.dummy_cost, entropic: o.entropic() }))
}

#[derive(Clone)]
pub struct SolverRegistry {
    builders: BTreeMap<String, KindBuilder>,
}

impl Default for SolverRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register("ot", build_ot);
        r.register("uot", build_uot);
        r.register("pot", build_pot);
        r
    }
}

impl fmt::Debug for SolverRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.builders.keys()).finish()
    }
}

impl SolverRegistry {
    pub fn empty() -> Self {
        Self { builders: BTreeMap::new() }
    }

    pub fn register(&mut self, name: &str, builder: KindBuilder) -> Option<KindBuilder> {
        self.builders.insert(name.to_owned(), builder)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.builders.keys().map(String::as_str)
    }

    pub fn kind(&self, name: &str, options: &SolverOptions) -> Result<SolverKind> {
        let builder = self.builders.get(name).ok_or_else(|| {
            let known: Vec<_> = self.names().collect();
            Error::invalid(format!("unknown solver `{name}` (known: {})", known.join(", ")))
        })?;
        let kind = builder(options)?;
        kind.validate()?;
        Ok(kind)
    }

    pub fn build(&self, name: &str, options: &SolverOptions) -> Result<Box<dyn TransportSolver>> {
        self.kind(name, options)?.build()
    }
}
