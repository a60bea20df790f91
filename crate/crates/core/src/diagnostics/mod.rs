//! Oracles, mapping census and concentration experiments.

pub mod census;
pub mod concentration;
pub mod oracle;

pub use census::{
    bimodal_pair, mapping_census, mb_census, reference_plan, MappingCensus, ENTROPIC_THRESHOLD, EXACT_THRESHOLD,
};
pub use concentration::{
    concentration_plan_experiment, concentration_value_experiment, ConcentrationReport, ConcentrationRow,
    GaussianPair,
};
pub use oracle::brute_force_plan;
