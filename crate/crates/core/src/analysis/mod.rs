//! Frozen-feature analyses: how memorisable the features are per sample,
//! and how accuracy degrades as the least important dimensions are pruned.

mod linear;
mod probe;
mod pruning;

pub use linear::{fit_linear, LinearFit, LinearFitConfig};
pub use probe::{identity_probe, ProbeConfig, ProbeReport};
pub use pruning::{
    feature_pruning_curve, PruneConfig, PruneSchedule, PruningCurve, PruningStep, FINAL_DIMS as FINAL_PRUNED_DIMS,
};
