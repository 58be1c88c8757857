//! Experiment orchestration: configuration, end-to-end runs, artifacts and
//! checkpoints.

mod artifacts;
mod checkpoint;
mod config;
mod run;

pub use artifacts::{read_features, read_losses, write_features, write_losses};
pub use checkpoint::{Checkpoint, RngSnapshot, SavedParam, CHECKPOINT_VERSION};
pub use config::{DatasetKind, ExperimentConfig, Method};
pub use run::{
    load_datasets, prepare_training_set, repeat_seeds, run_experiment, run_single, DetectionSummary, EpochRecord,
    MeanStd, RunOutcome, RunReport, RunSummary,
};
