//! Label-noise injection and small-loss noisy-label detection.

mod detect;
mod inject;
mod ledger;

pub use detect::{detect_noisy, detection_metrics, DetectionScores};
pub use inject::{
    flip_count, inject_instance_dependent, inject_symmetric, inject_symmetric_dataset, rank_samples_by_loss, NoiseKind,
    NoiseSpec, WarmupConfig,
};
pub use ledger::{LedgerEntry, NoiseLedger};
