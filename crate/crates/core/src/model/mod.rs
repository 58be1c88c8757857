//! The ASIF network: extractor, class head, and a per-class identifier
//! behind dynamic gradient reversal.

mod dgr;
mod eval;
mod layers;
mod network;
mod train;

pub use dgr::{dgr_update, ideal_identification_loss, DgrMode, DgrSign, DgrState};
pub use eval::{evaluate_macro_f1, extract_features, infer_dataset, per_sample_loss_map, train_epoch, LabelSource};
pub use layers::{BatchNorm1d, Linear};
pub use network::{
    AsifModel, FeatureExtractor, ForwardOutput, IdentifierModule, IdentityBranch, ModelConfig, PrivateHead,
};
pub use train::{asif_training_step, StepConfig, StepReport, Trainer};
