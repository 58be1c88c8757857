//! Classification losses, the combined ASIF objective and evaluation
//! metrics.

mod classification;
mod identifier;
mod metrics;

pub use classification::{
    classification_loss, gce_loss, per_sample_losses, phuber_loss, softmax_cross_entropy, LossKind,
};
pub use identifier::{
    combine_asif_losses, combine_on_tape, per_class_identifier_loss, per_class_identifier_loss_on_tape,
};
pub use metrics::{accuracy, macro_f1, ConfusionMatrix};
