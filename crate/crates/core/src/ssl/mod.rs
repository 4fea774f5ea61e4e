//! Augmentation, pseudo-labelling, sharpening and mixup.

pub mod augment;
pub mod mixup;
mod prob;
pub mod pseudo;
mod sharpen;

pub use augment::{augment_k, augment_one, AugmentOp, Augmented};
pub use mixup::{fold_gamma, mix_batches, mixup, sample_gamma, MixPair, MixSource, MixedBatches};
pub use prob::ProbDist;
pub use pseudo::{pseudo_label, pseudo_label_batch, PseudoLabel};
pub use sharpen::sharpen;
