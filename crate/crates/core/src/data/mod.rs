//! Synthetic patch datasets: rendering, manifest I/O and labelled splits.

mod dataset;
pub mod render;
mod spec;
mod split;

pub use dataset::{
    generate, Dataset, GenerateSummary, LabelledPatch, Manifest, Record, Split, UnlabelledPatch,
    IMAGE_DIR, MANIFEST,
};
pub use spec::{background_class, DatasetSpec, BACKGROUND};
pub use split::{make_split, stratified_quotas, SplitPlan};
