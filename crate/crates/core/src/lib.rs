//! Semi-supervised multi-task training of cell-patch classifiers with
//! centroid regression heads.

pub mod data;
pub mod error;
pub mod image;
pub mod losses;
pub mod model;
pub mod ssl;
pub mod train;

pub use error::{HydraError, Result};
pub use image::{Centroid, Image, CHANNELS, PATCH_SIZE};

