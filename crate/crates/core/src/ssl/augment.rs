//! Pixel-exact geometric augmentations of square patches.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HydraError, Result};
use crate::image::{Centroid, Image, CHANNELS};

/// One of the dihedral transforms that keep the pixel grid intact.
/// Rotations are clockwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentOp {
    Identity,
    HorizontalFlip,
    VerticalFlip,
    Rotate90,
    Rotate180,
    Rotate270,
}

impl AugmentOp {
    pub const ALL: [AugmentOp; 6] = [
        AugmentOp::Identity,
        AugmentOp::HorizontalFlip,
        AugmentOp::VerticalFlip,
        AugmentOp::Rotate90,
        AugmentOp::Rotate180,
        AugmentOp::Rotate270,
    ];

    pub fn inverse(self) -> AugmentOp {
        match self {
            AugmentOp::Rotate90 => AugmentOp::Rotate270,
            AugmentOp::Rotate270 => AugmentOp::Rotate90,
            other => other,
        }
    }

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> AugmentOp {
        Self::ALL[rng.gen_range(0..Self::ALL.len())]
    }

    /// Destination of source pixel `(x, y)` in a `side × side` grid.
    pub fn map_pixel(self, x: usize, y: usize, side: usize) -> (usize, usize) {
        let last = side - 1;
        match self {
            AugmentOp::Identity => (x, y),
            AugmentOp::HorizontalFlip => (last - x, y),
            AugmentOp::VerticalFlip => (x, last - y),
            AugmentOp::Rotate90 => (last - y, x),
            AugmentOp::Rotate180 => (last - x, last - y),
            AugmentOp::Rotate270 => (y, last - x),
        }
    }

    /// The same map in normalised coordinates (pixel centres at `(i + 0.5) / side`).
    pub fn map_centroid(self, c: Centroid) -> Centroid {
        let Centroid { x, y } = c;
        match self {
            AugmentOp::Identity => Centroid::new(x, y),
            AugmentOp::HorizontalFlip => Centroid::new(1.0 - x, y),
            AugmentOp::VerticalFlip => Centroid::new(x, 1.0 - y),
            AugmentOp::Rotate90 => Centroid::new(1.0 - y, x),
            AugmentOp::Rotate180 => Centroid::new(1.0 - x, 1.0 - y),
            AugmentOp::Rotate270 => Centroid::new(y, 1.0 - x),
        }
    }

    pub fn apply(self, img: &Image) -> Image {
        if self == AugmentOp::Identity {
            return img.clone();
        }
        let side = img.side();
        let mut out = Image::filled(side, 0.0);
        for y in 0..side {
            for x in 0..side {
                let (dx, dy) = self.map_pixel(x, y, side);
                out.pixel_mut(dx, dy).copy_from_slice(img.pixel(x, y));
            }
        }
        debug_assert_eq!(out.data().len(), side * side * CHANNELS);
        out
    }
}

/// An augmented view together with the op that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Augmented {
    pub image: Image,
    pub centroid: Option<Centroid>,
    pub op: AugmentOp,
}

pub fn augment_one(image: &Image, centroid: Option<Centroid>, op: AugmentOp) -> Augmented {
    Augmented {
        image: op.apply(image),
        centroid: centroid.map(|c| op.map_centroid(c)),
        op,
    }
}

/// `k` views, each with an independently drawn op.
pub fn augment_k<R: Rng + ?Sized>(
    image: &Image,
    centroid: Option<Centroid>,
    k: usize,
    rng: &mut R,
) -> Result<Vec<Augmented>> {
    if k == 0 {
        return Err(HydraError::Argument("augmentation count k must be at least 1".into()));
    }
    Ok((0..k)
        .map(|_| augment_one(image, centroid, AugmentOp::sample(rng)))
        .collect())
}
