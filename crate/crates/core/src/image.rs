use serde::{Deserialize, Serialize};

use crate::error::{HydraError, Result};

/// Side length of a cell patch in pixels.
pub const PATCH_SIZE: usize = 41;
pub const CHANNELS: usize = 3;

/// Square RGB image, row-major HWC, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    side: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(side: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != side * side * CHANNELS {
            return Err(HydraError::Argument(format!(
                "image of side {side} needs {} values, got {}",
                side * side * CHANNELS,
                data.len()
            )));
        }
        Ok(Image { side, data })
    }

    pub fn filled(side: usize, value: f32) -> Self {
        Image {
            side,
            data: vec![value; side * side * CHANNELS],
        }
    }

    pub fn from_rgb8(side: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(side, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.side + x) * CHANNELS;
        &self.data[i..i + CHANNELS]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f32] {
        let i = (y * self.side + x) * CHANNELS;
        &mut self.data[i..i + CHANNELS]
    }
}

/// Nucleus centre in normalised patch coordinates: `x` runs left to right,
/// `y` top to bottom, and pixel `(i, j)` has its centre at
/// `((i + 0.5) / side, (j + 0.5) / side)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Centroid {
    pub x: f64,
    pub y: f64,
}

impl Centroid {
    pub const CENTER: Centroid = Centroid { x: 0.5, y: 0.5 };

    pub fn new(x: f64, y: f64) -> Self {
        Centroid { x, y }
    }

    pub fn distance(&self, other: &Centroid) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}
