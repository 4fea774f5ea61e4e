//! Procedural cell patches: a stained-tissue background with at most one
//! nucleus-like blob whose centre is the ground-truth centroid.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::spec::BACKGROUND;
use crate::image::{Centroid, CHANNELS, PATCH_SIZE};

const TISSUE: [f64; 3] = [0.91, 0.74, 0.84];
const CHROMATIN: [f64; 3] = [0.30, 0.16, 0.44];
const PIXEL_NOISE: f64 = 0.04;
const CENTROID_SPREAD: f64 = 0.08;
const CENTROID_RANGE: (f64, f64) = (0.3, 0.7);

/// Shape and stain ranges for one nucleus class, in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NucleusStyle {
    pub semi_major: (f64, f64),
    pub aspect: (f64, f64),
    pub contrast: (f64, f64),
    pub texture: f64,
}

impl NucleusStyle {
    pub const TUMOUR: NucleusStyle = NucleusStyle {
        semi_major: (6.0, 10.0),
        aspect: (0.6, 0.9),
        contrast: (0.45, 0.9),
        texture: 0.35,
    };

    pub const LYMPHOCYTE: NucleusStyle = NucleusStyle {
        semi_major: (3.0, 5.0),
        aspect: (0.85, 1.0),
        contrast: (0.7, 1.0),
        texture: 0.05,
    };

    /// Fallback for user-named classes: size grows with `rank` among the
    /// foreground classes so that each one is still distinguishable.
    fn ranked(rank: usize, of: usize) -> NucleusStyle {
        let t = if of > 1 { rank as f64 / (of - 1) as f64 } else { 0.5 };
        let lo = 3.0 + 6.0 * t;
        NucleusStyle {
            semi_major: (lo, lo + 2.0),
            aspect: (0.7, 1.0),
            contrast: (0.5, 0.9),
            texture: 0.2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ClassKind {
    Background,
    Nucleus(NucleusStyle),
}

impl ClassKind {
    pub fn for_classes(classes: &[String]) -> Vec<ClassKind> {
        let foreground: Vec<&String> = classes.iter().filter(|c| *c != BACKGROUND).collect();
        classes
            .iter()
            .map(|name| match name.as_str() {
                BACKGROUND => ClassKind::Background,
                "tumour" => ClassKind::Nucleus(NucleusStyle::TUMOUR),
                "lymphocyte" => ClassKind::Nucleus(NucleusStyle::LYMPHOCYTE),
                _ => {
                    let rank = foreground.iter().position(|f| *f == name).unwrap_or(0);
                    ClassKind::Nucleus(NucleusStyle::ranked(rank, foreground.len()))
                }
            })
            .collect()
    }
}

/// 8-bit RGB pixels, row-major, plus the recorded centroid.
pub struct Rendered {
    pub rgb: Vec<u8>,
    pub centroid: Centroid,
}

pub fn render(kind: ClassKind, rng: &mut ChaCha8Rng) -> Rendered {
    let side = PATCH_SIZE;
    let jitter = Normal::new(0.0, 0.03).unwrap();
    let noise = Normal::new(0.0, PIXEL_NOISE).unwrap();
    let tissue: Vec<f64> = TISSUE.iter().map(|c| c + jitter.sample(rng)).collect();
    let shade_x = rng.gen_range(-0.08..0.08);
    let shade_y = rng.gen_range(-0.08..0.08);

    let (centroid, blob) = match kind {
        ClassKind::Background => (Centroid::CENTER, None),
        ClassKind::Nucleus(style) => {
            let c = Centroid::new(centre_coord(rng), centre_coord(rng));
            let a = rng.gen_range(style.semi_major.0..=style.semi_major.1);
            let b = a * rng.gen_range(style.aspect.0..=style.aspect.1);
            let theta = rng.gen_range(0.0..std::f64::consts::PI);
            let contrast = rng.gen_range(style.contrast.0..=style.contrast.1);
            (c, Some((a, b, theta, contrast, style.texture)))
        }
    };

    let mut rgb = Vec::with_capacity(side * side * CHANNELS);
    let scale = side as f64;
    for y in 0..side {
        for x in 0..side {
            let fx = (x as f64 + 0.5) / scale;
            let fy = (y as f64 + 0.5) / scale;
            let shade = 1.0 + shade_x * (fx - 0.5) + shade_y * (fy - 0.5);
            let stain = match blob {
                None => 0.0,
                Some((a, b, theta, contrast, texture)) => {
                    let dx = fx * scale - centroid.x * scale;
                    let dy = fy * scale - centroid.y * scale;
                    let (s, c) = theta.sin_cos();
                    let u = (c * dx + s * dy) / a;
                    let v = (-s * dx + c * dy) / b;
                    let r = (u * u + v * v).sqrt();
                    let edge = 1.0 / (1.0 + ((r - 1.0) * 8.0).exp());
                    let grain = 1.0 - texture * rng.gen::<f64>();
                    contrast * edge * grain
                }
            };
            for ch in 0..CHANNELS {
                let v = (tissue[ch] * shade) * (1.0 - stain) + CHROMATIN[ch] * stain
                    + noise.sample(rng);
                rgb.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    Rendered { rgb, centroid }
}

fn centre_coord(rng: &mut ChaCha8Rng) -> f64 {
    let n = Normal::new(0.5, CENTROID_SPREAD).unwrap();
    n.sample(rng).clamp(CENTROID_RANGE.0, CENTROID_RANGE.1)
}
