//! Mixup with a mixing weight biased towards the first sample, centroids
//! passed through from that sample, and the shuffled-pool batch pairing.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{HydraError, Result};
use crate::image::{Centroid, Image};
use crate::ssl::ProbDist;

/// A sample entering the mixing pool.
#[derive(Clone, Debug, PartialEq)]
pub struct MixSource {
    pub image: Image,
    pub label: ProbDist,
    pub centroid: Centroid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixPair {
    pub image: Image,
    pub label: ProbDist,
    pub centroid: Centroid,
    pub gamma: f64,
}

/// `max(b, 1 - b)`.
pub fn fold_gamma(b: f64) -> f64 {
    b.max(1.0 - b)
}

/// Draws `b ~ Beta(alpha, beta)` and folds it into `[0.5, 1]`.
pub fn sample_gamma<R: Rng + ?Sized>(alpha: f64, beta: f64, rng: &mut R) -> Result<f64> {
    if !(alpha > 0.0 && beta > 0.0) || !alpha.is_finite() || !beta.is_finite() {
        return Err(HydraError::Argument(format!(
            "beta shape parameters must be positive, got ({alpha}, {beta})"
        )));
    }
    let dist = Beta::new(alpha, beta).map_err(|e| HydraError::Argument(e.to_string()))?;
    Ok(fold_gamma(dist.sample(rng)))
}

/// Convex combination of `a` and `b`; the centroid is `a`'s, unmixed.
pub fn mixup(a: &MixSource, b: &MixSource, gamma: f64) -> Result<MixPair> {
    if !(0.5..=1.0).contains(&gamma) {
        return Err(HydraError::Argument(format!("gamma {gamma} outside [0.5, 1]")));
    }
    if a.image.side() != b.image.side() {
        return Err(HydraError::Argument(format!(
            "image sides differ: {} vs {}",
            a.image.side(),
            b.image.side()
        )));
    }
    if a.label.len() != b.label.len() {
        return Err(HydraError::Argument(format!(
            "class counts differ: {} vs {}",
            a.label.len(),
            b.label.len()
        )));
    }
    let g32 = gamma as f32;
    let h32 = (1.0 - gamma) as f32;
    let pixels = a
        .image
        .data()
        .iter()
        .zip(b.image.data())
        .map(|(&x1, &x2)| g32 * x1 + h32 * x2)
        .collect();
    let label: Vec<f64> = a
        .label
        .probs()
        .iter()
        .zip(b.label.probs())
        .map(|(l1, l2)| (gamma * l1 + (1.0 - gamma) * l2).clamp(0.0, 1.0))
        .collect();
    Ok(MixPair {
        image: Image::new(a.image.side(), pixels)?,
        label: ProbDist::new(label)?,
        centroid: a.centroid,
        gamma,
    })
}

#[derive(Clone, Debug)]
pub struct MixedBatches {
    pub labelled: Vec<MixPair>,
    pub unlabelled: Vec<MixPair>,
    /// Pool index of each partner: indices `< |labelled|` refer to the
    /// labelled batch, the rest to the unlabelled one.
    pub pool_order: Vec<usize>,
}

/// Shuffles the concatenated batches into a pool `W` and mixes the labelled
/// batch with `W[..|x|]` and the unlabelled batch with `W[|x|..]`.
pub fn mix_batches<R: Rng + ?Sized>(
    labelled: &[MixSource],
    unlabelled: &[MixSource],
    alpha: f64,
    beta: f64,
    rng: &mut R,
) -> Result<MixedBatches> {
    if labelled.is_empty() && unlabelled.is_empty() {
        return Err(HydraError::Argument("cannot mix two empty batches".into()));
    }
    let n = labelled.len() + unlabelled.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let pool = |i: usize| {
        if i < labelled.len() {
            &labelled[i]
        } else {
            &unlabelled[i - labelled.len()]
        }
    };
    let mut mixed = Vec::with_capacity(n);
    for (i, &partner) in order.iter().enumerate() {
        let gamma = sample_gamma(alpha, beta, rng)?;
        mixed.push(mixup(pool(i), pool(partner), gamma)?);
    }
    let unl = mixed.split_off(labelled.len());
    Ok(MixedBatches {
        labelled: mixed,
        unlabelled: unl,
        pool_order: order,
    })
}
