use crate::error::{HydraError, Result};
use crate::ssl::ProbDist;

/// Temperature sharpening: `p_i^(1/T) / Σ_j p_j^(1/T)`.
///
/// Evaluated in log space relative to the largest entry so that small
/// temperatures neither underflow nor divide zero by zero. Zero entries stay
/// zero.
pub fn sharpen(d: &ProbDist, temperature: f64) -> Result<ProbDist> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(HydraError::Argument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let inv_t = 1.0 / temperature;
    let logs: Vec<f64> = d.probs().iter().map(|p| p.ln()).collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights = logs.iter().map(|l| {
        if *l == f64::NEG_INFINITY {
            0.0
        } else {
            ((l - top) * inv_t).exp()
        }
    });
    ProbDist::from_weights(weights)
}
