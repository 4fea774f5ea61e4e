use serde::{Deserialize, Serialize};

use crate::error::{HydraError, Result};

/// Categorical distribution over the class set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbDist(Vec<f64>);

impl ProbDist {
    /// Allowed deviation of the total mass from one.
    pub const TOLERANCE: f64 = 1e-6;

    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(HydraError::Argument("empty distribution".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(HydraError::Argument(format!("probability {p} outside [0, 1]")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > Self::TOLERANCE {
            return Err(HydraError::Argument(format!("probabilities sum to {total}")));
        }
        Ok(ProbDist(probs))
    }

    /// Normalises non-negative weights.
    pub fn from_weights<I: IntoIterator<Item = f64>>(weights: I) -> Result<Self> {
        let w: Vec<f64> = weights.into_iter().collect();
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(HydraError::Argument(format!("invalid weights {w:?}")));
        }
        let total: f64 = w.iter().sum();
        if !(total > 0.0) {
            return Err(HydraError::Argument("weights sum to zero".into()));
        }
        Ok(ProbDist(w.into_iter().map(|v| v / total).collect()))
    }

    pub fn one_hot(class: usize, num_classes: usize) -> Result<Self> {
        if class >= num_classes {
            return Err(HydraError::Argument(format!(
                "class {class} out of range for {num_classes} classes"
            )));
        }
        let mut p = vec![0.0; num_classes];
        p[class] = 1.0;
        Ok(ProbDist(p))
    }

    pub fn uniform(num_classes: usize) -> Self {
        ProbDist(vec![1.0 / num_classes as f64; num_classes])
    }

    /// Arithmetic mean of equally sized distributions.
    pub fn mean(dists: &[ProbDist]) -> Result<Self> {
        let first = dists
            .first()
            .ok_or_else(|| HydraError::Argument("mean of zero distributions".into()))?;
        let c = first.len();
        let mut acc = vec![0.0; c];
        for d in dists {
            if d.len() != c {
                return Err(HydraError::Argument(format!(
                    "class count mismatch: {} vs {c}",
                    d.len()
                )));
            }
            for (a, p) in acc.iter_mut().zip(d.probs()) {
                *a += p;
            }
        }
        let k = dists.len() as f64;
        Ok(ProbDist(acc.into_iter().map(|a| a / k).collect()))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest entry; the first one on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn unique_argmax(&self) -> Option<usize> {
        let best = self.argmax();
        let ties = self.0.iter().filter(|&&p| p == self.0[best]).count();
        (ties == 1).then_some(best)
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self.0.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
    }
}
