use serde::{Deserialize, Serialize};

use crate::error::{HydraError, Result};
use crate::losses::JointLossConfig;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Augmented views per unlabelled image when guessing labels.
    pub k_augment: usize,
    pub temperature: f64,
    pub mixup_alpha: f64,
    pub mixup_beta: f64,
    pub joint: JointLossConfig,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Name of a registered training strategy.
    pub mode: String,
    /// Swap every symmetric cross-entropy term for plain cross-entropy.
    pub disable_sce: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            epochs: 100,
            batch_size: 32,
            lr_start: 1e-3,
            lr_end: 1e-5,
            k_augment: 2,
            temperature: 0.5,
            mixup_alpha: 0.75,
            mixup_beta: 0.75,
            joint: JointLossConfig::default(),
            adam: AdamConfig::default(),
            seed: 0,
            mode: "hydramix".into(),
            disable_sce: false,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(HydraError::Config(msg));
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if self.batch_size < 2 {
            return fail(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end && self.lr_start.is_finite()) {
            return fail(format!(
                "need lr_start >= lr_end > 0, got {} and {}",
                self.lr_start, self.lr_end
            ));
        }
        if self.k_augment == 0 {
            return fail("k_augment must be at least 1".into());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return fail(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(self.mixup_alpha > 0.0 && self.mixup_beta > 0.0) {
            return fail(format!(
                "mixup_alpha and mixup_beta must be positive, got {} and {}",
                self.mixup_alpha, self.mixup_beta
            ));
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return fail(format!("adam: invalid settings {a:?}"));
        }
        self.joint.validate()
    }

    /// Exponential decay from `lr_start` at epoch 0 to `lr_end` at the last
    /// epoch.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.lr_start;
        }
        if epoch + 1 >= self.epochs {
            return self.lr_end;
        }
        let frac = epoch as f64 / (self.epochs - 1) as f64;
        self.lr_start * (self.lr_end / self.lr_start).powf(frac)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints_and_monotone() {
        let hp = Hyperparams::default();
        assert_eq!(hp.learning_rate(0), 1e-3);
        assert!((hp.learning_rate(99) - 1e-5).abs() < 1e-12);
        for e in 1..100 {
            assert!(hp.learning_rate(e) < hp.learning_rate(e - 1));
        }
        let r1 = hp.learning_rate(1) / hp.learning_rate(0);
        let r2 = hp.learning_rate(50) / hp.learning_rate(49);
        assert!((r1 - r2).abs() < 1e-12);
        let mid = Hyperparams { epochs: 3, ..hp };
        assert!((mid.learning_rate(1) - 1e-4).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_values() {
        for hp in [
            Hyperparams { epochs: 0, ..Default::default() },
            Hyperparams { batch_size: 1, ..Default::default() },
            Hyperparams { lr_start: 1e-6, ..Default::default() },
            Hyperparams { lr_end: 0.0, ..Default::default() },
            Hyperparams { temperature: 0.0, ..Default::default() },
        ] {
            assert!(matches!(hp.validate(), Err(HydraError::Config(_))), "{hp:?}");
        }
        Hyperparams::default().validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<Hyperparams>(r#"{"epoch": 3}"#).is_err());
        let hp: Hyperparams = serde_json::from_str(r#"{"epochs": 3}"#).unwrap();
        assert_eq!(hp.batch_size, 32);
    }
}
