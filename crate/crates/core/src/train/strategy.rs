//! Training regimes as interchangeable strategies, looked up by name.

use rand_chacha::ChaCha8Rng;

use super::hyper::Hyperparams;
use crate::data::{LabelledPatch, SplitPlan, UnlabelledPatch};
use crate::error::{HydraError, Result};
use crate::image::{Centroid, Image};
use crate::losses::{JointLossConfig, SceConfig};
use crate::model::Predictor;
use crate::ssl::{augment_one, mix_batches, pseudo_label_batch, sharpen, AugmentOp, MixSource, ProbDist};

/// A fully prepared training example: what the network sees and what it
/// should output.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub image: Image,
    pub label: ProbDist,
    pub centroid: Centroid,
}

/// Inputs for one optimisation step. Either side may be empty, not both.
#[derive(Clone, Debug, Default)]
pub struct StepBatch {
    pub labelled: Vec<TrainSample>,
    pub unlabelled: Vec<TrainSample>,
}

/// Record indices a strategy draws from.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Pools {
    pub labelled: Vec<usize>,
    pub unlabelled: Vec<usize>,
}

pub struct BatchContext<'a> {
    /// The current weights, used in eval mode for label guessing.
    pub model: &'a dyn Predictor,
    pub hp: &'a Hyperparams,
    pub num_classes: usize,
}

pub trait TrainingStrategy: Send + Sync {
    fn name(&self) -> &'static str;

    fn pools(&self, plan: &SplitPlan) -> Pools;

    fn loss_config(&self, hp: &Hyperparams) -> JointLossConfig;

    /// Defaults to one pass over the labelled pool.
    fn steps_per_epoch(&self, pools: &Pools, batch_size: usize) -> usize {
        pools.labelled.len().div_ceil(batch_size)
    }

    fn build_batch(
        &self,
        ctx: &BatchContext<'_>,
        labelled: &[LabelledPatch<'_>],
        unlabelled: &[UnlabelledPatch<'_>],
        rng: &mut ChaCha8Rng,
    ) -> Result<StepBatch>;
}

/// One random flip or rotation per image, one-hot targets.
fn augmented_labelled(
    patches: &[LabelledPatch<'_>],
    num_classes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<MixSource>> {
    patches
        .iter()
        .map(|p| {
            let a = augment_one(p.image, Some(p.centroid), AugmentOp::sample(rng));
            Ok(MixSource {
                image: a.image,
                label: ProbDist::one_hot(p.class_id, num_classes)?,
                centroid: a.centroid.unwrap_or(p.centroid),
            })
        })
        .collect()
}

fn labelled_only_config(hp: &Hyperparams) -> JointLossConfig {
    let cfg = if hp.disable_sce { hp.joint.without_sce() } else { hp.joint };
    JointLossConfig {
        sce_unlabelled: SceConfig::CE,
        ..cfg
    }
}

/// Plain supervised training on labelled patches only. `all_training`
/// selects the whole training split (the ceiling) rather than the budget.
pub struct Supervised {
    name: &'static str,
    all_training: bool,
}

impl Supervised {
    pub fn full() -> Self {
        Supervised { name: "supervised", all_training: true }
    }

    pub fn partial() -> Self {
        Supervised { name: "partial", all_training: false }
    }
}

impl TrainingStrategy for Supervised {
    fn name(&self) -> &'static str {
        self.name
    }

    fn pools(&self, plan: &SplitPlan) -> Pools {
        let mut labelled = plan.labelled.clone();
        if self.all_training {
            labelled.extend_from_slice(&plan.unlabelled);
            labelled.sort_unstable();
        }
        Pools { labelled, unlabelled: Vec::new() }
    }

    fn loss_config(&self, hp: &Hyperparams) -> JointLossConfig {
        labelled_only_config(hp)
    }

    fn build_batch(
        &self,
        ctx: &BatchContext<'_>,
        labelled: &[LabelledPatch<'_>],
        _unlabelled: &[UnlabelledPatch<'_>],
        rng: &mut ChaCha8Rng,
    ) -> Result<StepBatch> {
        let labelled = augmented_labelled(labelled, ctx.num_classes, rng)?
            .into_iter()
            .map(|s| TrainSample { image: s.image, label: s.label, centroid: s.centroid })
            .collect();
        Ok(StepBatch { labelled, unlabelled: Vec::new() })
    }
}

/// Guessed labels on augmented unlabelled views, sharpened, then mixed with
/// the labelled batch. `force_ce` gives the variant without symmetric
/// cross-entropy.
pub struct HydraMix {
    name: &'static str,
    force_ce: bool,
}

impl HydraMix {
    pub fn new() -> Self {
        HydraMix { name: "hydramix", force_ce: false }
    }

    pub fn without_sce() -> Self {
        HydraMix { name: "hydramix_nosce", force_ce: true }
    }
}

impl Default for HydraMix {
    fn default() -> Self {
        Self::new()
    }
}

impl TrainingStrategy for HydraMix {
    fn name(&self) -> &'static str {
        self.name
    }

    fn pools(&self, plan: &SplitPlan) -> Pools {
        Pools {
            labelled: plan.labelled.clone(),
            unlabelled: plan.unlabelled.clone(),
        }
    }

    fn loss_config(&self, hp: &Hyperparams) -> JointLossConfig {
        if self.force_ce || hp.disable_sce {
            hp.joint.without_sce()
        } else {
            hp.joint
        }
    }

    /// One pass over the unlabelled pool, or over the labelled pool when
    /// there is nothing unlabelled.
    fn steps_per_epoch(&self, pools: &Pools, batch_size: usize) -> usize {
        if pools.unlabelled.is_empty() {
            pools.labelled.len().div_ceil(batch_size)
        } else {
            pools.unlabelled.len().div_ceil(batch_size)
        }
    }

    fn build_batch(
        &self,
        ctx: &BatchContext<'_>,
        labelled: &[LabelledPatch<'_>],
        unlabelled: &[UnlabelledPatch<'_>],
        rng: &mut ChaCha8Rng,
    ) -> Result<StepBatch> {
        let hp = ctx.hp;
        let xs = augmented_labelled(labelled, ctx.num_classes, rng)?;
        let mut us = Vec::with_capacity(unlabelled.len());
        if !unlabelled.is_empty() {
            let images: Vec<&Image> = unlabelled.iter().map(|u| u.image).collect();
            for guess in pseudo_label_batch(ctx.model, &images, hp.k_augment, rng)? {
                let view = guess.views.into_iter().next().expect("k >= 1");
                us.push(MixSource {
                    image: view.image,
                    label: sharpen(&guess.dist, hp.temperature)?,
                    centroid: view.op.map_centroid(guess.centroid),
                });
            }
        }
        let mixed = mix_batches(&xs, &us, hp.mixup_alpha, hp.mixup_beta, rng)?;
        let to_sample = |m: crate::ssl::MixPair| TrainSample {
            image: m.image,
            label: m.label,
            centroid: m.centroid,
        };
        Ok(StepBatch {
            labelled: mixed.labelled.into_iter().map(to_sample).collect(),
            unlabelled: mixed.unlabelled.into_iter().map(to_sample).collect(),
        })
    }
}

/// Named strategies. Registering a name twice replaces the earlier entry.
pub struct StrategyRegistry {
    entries: Vec<Box<dyn TrainingStrategy>>,
}

impl StrategyRegistry {
    pub fn empty() -> Self {
        StrategyRegistry { entries: Vec::new() }
    }

    pub fn register(&mut self, strategy: Box<dyn TrainingStrategy>) {
        self.entries.retain(|s| s.name() != strategy.name());
        self.entries.push(strategy);
    }

    pub fn get(&self, name: &str) -> Result<&dyn TrainingStrategy> {
        self.entries
            .iter()
            .find(|s| s.name() == name)
            .map(|s| s.as_ref())
            .ok_or_else(|| {
                HydraError::Config(format!(
                    "mode: unknown training mode `{name}`; expected one of {}",
                    self.names().join(", ")
                ))
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|s| s.name()).collect()
    }
}

impl Default for StrategyRegistry {
    fn default() -> Self {
        let mut r = StrategyRegistry::empty();
        r.register(Box::new(Supervised::full()));
        r.register(Box::new(Supervised::partial()));
        r.register(Box::new(HydraMix::new()));
        r.register(Box::new(HydraMix::without_sce()));
        r
    }
}
