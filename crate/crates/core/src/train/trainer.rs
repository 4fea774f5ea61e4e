use hmx_tensor::{Element, Graph};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::Adam;
use super::hyper::Hyperparams;
use super::metrics::{evaluate, MetricsRecord, TrainObserver};
use super::strategy::{BatchContext, Pools, StepBatch, StrategyRegistry, TrainSample, TrainingStrategy};
use crate::data::{Dataset, LabelledPatch, SplitPlan, UnlabelledPatch};
use crate::error::{HydraError, Result};
use crate::image::Image;
use crate::losses::{joint_loss_var, HeadVars, JointLossConfig, LossBreakdown, Targets};
use crate::model::{Mode, Model};

/// Loss values of a single optimisation step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub loss: LossBreakdown,
    pub l2: f64,
}

pub struct TrainOutcome {
    pub model: Model,
    /// Weights from the epoch with the highest test accuracy (earliest on ties).
    pub best: Model,
    pub best_epoch: usize,
    pub history: Vec<MetricsRecord>,
}

pub struct Trainer<'a> {
    model: Model,
    data: &'a Dataset,
    strategy: &'a dyn TrainingStrategy,
    hp: Hyperparams,
    loss_cfg: JointLossConfig,
    pools: Pools,
    gate_class: Option<usize>,
    adam: Adam,
    rng: ChaCha8Rng,
    step: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(
        model: Model,
        data: &'a Dataset,
        plan: &SplitPlan,
        hp: &Hyperparams,
        registry: &'a StrategyRegistry,
    ) -> Result<Self> {
        hp.validate()?;
        let strategy = registry.get(&hp.mode)?;
        if model.config().num_classes != data.num_classes() {
            return Err(HydraError::Config(format!(
                "model has {} classes, dataset has {}",
                model.config().num_classes,
                data.num_classes()
            )));
        }
        let pools = strategy.pools(plan);
        if pools.labelled.is_empty() {
            return Err(HydraError::Argument(format!(
                "mode `{}` has no labelled training records",
                strategy.name()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
        // keep the data order stream apart from any weight-init stream
        rng.set_stream(1);
        Ok(Trainer {
            model,
            data,
            strategy,
            loss_cfg: strategy.loss_config(hp),
            hp: hp.clone(),
            pools,
            gate_class: data.background_class(),
            adam: Adam::new(hp.adam),
            rng,
            step: 0,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn loss_config(&self) -> &JointLossConfig {
        &self.loss_cfg
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.strategy.steps_per_epoch(&self.pools, self.hp.batch_size)
    }

    /// Builds and applies one step from explicit record indices.
    pub fn train_step(&mut self, labelled: &[usize], unlabelled: &[usize], lr: f64) -> Result<StepReport> {
        let lab: Vec<LabelledPatch<'_>> = labelled.iter().map(|&i| self.data.labelled(i)).collect();
        let unl: Vec<UnlabelledPatch<'_>> = unlabelled.iter().map(|&i| self.data.unlabelled(i)).collect();
        let ctx = BatchContext {
            model: &self.model,
            hp: &self.hp,
            num_classes: self.data.num_classes(),
        };
        let batch = self.strategy.build_batch(&ctx, &lab, &unl, &mut self.rng)?;
        self.apply(&batch, lr)
    }

    /// Forward, loss, backward and an Adam update on a prepared batch.
    pub fn apply(&mut self, batch: &StepBatch, lr: f64) -> Result<StepReport> {
        let step = self.step;
        self.step += 1;
        let nl = batch.labelled.len();
        let nu = batch.unlabelled.len();
        let images: Vec<&Image> = batch.labelled.iter().chain(&batch.unlabelled).map(|s| &s.image).collect();
        let mut g = Graph::new();
        let input = self.model.batch_tensor(&images)?;
        let fwd = self.model.forward(&mut g, &input, Mode::Train)?;

        let l_t = targets(&batch.labelled);
        let u_t = targets(&batch.unlabelled);
        let mut side = |start: usize, len: usize| -> Result<Option<HeadVars>> {
            if len == 0 {
                return Ok(None);
            }
            Ok(Some(HeadVars {
                probs: g.slice_rows(fwd.probs, start, len)?,
                cx: g.slice_rows(fwd.cx, start, len)?,
                cy: g.slice_rows(fwd.cy, start, len)?,
            }))
        };
        let l_heads = side(0, nl)?;
        let u_heads = side(nl, nu)?;
        let (loss, breakdown) = joint_loss_var(
            &mut g,
            l_heads.map(|h| (h, l_t.view())),
            u_heads.map(|h| (h, u_t.view())),
            &self.loss_cfg,
            self.gate_class,
        )?;
        let l2 = self.model.l2_penalty_var(&mut g, &fwd.params)?;
        let l2_value = g.value(l2).data()[0].to_f64();
        let total = g.add(loss, l2)?;
        let value = g.value(total).data()[0].to_f64();
        if !value.is_finite() {
            return Err(HydraError::Numerical {
                step,
                msg: format!("loss is {value}"),
            });
        }
        g.backward(total)?;
        let grads: Vec<Vec<f32>> = fwd
            .params
            .iter()
            .map(|&v| g.take_grad(v).ok_or_else(|| HydraError::Argument("parameter without gradient".into())))
            .collect::<Result<_>>()?;
        if grads.iter().flatten().any(|x| !x.is_finite()) {
            return Err(HydraError::Numerical {
                step,
                msg: "non-finite gradient".into(),
            });
        }
        self.adam
            .step(self.model.params_mut().iter_mut().map(|p| &mut p.tensor), &grads, lr)?;
        self.model.update_running_stats(&fwd.batch_stats)?;
        Ok(StepReport { loss: breakdown, l2: l2_value })
    }

    /// One epoch of steps followed by a test-set evaluation.
    pub fn run_epoch(&mut self, epoch: usize) -> Result<MetricsRecord> {
        let lr = self.hp.learning_rate(epoch);
        let bs = self.hp.batch_size;
        let mut lab = self.pools.labelled.clone();
        let mut unl = self.pools.unlabelled.clone();
        lab.shuffle(&mut self.rng);
        unl.shuffle(&mut self.rng);
        let steps = self.steps_per_epoch();
        let mut sum = LossBreakdown::default();
        let mut l2 = 0.0;
        let mut cursor = 0;
        for s in 0..steps {
            let (l_idx, u_idx): (Vec<usize>, &[usize]) = if unl.is_empty() {
                (lab[s * bs..((s + 1) * bs).min(lab.len())].to_vec(), &[])
            } else {
                let u = &unl[s * bs..((s + 1) * bs).min(unl.len())];
                // labelled batches cycle through the smaller pool
                let l = (0..u.len()).map(|j| lab[(cursor + j) % lab.len()]).collect();
                cursor = (cursor + u.len()) % lab.len();
                (l, u)
            };
            let r = self.train_step(&l_idx, u_idx, lr)?;
            sum.total += r.loss.total;
            sum.labelled_sce += r.loss.labelled_sce;
            sum.unlabelled_sce += r.loss.unlabelled_sce;
            sum.labelled_reg += r.loss.labelled_reg;
            sum.unlabelled_reg += r.loss.unlabelled_reg;
            l2 += r.l2;
        }
        let n = steps.max(1) as f64;
        let mean = LossBreakdown {
            total: sum.total / n,
            labelled_sce: sum.labelled_sce / n,
            unlabelled_sce: sum.unlabelled_sce / n,
            labelled_reg: sum.labelled_reg / n,
            unlabelled_reg: sum.unlabelled_reg / n,
        };
        let eval = evaluate(&self.model, &self.data.test_set(), self.gate_class)?;
        Ok(MetricsRecord::new(epoch, lr, mean, l2 / n, eval))
    }

    pub fn run(mut self, observer: &mut dyn TrainObserver) -> Result<TrainOutcome> {
        let mut history = Vec::with_capacity(self.hp.epochs);
        let mut best: Option<(f64, usize, Model)> = None;
        for epoch in 0..self.hp.epochs {
            let rec = self.run_epoch(epoch)?;
            observer.on_epoch(&rec)?;
            if best.as_ref().is_none_or(|b| rec.test_accuracy > b.0) {
                best = Some((rec.test_accuracy, epoch, self.model.clone()));
            }
            history.push(rec);
        }
        let (_, best_epoch, best) = best.expect("epochs >= 1");
        Ok(TrainOutcome {
            model: self.model,
            best,
            best_epoch,
            history,
        })
    }
}

struct OwnedTargets {
    labels: Vec<crate::ssl::ProbDist>,
    cx: Vec<f64>,
    cy: Vec<f64>,
}

impl OwnedTargets {
    fn view(&self) -> Targets<'_> {
        Targets {
            labels: &self.labels,
            cx: &self.cx,
            cy: &self.cy,
        }
    }
}

fn targets(samples: &[TrainSample]) -> OwnedTargets {
    OwnedTargets {
        labels: samples.iter().map(|s| s.label.clone()).collect(),
        cx: samples.iter().map(|s| s.centroid.x).collect(),
        cy: samples.iter().map(|s| s.centroid.y).collect(),
    }
}

/// Builds a model from `hp.seed`, trains it and reports every epoch to
/// `observer`.
pub fn train(
    model_config: &crate::model::ModelConfig,
    data: &Dataset,
    plan: &SplitPlan,
    hp: &Hyperparams,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    let registry = StrategyRegistry::default();
    let model = Model::build(model_config, hp.seed)?;
    Trainer::new(model, data, plan, hp, &registry)?.run(observer)
}
