//! Wide residual backbone with one classification head and two centroid
//! regression heads.
//!
//! Layout (NHWC):
//!
//! ```text
//! conv3x3(3 -> 16)
//! 3 groups × n pre-activation blocks, widths 16k / 32k / 64k, strides 1 / 2 / 2
//! bn -> relu                                         (final feature map)
//! ├─ gap -> dense 128 -> 64 -> 32 -> C -> softmax    (class distribution)
//! ├─ flatten -> dense 128 -> 32 -> 1 -> sigmoid      (centroid x)
//! └─ flatten -> dense 128 -> 32 -> 1 -> sigmoid      (centroid y)
//! ```
//!
//! with `n = (depth - 4) / 6` and `k = width`.

use std::collections::HashMap;
use std::path::Path;

use hmx_tensor::{checkpoint, BatchNormMode, BatchStats, Element, Graph, Padding, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HydraError, Result};
use crate::image::{Centroid, Image, CHANNELS};
use crate::ssl::ProbDist;

pub const BN_EPS: f64 = 1e-5;
/// Weight of the previous running value in the batch-norm running averages.
pub const BN_MOMENTUM: f64 = 0.9;
const CLASS_HEAD: [usize; 3] = [128, 64, 32];
const REGRESSION_HEAD: [usize; 2] = [128, 32];
const PREDICT_CHUNK: usize = 64;
/// Checkpoint entry holding the model config as UTF-8 JSON, one byte per value.
pub const CONFIG_TENSOR: &str = "meta.model_config";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub depth: usize,
    pub width: usize,
    pub num_classes: usize,
    pub l2_coeff: f64,
    pub input_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            depth: 10,
            width: 1,
            num_classes: 3,
            l2_coeff: 5e-4,
            input_size: 41,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 10 || !(self.depth - 4).is_multiple_of(6) {
            return Err(HydraError::Config(format!(
                "model.depth: {} is not of the form 6n + 4 with n >= 1",
                self.depth
            )));
        }
        if self.width == 0 {
            return Err(HydraError::Config("model.width: must be at least 1".into()));
        }
        if self.num_classes < 2 {
            return Err(HydraError::Config(format!(
                "model.num_classes: {} is below 2",
                self.num_classes
            )));
        }
        if !(self.l2_coeff >= 0.0) {
            return Err(HydraError::Config(format!(
                "model.l2_coeff: {} is negative",
                self.l2_coeff
            )));
        }
        if self.input_size < 4 {
            return Err(HydraError::Config(format!(
                "model.input_size: {} is too small",
                self.input_size
            )));
        }
        Ok(())
    }

    pub fn blocks_per_group(&self) -> usize {
        (self.depth - 4) / 6
    }

    pub fn group_widths(&self) -> [usize; 3] {
        [16 * self.width, 32 * self.width, 64 * self.width]
    }

    /// Spatial side of the final feature map.
    pub fn feature_side(&self) -> usize {
        self.input_size.div_ceil(2).div_ceil(2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Conv,
    DenseWeight,
    DenseBias,
    BnGamma,
    BnBeta,
}

#[derive(Clone, Debug)]
pub struct Param<E: Element> {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor<E>,
}

#[derive(Clone, Debug)]
struct BnLayer {
    gamma: usize,
    beta: usize,
    running: usize,
}

#[derive(Clone, Debug)]
struct RunningStats<E: Element> {
    name: String,
    mean: Tensor<E>,
    var: Tensor<E>,
}

#[derive(Clone, Debug)]
struct Block {
    bn1: BnLayer,
    conv1: usize,
    bn2: BnLayer,
    conv2: usize,
    shortcut: Option<usize>,
    stride: usize,
}

#[derive(Clone, Copy, Debug)]
struct Dense {
    weight: usize,
    bias: usize,
}

#[derive(Clone, Debug)]
struct Layout {
    stem: usize,
    blocks: Vec<Block>,
    final_bn: BnLayer,
    class_head: Vec<Dense>,
    x_head: Vec<Dense>,
    y_head: Vec<Dense>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Graph handles of a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    /// `[n, C]` class probabilities.
    pub probs: Var,
    /// `[n]` centroid x in `[0, 1]`.
    pub cx: Var,
    /// `[n]` centroid y in `[0, 1]`.
    pub cy: Var,
    /// One leaf per entry of [`Model::params`], same order.
    pub params: Vec<Var>,
    /// Batch statistics per batch-norm layer (train mode only).
    pub batch_stats: Vec<BatchStats>,
}

/// Per-sample model output.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub probs: ProbDist,
    pub centroid: Centroid,
}

/// Anything that maps images to predictions. Implemented by [`Model`] and by
/// test doubles.
pub trait Predictor {
    fn num_classes(&self) -> usize;
    fn predict(&self, images: &[&Image]) -> Result<Vec<Prediction>>;
}

#[derive(Clone, Debug)]
pub struct Model<E: Element = f32> {
    config: ModelConfig,
    params: Vec<Param<E>>,
    running: Vec<RunningStats<E>>,
    layout: Layout,
}

struct Builder<'a, E: Element> {
    params: Vec<Param<E>>,
    running: Vec<RunningStats<E>>,
    rng: Option<&'a mut ChaCha8Rng>,
}

impl<E: Element> Builder<'_, E> {
    fn he_uniform(&mut self, name: String, kind: ParamKind, shape: &[usize], fan_in: usize) -> usize {
        let limit = (6.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = match self.rng.as_deref_mut() {
            Some(rng) => (0..n).map(|_| E::from_f64(rng.gen_range(-limit..limit))).collect(),
            None => vec![E::ZERO; n],
        };
        self.push(name, kind, Tensor::new(shape, data).expect("shape/data agree"))
    }

    fn constant(&mut self, name: String, kind: ParamKind, shape: &[usize], value: f64) -> usize {
        self.push(name, kind, Tensor::full(shape, E::from_f64(value)))
    }

    fn push(&mut self, name: String, kind: ParamKind, tensor: Tensor<E>) -> usize {
        self.params.push(Param {
            name,
            kind,
            tensor: tensor.with_requires_grad(true),
        });
        self.params.len() - 1
    }

    fn conv(&mut self, name: String, k: usize, cin: usize, cout: usize) -> usize {
        self.he_uniform(name, ParamKind::Conv, &[k, k, cin, cout], k * k * cin)
    }

    fn bn(&mut self, name: String, c: usize) -> BnLayer {
        let gamma = self.constant(format!("{name}.gamma"), ParamKind::BnGamma, &[c], 1.0);
        let beta = self.constant(format!("{name}.beta"), ParamKind::BnBeta, &[c], 0.0);
        self.running.push(RunningStats {
            name,
            mean: Tensor::zeros(&[c]),
            var: Tensor::ones(&[c]),
        });
        BnLayer {
            gamma,
            beta,
            running: self.running.len() - 1,
        }
    }

    fn dense_stack(&mut self, name: &str, mut fan_in: usize, widths: &[usize]) -> Vec<Dense> {
        let mut layers = Vec::new();
        for (i, &w) in widths.iter().enumerate() {
            let weight = self.he_uniform(format!("{name}.{i}.weight"), ParamKind::DenseWeight, &[fan_in, w], fan_in);
            let bias = self.constant(format!("{name}.{i}.bias"), ParamKind::DenseBias, &[w], 0.0);
            layers.push(Dense { weight, bias });
            fan_in = w;
        }
        layers
    }
}

impl<E: Element> Model<E> {
    /// Fresh He-uniform initialised model. Same seed, same weights.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::assemble(config, Some(&mut rng))
    }

    fn assemble(config: &ModelConfig, rng: Option<&mut ChaCha8Rng>) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            params: Vec::new(),
            running: Vec::new(),
            rng,
        };
        let widths = config.group_widths();
        let stem = b.conv("stem.conv".into(), 3, CHANNELS, 16);
        let mut blocks = Vec::new();
        let mut cin = 16;
        for (gi, (&cout, stride)) in widths.iter().zip([1usize, 2, 2]).enumerate() {
            for bi in 0..config.blocks_per_group() {
                let name = format!("group{gi}.block{bi}");
                let stride = if bi == 0 { stride } else { 1 };
                let bn1 = b.bn(format!("{name}.bn1"), cin);
                let conv1 = b.conv(format!("{name}.conv1"), 3, cin, cout);
                let bn2 = b.bn(format!("{name}.bn2"), cout);
                let conv2 = b.conv(format!("{name}.conv2"), 3, cout, cout);
                let shortcut = (cin != cout || stride != 1).then(|| b.conv(format!("{name}.shortcut"), 1, cin, cout));
                blocks.push(Block {
                    bn1,
                    conv1,
                    bn2,
                    conv2,
                    shortcut,
                    stride,
                });
                cin = cout;
            }
        }
        let final_bn = b.bn("final.bn".into(), cin);
        let mut class_widths = CLASS_HEAD.to_vec();
        class_widths.push(config.num_classes);
        let class_head = b.dense_stack("head.class", cin, &class_widths);
        let flat = config.feature_side() * config.feature_side() * cin;
        let mut reg_widths = REGRESSION_HEAD.to_vec();
        reg_widths.push(1);
        let x_head = b.dense_stack("head.cx", flat, &reg_widths);
        let y_head = b.dense_stack("head.cy", flat, &reg_widths);
        Ok(Model {
            config: config.clone(),
            params: b.params,
            running: b.running,
            layout: Layout {
                stem,
                blocks,
                final_bn,
                class_head,
                x_head,
                y_head,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param<E>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<E>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn cast<F: Element>(&self) -> Model<F> {
        Model {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    kind: p.kind,
                    tensor: p.tensor.cast(),
                })
                .collect(),
            running: self
                .running
                .iter()
                .map(|r| RunningStats {
                    name: r.name.clone(),
                    mean: r.mean.cast(),
                    var: r.var.cast(),
                })
                .collect(),
            layout: self.layout.clone(),
        }
    }

    fn batchnorm(
        &self,
        g: &mut Graph<E>,
        x: Var,
        bn: &BnLayer,
        pv: &[Var],
        mode: Mode,
        stats: &mut Vec<BatchStats>,
    ) -> Result<Var> {
        let r = &self.running[bn.running];
        let m = match mode {
            Mode::Train => BatchNormMode::Train,
            Mode::Eval => BatchNormMode::Eval {
                mean: r.mean.data(),
                var: r.var.data(),
            },
        };
        let (y, s) = g.batchnorm(x, pv[bn.gamma], pv[bn.beta], m, BN_EPS)?;
        if let Some(s) = s {
            stats.push(s);
        }
        Ok(y)
    }

    fn dense(g: &mut Graph<E>, x: Var, layers: &[Dense], pv: &[Var]) -> Result<Var> {
        let mut h = x;
        for (i, l) in layers.iter().enumerate() {
            h = g.matmul(h, pv[l.weight])?;
            h = g.add_bias(h, pv[l.bias])?;
            if i + 1 < layers.len() {
                h = g.relu(h);
            }
        }
        Ok(h)
    }

    /// Records a forward pass of an `[n, s, s, 3]` batch on `g`.
    ///
    /// Train mode normalises with batch statistics and returns them; feed them
    /// to [`Model::update_running_stats`] after the step. Eval mode reads the
    /// running statistics and leaves the model untouched.
    pub fn forward(&self, g: &mut Graph<E>, input: &Tensor<E>, mode: Mode) -> Result<ForwardVars> {
        let s = self.config.input_size;
        let shape = input.shape();
        if shape.len() != 4 || shape[1] != s || shape[2] != s || shape[3] != CHANNELS {
            return Err(hmx_tensor::TensorError::Shape {
                op: "model input",
                lhs: shape.to_vec(),
                rhs: vec![shape.first().copied().unwrap_or(0), s, s, CHANNELS],
            }
            .into());
        }
        let n = shape[0];
        let pv: Vec<Var> = self.params.iter().map(|p| g.param(&p.tensor)).collect();
        let mut stats = Vec::new();
        let x = g.constant(input);
        let mut h = g.conv2d(x, pv[self.layout.stem], 1, Padding::Same)?;
        for blk in &self.layout.blocks {
            let o = self.batchnorm(g, h, &blk.bn1, &pv, mode, &mut stats)?;
            let o = g.relu(o);
            let y = g.conv2d(o, pv[blk.conv1], blk.stride, Padding::Same)?;
            let y = self.batchnorm(g, y, &blk.bn2, &pv, mode, &mut stats)?;
            let y = g.relu(y);
            let y = g.conv2d(y, pv[blk.conv2], 1, Padding::Same)?;
            let skip = match blk.shortcut {
                Some(sc) => g.conv2d(o, pv[sc], blk.stride, Padding::Same)?,
                None => h,
            };
            h = g.add(y, skip)?;
        }
        let h = self.batchnorm(g, h, &self.layout.final_bn, &pv, mode, &mut stats)?;
        let feat = g.relu(h);

        let pooled = g.global_avg_pool(feat)?;
        let logits = Self::dense(g, pooled, &self.layout.class_head, &pv)?;
        let probs = g.softmax(logits)?;

        let flat = g.flatten(feat)?;
        let mut centroid = [Var::clone(&flat); 2];
        for (slot, head) in centroid.iter_mut().zip([&self.layout.x_head, &self.layout.y_head]) {
            let raw = Self::dense(g, flat, head, &pv)?;
            let raw = g.sigmoid(raw);
            *slot = g.reshape(raw, &[n])?;
        }
        Ok(ForwardVars {
            probs,
            cx: centroid[0],
            cy: centroid[1],
            params: pv,
            batch_stats: stats,
        })
    }

    /// Folds train-mode batch statistics into the running averages.
    pub fn update_running_stats(&mut self, stats: &[BatchStats]) -> Result<()> {
        if stats.len() != self.running.len() {
            return Err(HydraError::Argument(format!(
                "expected {} batch-norm statistics, got {}",
                self.running.len(),
                stats.len()
            )));
        }
        for (r, s) in self.running.iter_mut().zip(stats) {
            for (m, b) in r.mean.data_mut().iter_mut().zip(&s.mean) {
                *m = E::from_f64(BN_MOMENTUM * m.to_f64() + (1.0 - BN_MOMENTUM) * b);
            }
            for (v, b) in r.var.data_mut().iter_mut().zip(&s.var) {
                *v = E::from_f64(BN_MOMENTUM * v.to_f64() + (1.0 - BN_MOMENTUM) * b);
            }
        }
        Ok(())
    }

    fn dense_weights(&self) -> impl Iterator<Item = (usize, &Param<E>)> {
        self.params
            .iter()
            .enumerate()
            .filter(|(_, p)| p.kind == ParamKind::DenseWeight)
    }

    /// `l2_coeff · Σ w²` over all dense weight matrices.
    pub fn l2_penalty(&self) -> f64 {
        let sq: f64 = self
            .dense_weights()
            .flat_map(|(_, p)| p.tensor.data().iter())
            .map(|w| w.to_f64() * w.to_f64())
            .sum();
        self.config.l2_coeff * sq
    }

    /// Differentiable form of [`Model::l2_penalty`] over the leaves of a forward pass.
    pub fn l2_penalty_var(&self, g: &mut Graph<E>, params: &[Var]) -> Result<Var> {
        let mut total: Option<Var> = None;
        for (i, _) in self.dense_weights() {
            let sq = g.mul(params[i], params[i])?;
            let s = g.sum(sq);
            total = Some(match total {
                Some(t) => g.add(t, s)?,
                None => s,
            });
        }
        let total = match total {
            Some(t) => t,
            None => g.constant(&Tensor::scalar(E::ZERO)),
        };
        Ok(g.scale(total, self.config.l2_coeff))
    }

    /// Stacks images into an `[n, s, s, 3]` tensor.
    pub fn batch_tensor(&self, images: &[&Image]) -> Result<Tensor<E>> {
        let s = self.config.input_size;
        let mut data = Vec::with_capacity(images.len() * s * s * CHANNELS);
        for img in images {
            if img.side() != s {
                return Err(HydraError::Argument(format!(
                    "image side {} does not match model input size {s}",
                    img.side()
                )));
            }
            data.extend(img.data().iter().map(|&v| E::from_f64(v as f64)));
        }
        Ok(Tensor::new(&[images.len(), s, s, CHANNELS], data)?)
    }

    /// Reads per-sample predictions out of a finished forward pass.
    pub fn read_predictions(g: &Graph<E>, fwd: &ForwardVars) -> Result<Vec<Prediction>> {
        let probs = g.value(fwd.probs);
        let c = probs.shape()[1];
        let cx = g.value(fwd.cx).data();
        let cy = g.value(fwd.cy).data();
        probs
            .data()
            .chunks(c)
            .zip(cx.iter().zip(cy))
            .map(|(row, (x, y))| {
                Ok(Prediction {
                    probs: ProbDist::from_weights(row.iter().map(|v| v.to_f64()))?,
                    centroid: Centroid::new(x.to_f64(), y.to_f64()),
                })
            })
            .collect()
    }

    // ---- checkpoints -------------------------------------------------------

    /// Model config (as JSON bytes), parameters and running statistics as
    /// named tensors.
    pub fn to_named_tensors(&self) -> checkpoint::NamedTensors {
        let json = serde_json::to_vec(&self.config).expect("config serialises");
        let bytes: Vec<f32> = json.iter().map(|&b| b as f32).collect();
        let mut out: checkpoint::NamedTensors = vec![(
            CONFIG_TENSOR.to_string(),
            Tensor::new(&[bytes.len()], bytes).expect("rank-1 shape"),
        )];
        for p in &self.params {
            out.push((p.name.clone(), p.tensor.cast()));
        }
        for r in &self.running {
            out.push((format!("{}.running_mean", r.name), r.mean.cast()));
            out.push((format!("{}.running_var", r.name), r.var.cast()));
        }
        out
    }

    pub fn from_named_tensors(tensors: checkpoint::NamedTensors) -> Result<Self> {
        let mut map: HashMap<String, Tensor<f32>> = tensors.into_iter().collect();
        let raw = map
            .remove(CONFIG_TENSOR)
            .ok_or_else(|| HydraError::parse(CONFIG_TENSOR, "missing from checkpoint"))?;
        let bytes: Vec<u8> = raw
            .data()
            .iter()
            .map(|&v| {
                (v.fract() == 0.0 && (0.0..=255.0).contains(&v))
                    .then_some(v as u8)
                    .ok_or_else(|| HydraError::parse(CONFIG_TENSOR, format!("{v} is not a byte")))
            })
            .collect::<Result<_>>()?;
        let config: ModelConfig =
            serde_json::from_slice(&bytes).map_err(|e| HydraError::parse(CONFIG_TENSOR, e.to_string()))?;
        let mut model = Self::assemble(&config, None)?;
        let mut take = |name: &str, shape: &[usize]| -> Result<Tensor<E>> {
            let t = map
                .remove(name)
                .ok_or_else(|| HydraError::parse(name, "missing from checkpoint"))?;
            if t.shape() != shape {
                return Err(HydraError::parse(
                    name,
                    format!("shape {:?}, expected {shape:?}", t.shape()),
                ));
            }
            Ok(t.cast())
        };
        for p in &mut model.params {
            p.tensor = take(&p.name, p.tensor.shape())?.with_requires_grad(true);
        }
        for r in &mut model.running {
            r.mean = take(&format!("{}.running_mean", r.name), r.mean.shape())?;
            r.var = take(&format!("{}.running_var", r.name), r.var.shape())?;
        }
        if let Some(extra) = map.keys().next() {
            return Err(HydraError::parse(extra.clone(), "unexpected tensor in checkpoint"));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.to_named_tensors()).map_err(|e| HydraError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let tensors = checkpoint::load(path).map_err(|e| HydraError::io(path, e))?;
        Self::from_named_tensors(tensors)
    }
}

impl<E: Element> Predictor for Model<E> {
    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    /// Eval-mode predictions, computed in fixed-size chunks.
    fn predict(&self, images: &[&Image]) -> Result<Vec<Prediction>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(PREDICT_CHUNK) {
            let mut g = Graph::<E>::inference();
            let input = self.batch_tensor(chunk)?;
            let fwd = self.forward(&mut g, &input, Mode::Eval)?;
            out.extend(Self::read_predictions(&g, &fwd)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent per-layer shape walk.
    fn expected_params(depth: usize, width: usize, classes: usize, input: usize) -> usize {
        let n = (depth - 4) / 6;
        let conv = |k: usize, i: usize, o: usize| k * k * i * o;
        let bn = |c: usize| 2 * c;
        let dense = |i: usize, o: usize| i * o + o;
        let mut total = conv(3, 3, 16);
        let mut cin = 16;
        for (g, cout) in [16 * width, 32 * width, 64 * width].into_iter().enumerate() {
            for b in 0..n {
                total += bn(cin) + conv(3, cin, cout) + bn(cout) + conv(3, cout, cout);
                let stride = if b == 0 && g > 0 { 2 } else { 1 };
                if cin != cout || stride != 1 {
                    total += conv(1, cin, cout);
                }
                cin = cout;
            }
        }
        total += bn(cin);
        total += dense(cin, 128) + dense(128, 64) + dense(64, 32) + dense(32, classes);
        let side = input.div_ceil(2);
        let side = side.div_ceil(2);
        let flat = side * side * cin;
        total += 2 * (dense(flat, 128) + dense(128, 32) + dense(32, 1));
        total
    }

    #[test]
    fn param_count_matches_shape_walk() {
        for (d, w, c, s) in [(10, 1, 3, 41), (16, 2, 4, 41), (22, 1, 2, 17), (10, 3, 5, 20)] {
            let cfg = ModelConfig {
                depth: d,
                width: w,
                num_classes: c,
                input_size: s,
                ..Default::default()
            };
            let m = Model::<f32>::build(&cfg, 0).unwrap();
            assert_eq!(m.param_count(), expected_params(d, w, c, s), "{cfg:?}");
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        for cfg in [
            ModelConfig { depth: 12, ..Default::default() },
            ModelConfig { depth: 4, ..Default::default() },
            ModelConfig { width: 0, ..Default::default() },
            ModelConfig { num_classes: 1, ..Default::default() },
        ] {
            assert!(matches!(Model::<f32>::build(&cfg, 0), Err(HydraError::Config(_))));
        }
    }

    #[test]
    fn same_seed_same_weights() {
        let cfg = ModelConfig::default();
        let a = Model::<f32>::build(&cfg, 7).unwrap();
        let b = Model::<f32>::build(&cfg, 7).unwrap();
        let c = Model::<f32>::build(&cfg, 8).unwrap();
        for ((pa, pb), pc) in a.params().iter().zip(b.params()).zip(c.params()) {
            assert_eq!(pa.tensor, pb.tensor);
            if pa.kind == ParamKind::Conv {
                assert_ne!(pa.tensor, pc.tensor);
            }
        }
    }

    #[test]
    fn forward_shapes_and_distribution() {
        let m = Model::<f32>::build(&ModelConfig::default(), 1).unwrap();
        let imgs: Vec<Image> = (0..2).map(|i| Image::filled(41, 0.2 + 0.3 * i as f32)).collect();
        let refs: Vec<&Image> = imgs.iter().collect();
        let mut g = Graph::inference();
        let fwd = m.forward(&mut g, &m.batch_tensor(&refs).unwrap(), Mode::Eval).unwrap();
        assert_eq!(g.shape(fwd.probs), &[2, 3]);
        assert_eq!(g.shape(fwd.cx), &[2]);
        assert_eq!(g.shape(fwd.cy), &[2]);
        for row in g.value(fwd.probs).data().chunks(3) {
            let s: f64 = row.iter().map(|&v| v as f64).sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn eval_forward_is_pure_and_repeatable() {
        let m = Model::<f32>::build(&ModelConfig::default(), 2).unwrap();
        let img = Image::filled(41, 0.4);
        let a = m.predict(&[&img]).unwrap();
        let b = m.predict(&[&img]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_spatial_extent_is_dimension_error() {
        let m = Model::<f32>::build(&ModelConfig::default(), 2).unwrap();
        let mut g = Graph::inference();
        let bad = Tensor::zeros(&[1, 32, 32, 3]);
        assert!(matches!(
            m.forward(&mut g, &bad, Mode::Eval),
            Err(HydraError::Tensor(hmx_tensor::TensorError::Shape { .. }))
        ));
    }

    #[test]
    fn l2_penalty_arithmetic() {
        let mut m = Model::<f64>::build(&ModelConfig { l2_coeff: 0.5, ..Default::default() }, 0).unwrap();
        for p in m.params_mut() {
            p.tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        assert_eq!(m.l2_penalty(), 0.0);
        // one dense weight holding [1, 2], everything else zero
        let first = m.params().iter().position(|p| p.kind == ParamKind::DenseWeight).unwrap();
        m.params_mut()[first].tensor.data_mut()[0] = 1.0;
        m.params_mut()[first].tensor.data_mut()[1] = 2.0;
        assert!((m.l2_penalty() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let cfg = ModelConfig {
            num_classes: 4,
            ..Default::default()
        };
        let m = Model::<f32>::build(&cfg, 3).unwrap();
        let back = Model::<f32>::from_named_tensors(m.to_named_tensors()).unwrap();
        assert_eq!(back.config(), &cfg);
        for (a, b) in m.params().iter().zip(back.params()) {
            assert_eq!(a.tensor, b.tensor);
        }
    }
}
