//! Classification and regression losses, in two forms: plain `f64`
//! functions over distributions, and differentiable versions recorded on a
//! [`Graph`].

use hmx_tensor::{Element, Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{HydraError, Result};
use crate::ssl::ProbDist;

/// Lower bound applied to predicted probabilities before taking logs.
pub const PRED_FLOOR: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceConfig {
    /// Weight of the forward cross-entropy term.
    pub delta: f64,
    /// Weight of the reverse cross-entropy term.
    pub rho: f64,
    /// Floor for `ln(target)` in the reverse term; stands in for `ln 0`.
    pub log_zero_clamp: f64,
}

impl Default for SceConfig {
    fn default() -> Self {
        SceConfig::LABELLED
    }
}

impl SceConfig {
    pub const LABELLED: SceConfig = SceConfig {
        delta: 1.0,
        rho: 0.1,
        log_zero_clamp: -4.0,
    };
    pub const UNLABELLED: SceConfig = SceConfig {
        delta: 0.1,
        rho: 1.0,
        log_zero_clamp: -4.0,
    };
    /// Plain cross-entropy.
    pub const CE: SceConfig = SceConfig {
        delta: 1.0,
        rho: 0.0,
        log_zero_clamp: -4.0,
    };

    pub fn validate(&self, field: &str) -> Result<()> {
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(HydraError::Config(format!("{field}.delta: {} must be >= 0", self.delta)));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(HydraError::Config(format!("{field}.rho: {} must be >= 0", self.rho)));
        }
        if !(self.log_zero_clamp < 0.0 && self.log_zero_clamp.is_finite()) {
            return Err(HydraError::Config(format!(
                "{field}.log_zero_clamp: {} must be negative",
                self.log_zero_clamp
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JointLossConfig {
    /// Share of the classification terms; regression gets `1 - mu`.
    pub mu: f64,
    pub sce_labelled: SceConfig,
    pub sce_unlabelled: SceConfig,
}

impl Default for JointLossConfig {
    fn default() -> Self {
        JointLossConfig {
            mu: 0.8,
            sce_labelled: SceConfig::LABELLED,
            sce_unlabelled: SceConfig::UNLABELLED,
        }
    }
}

impl JointLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(HydraError::Config(format!("joint.mu: {} outside [0, 1]", self.mu)));
        }
        self.sce_labelled.validate("joint.sce_labelled")?;
        self.sce_unlabelled.validate("joint.sce_unlabelled")
    }

    /// Both classification terms replaced by plain cross-entropy.
    pub fn without_sce(&self) -> Self {
        JointLossConfig {
            mu: self.mu,
            sce_labelled: SceConfig::CE,
            sce_unlabelled: SceConfig::CE,
        }
    }
}

/// Components of one evaluation of the joint loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub labelled_sce: f64,
    pub unlabelled_sce: f64,
    /// Gated centroid MSE, x plus y.
    pub labelled_reg: f64,
    pub unlabelled_reg: f64,
}

impl LossBreakdown {
    fn assemble(mu: f64, labelled_sce: f64, unlabelled_sce: f64, labelled_reg: f64, unlabelled_reg: f64) -> Self {
        LossBreakdown {
            total: mu * (labelled_sce + unlabelled_sce) + (1.0 - mu) * (labelled_reg + unlabelled_reg),
            labelled_sce,
            unlabelled_sce,
            labelled_reg,
            unlabelled_reg,
        }
    }
}

fn same_len(op: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(HydraError::Argument(format!("{op}: length mismatch {a} vs {b}")));
    }
    Ok(())
}

/// `ln(max(t, e^clamp))`, i.e. `ln t` floored at `clamp`.
fn floored_log(t: f64, clamp: f64) -> f64 {
    if t > 0.0 {
        t.ln().max(clamp)
    } else {
        clamp
    }
}

// ---- value-level ----------------------------------------------------------

/// `-Σ target · ln(max(pred, 1e-7))`.
pub fn cross_entropy(target: &ProbDist, pred: &ProbDist) -> Result<f64> {
    same_len("cross_entropy", target.len(), pred.len())?;
    Ok(-target
        .probs()
        .iter()
        .zip(pred.probs())
        .map(|(t, p)| t * p.max(PRED_FLOOR).ln())
        .sum::<f64>())
}

/// `-Σ pred · ln(target)`, with `ln(target)` floored at `clamp`.
pub fn reverse_cross_entropy(target: &ProbDist, pred: &ProbDist, clamp: f64) -> Result<f64> {
    same_len("reverse_cross_entropy", target.len(), pred.len())?;
    Ok(-target
        .probs()
        .iter()
        .zip(pred.probs())
        .map(|(t, p)| p * floored_log(*t, clamp))
        .sum::<f64>())
}

pub fn sce(target: &ProbDist, pred: &ProbDist, cfg: &SceConfig) -> Result<f64> {
    let ce = cross_entropy(target, pred)?;
    if cfg.rho == 0.0 {
        return Ok(cfg.delta * ce);
    }
    Ok(cfg.delta * ce + cfg.rho * reverse_cross_entropy(target, pred, cfg.log_zero_clamp)?)
}

pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    gated_mse(pred, target, None)
}

/// `(1/n) Σ g_i (pred_i - target_i)²`; `gate = None` means all ones.
pub fn gated_mse(pred: &[f64], target: &[f64], gate: Option<&[f64]>) -> Result<f64> {
    same_len("mse", pred.len(), target.len())?;
    if let Some(g) = gate {
        same_len("mse gate", pred.len(), g.len())?;
    }
    if pred.is_empty() {
        return Err(HydraError::Argument("mse of empty vectors".into()));
    }
    let sum: f64 = pred
        .iter()
        .zip(target)
        .enumerate()
        .map(|(i, (p, t))| gate.map_or(1.0, |g| g[i]) * (p - t) * (p - t))
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Targets and predictions for one side (labelled or unlabelled) of a step.
#[derive(Clone, Copy, Debug)]
pub struct BatchValues<'a> {
    pub targets: &'a [ProbDist],
    pub preds: &'a [ProbDist],
    pub target_cx: &'a [f64],
    pub target_cy: &'a [f64],
    pub pred_cx: &'a [f64],
    pub pred_cy: &'a [f64],
}

impl BatchValues<'_> {
    fn len(&self) -> Result<usize> {
        let n = self.targets.len();
        for (name, m) in [
            ("preds", self.preds.len()),
            ("target_cx", self.target_cx.len()),
            ("target_cy", self.target_cy.len()),
            ("pred_cx", self.pred_cx.len()),
            ("pred_cy", self.pred_cy.len()),
        ] {
            same_len(name, n, m)?;
        }
        Ok(n)
    }

    fn terms(&self, cfg: &SceConfig, gate_class: Option<usize>) -> Result<(f64, f64)> {
        let n = self.len()?;
        if n == 0 {
            return Ok((0.0, 0.0));
        }
        let mut class = 0.0;
        for (t, p) in self.targets.iter().zip(self.preds) {
            class += sce(t, p, cfg)?;
        }
        let gate: Vec<f64> = self.preds.iter().map(|p| foreground(p.probs(), gate_class)).collect();
        let reg = gated_mse(self.pred_cx, self.target_cx, Some(&gate))?
            + gated_mse(self.pred_cy, self.target_cy, Some(&gate))?;
        Ok((class / n as f64, reg))
    }
}

fn foreground(probs: &[f64], gate_class: Option<usize>) -> f64 {
    gate_class.map_or(1.0, |c| 1.0 - probs[c])
}

/// Joint loss over a labelled and an unlabelled batch. Classification terms
/// are averaged over the batch; regression errors are weighted by
/// `1 - p(gate_class)` before averaging. An empty side contributes zero.
pub fn joint_loss(
    labelled: &BatchValues<'_>,
    unlabelled: &BatchValues<'_>,
    cfg: &JointLossConfig,
    gate_class: Option<usize>,
) -> Result<LossBreakdown> {
    cfg.validate()?;
    if labelled.len()? == 0 && unlabelled.len()? == 0 {
        return Err(HydraError::Argument("joint loss over two empty batches".into()));
    }
    let (ls, lr) = labelled.terms(&cfg.sce_labelled, gate_class)?;
    let (us, ur) = unlabelled.terms(&cfg.sce_unlabelled, gate_class)?;
    Ok(LossBreakdown::assemble(cfg.mu, ls, us, lr, ur))
}

// ---- graph-level ----------------------------------------------------------

/// Model outputs for one side of a step, already sliced out of the batch.
#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    /// `[n, C]` probabilities.
    pub probs: Var,
    pub cx: Var,
    pub cy: Var,
}

/// Targets matching a [`HeadVars`].
#[derive(Clone, Copy, Debug)]
pub struct Targets<'a> {
    pub labels: &'a [ProbDist],
    pub cx: &'a [f64],
    pub cy: &'a [f64],
}

fn const_tensor<E: Element>(g: &mut Graph<E>, shape: &[usize], values: impl Iterator<Item = f64>) -> Result<Var> {
    let data: Vec<E> = values.map(E::from_f64).collect();
    Ok(g.constant(&Tensor::new(shape, data)?))
}

/// Batch mean of `delta · CE + rho · RCE` against fixed targets.
pub fn sce_var<E: Element>(g: &mut Graph<E>, probs: Var, targets: &[ProbDist], cfg: &SceConfig) -> Result<Var> {
    let shape = g.shape(probs).to_vec();
    let n = targets.len();
    if shape.len() != 2 || shape[0] != n || targets.iter().any(|t| t.len() != shape[1]) {
        return Err(HydraError::Argument(format!(
            "sce: predictions {shape:?} do not match {n} targets"
        )));
    }
    let t = const_tensor(g, &shape, targets.iter().flat_map(|t| t.probs().iter().copied()))?;
    let logp = g.log_clamped(probs, E::from_f64(PRED_FLOOR))?;
    let ce = g.mul(logp, t)?;
    let ce = g.sum(ce);
    let mut loss = g.scale(ce, -cfg.delta / n as f64);
    if cfg.rho != 0.0 {
        let clamp = cfg.log_zero_clamp;
        let logt = const_tensor(
            g,
            &shape,
            targets.iter().flat_map(|t| t.probs().iter().map(move |&v| floored_log(v, clamp))),
        )?;
        let rce = g.mul(probs, logt)?;
        let rce = g.sum(rce);
        let rce = g.scale(rce, -cfg.rho / n as f64);
        loss = g.add(loss, rce)?;
    }
    Ok(loss)
}

/// `(1/n) Σ gate_i (pred_i - target_i)²`; `gate` is an `[n]` variable, or
/// all ones when absent.
pub fn gated_mse_var<E: Element>(g: &mut Graph<E>, pred: Var, target: &[f64], gate: Option<Var>) -> Result<Var> {
    let n = target.len();
    let gate_ok = gate.is_none_or(|w| g.shape(w) == [n]);
    if g.shape(pred) != [n] || !gate_ok || n == 0 {
        return Err(HydraError::Argument(format!(
            "mse: prediction {:?} and gate {:?} for {n} targets",
            g.shape(pred),
            gate.map(|w| g.shape(w).to_vec()),
        )));
    }
    let t = const_tensor(g, &[n], target.iter().copied())?;
    let d = g.sub(pred, t)?;
    let mut sq = g.mul(d, d)?;
    if let Some(w) = gate {
        sq = g.mul(sq, w)?;
    }
    let s = g.sum(sq);
    Ok(g.scale(s, 1.0 / n as f64))
}

/// `1 - probs[:, class]` as an `[n]` variable. Gradients flow back into the
/// class head, so regression error also nudges the background probability.
pub fn foreground_var<E: Element>(g: &mut Graph<E>, probs: Var, class: usize) -> Result<Var> {
    let shape = g.shape(probs).to_vec();
    if shape.len() != 2 || class >= shape[1] {
        return Err(HydraError::Argument(format!(
            "foreground: class {class} out of range for probabilities {shape:?}"
        )));
    }
    let pick = const_tensor(g, &[shape[1], 1], (0..shape[1]).map(|i| if i == class { -1.0 } else { 0.0 }))?;
    let neg = g.matmul(probs, pick)?;
    let fg = g.add_scalar(neg, 1.0);
    Ok(g.reshape(fg, &[shape[0]])?)
}

fn side_vars<E: Element>(
    g: &mut Graph<E>,
    side: Option<(HeadVars, Targets<'_>)>,
    cfg: &SceConfig,
    gate_class: Option<usize>,
) -> Result<Option<(Var, Var)>> {
    let Some((h, t)) = side else {
        return Ok(None);
    };
    if t.labels.is_empty() {
        return Ok(None);
    }
    let class = sce_var(g, h.probs, t.labels, cfg)?;
    let gate = gate_class.map(|k| foreground_var(g, h.probs, k)).transpose()?;
    let rx = gated_mse_var(g, h.cx, t.cx, gate)?;
    let ry = gated_mse_var(g, h.cy, t.cy, gate)?;
    Ok(Some((class, g.add(rx, ry)?)))
}

/// Differentiable joint loss. Returns the scalar to minimise and its
/// components.
pub fn joint_loss_var<E: Element>(
    g: &mut Graph<E>,
    labelled: Option<(HeadVars, Targets<'_>)>,
    unlabelled: Option<(HeadVars, Targets<'_>)>,
    cfg: &JointLossConfig,
    gate_class: Option<usize>,
) -> Result<(Var, LossBreakdown)> {
    cfg.validate()?;
    let l = side_vars(g, labelled, &cfg.sce_labelled, gate_class)?;
    let u = side_vars(g, unlabelled, &cfg.sce_unlabelled, gate_class)?;
    let parts: Vec<(Var, Var)> = l.iter().chain(u.iter()).copied().collect();
    if parts.is_empty() {
        return Err(HydraError::Argument("joint loss over two empty batches".into()));
    }
    let mut total: Option<Var> = None;
    for (class, reg) in parts {
        let a = g.scale(class, cfg.mu);
        let b = g.scale(reg, 1.0 - cfg.mu);
        let s = g.add(a, b)?;
        total = Some(match total {
            Some(t) => g.add(t, s)?,
            None => s,
        });
    }
    let read = |g: &Graph<E>, v: Option<Var>| v.map_or(0.0, |v| g.value(v).data()[0].to_f64());
    let breakdown = LossBreakdown::assemble(
        cfg.mu,
        read(g, l.map(|p| p.0)),
        read(g, u.map(|p| p.0)),
        read(g, l.map(|p| p.1)),
        read(g, u.map(|p| p.1)),
    );
    Ok((total.expect("non-empty"), breakdown))
}
