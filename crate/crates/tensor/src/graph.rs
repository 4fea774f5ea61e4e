//! Define-by-run computation graph.
//!
//! Ops append nodes in execution order, so the node list is already a
//! topological order and backward is a single reverse sweep.

use std::sync::Arc;

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::kernels::{self, TapGrid, Window};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`]. Only meaningful for the graph that made it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

/// Batch normalisation statistics source.
#[derive(Clone, Copy, Debug)]
pub enum BatchNormMode<'a, E: Element> {
    /// Normalise with the statistics of the current batch.
    Train,
    /// Normalise with externally held running statistics.
    Eval { mean: &'a [E], var: &'a [E] },
}

/// Per-channel statistics of a training-mode batch norm (biased variance).
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

enum Op<E: Element> {
    Leaf,
    MatMul(Var, Var),
    Conv2d {
        x: Var,
        kernel: Var,
        win: Window,
        /// Padded input (tap path) or unrolled input (im2col path), kept
        /// for the kernel gradient.
        saved: Option<Vec<E>>,
    },
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    Log(Var),
    LogClamped(Var, E),
    GlobalAvgPool(Var),
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, E),
    AddScalar(Var),
    Sum(Var),
    Mean(Var),
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<E>,
        inv_std: Vec<f64>,
        train: bool,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
}

struct Node<E: Element> {
    value: Tensor<E>,
    op: Op<E>,
    requires_grad: bool,
}

pub struct Graph<E: Element = f32> {
    nodes: Vec<Node<E>>,
    grads: Vec<Option<Vec<E>>>,
    recording: bool,
    backward_done: bool,
}

impl<E: Element> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Graph<E> {
    /// A graph that records everything needed for [`Graph::backward`].
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            recording: true,
            backward_done: false,
        }
    }

    /// A forward-only graph: nothing is saved for backward and no node
    /// requires a gradient.
    pub fn inference() -> Self {
        Graph {
            recording: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<E> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a leaf; it is differentiable iff the tensor says so.
    pub fn leaf(&mut self, t: &Tensor<E>) -> Var {
        let requires_grad = self.recording && t.requires_grad();
        let value = Tensor::from_parts(t.shape().to_vec(), t.shared_data());
        self.push_node(value, Op::Leaf, requires_grad)
    }

    /// Records a differentiable leaf regardless of the tensor's own flag.
    pub fn param(&mut self, t: &Tensor<E>) -> Var {
        let value = Tensor::from_parts(t.shape().to_vec(), t.shared_data());
        let rg = self.recording;
        self.push_node(value, Op::Leaf, rg)
    }

    pub fn constant(&mut self, t: &Tensor<E>) -> Var {
        let value = Tensor::from_parts(t.shape().to_vec(), t.shared_data());
        self.push_node(value, Op::Leaf, false)
    }

    fn push_node(&mut self, value: Tensor<E>, op: Op<E>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<E>, op: Op<E>, inputs: &[Var]) -> Var {
        let rg = self.recording && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_node(Tensor::from_parts(shape, Arc::new(data)), op, rg)
    }

    fn data(&self, v: Var) -> &[E] {
        self.nodes[v.0].value.data()
    }

    // ---- forward ops -------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![E::ZERO; m * n];
        E::gemm(
            m,
            k,
            n,
            self.data(a),
            (k as isize, 1),
            self.data(b),
            (n as isize, 1),
            E::ZERO,
            &mut out,
            (n as isize, 1),
        );
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), &[a, b]))
    }

    /// Cross-correlation of NHWC `x` with a `[kh, kw, c, f]` kernel.
    pub fn conv2d(&mut self, x: Var, kernel: Var, stride: usize, padding: Padding) -> Result<Var> {
        let (sx, sk) = (self.shape(x), self.shape(kernel));
        if sx.len() != 4 || sk.len() != 4 || sx[3] != sk[2] || stride == 0 {
            return Err(TensorError::shape("conv2d", sx, sk));
        }
        let (n, h, w, c) = (sx[0], sx[1], sx[2], sx[3]);
        let (kh, kw, f) = (sk[0], sk[1], sk[3]);
        let (out_h, pad_top, out_w, pad_left) = match padding {
            Padding::Same => {
                if kh == 0 || kw == 0 || h == 0 || w == 0 {
                    return Err(TensorError::shape("conv2d", sx, sk));
                }
                let (oh, pt) = kernels::same_padding(h, kh, stride);
                let (ow, pl) = kernels::same_padding(w, kw, stride);
                (oh, pt, ow, pl)
            }
            Padding::Valid => {
                let oh = kernels::valid_extent(h, kh, stride);
                let ow = kernels::valid_extent(w, kw, stride);
                match (oh, ow) {
                    (Some(oh), Some(ow)) => (oh, 0, ow, 0),
                    _ => return Err(TensorError::shape("conv2d", sx, sk)),
                }
            }
        };
        let win = Window {
            n,
            h,
            w,
            c,
            kh,
            kw,
            stride,
            pad_top,
            pad_left,
            out_h,
            out_w,
        };
        let keep = self.recording && self.nodes[kernel.0].requires_grad;
        let (out, saved) = if win.uses_taps() {
            let grid = TapGrid::new(&win);
            let padded = kernels::pad_input(self.data(x), &win, &grid);
            let out = kernels::conv_taps(&padded, self.data(kernel), f, &win, &grid);
            (out, padded)
        } else {
            let rows = win.rows();
            let plen = win.patch_len();
            let cols = if win.is_pointwise() {
                Vec::new()
            } else {
                kernels::im2col(self.data(x), &win)
            };
            let mut out = vec![E::ZERO; rows * f];
            E::gemm(
                rows,
                plen,
                f,
                if win.is_pointwise() { self.data(x) } else { &cols },
                (plen as isize, 1),
                self.data(kernel),
                (f as isize, 1),
                E::ZERO,
                &mut out,
                (f as isize, 1),
            );
            (out, cols)
        };
        let op = Op::Conv2d {
            x,
            kernel,
            win,
            saved: (keep && !saved.is_empty()).then_some(saved),
        };
        Ok(self.push(vec![n, out_h, out_w, f], out, op, &[x, kernel]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.data(x).iter().map(|&v| if v > E::ZERO { v } else { E::ZERO }).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self
            .data(x)
            .iter()
            .map(|&v| {
                let v = v.to_f64();
                let s = if v >= 0.0 {
                    1.0 / (1.0 + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (1.0 + e)
                };
                E::from_f64(s)
            })
            .collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::Sigmoid(x), &[x])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let last = *shape
            .last()
            .ok_or_else(|| TensorError::Contract("softmax of a rank-0 tensor".into()))?;
        if last == 0 {
            return Err(TensorError::shape("softmax", &shape, &[]));
        }
        let mut out = Vec::with_capacity(self.data(x).len());
        for row in self.data(x).chunks(last) {
            let max = row.iter().map(|v| v.to_f64()).fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v.to_f64() - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            out.extend(exps.iter().map(|e| E::from_f64(e / total)));
        }
        Ok(self.push(shape, out, Op::Softmax(x), &[x]))
    }

    /// Natural log; any non-positive input is a domain error.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(i) = self.data(x).iter().position(|&v| !(v > E::ZERO)) {
            return Err(TensorError::Domain {
                op: "log",
                msg: format!("non-positive input {} at flat index {i}", self.data(x)[i]),
            });
        }
        let out = self.data(x).iter().map(|&v| v.ln()).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, out, Op::Log(x), &[x]))
    }

    /// `ln(max(x, floor))`; zero gradient where the floor is active.
    pub fn log_clamped(&mut self, x: Var, floor: E) -> Result<Var> {
        if !(floor > E::ZERO) {
            return Err(TensorError::Domain {
                op: "log_clamped",
                msg: format!("floor must be positive, got {floor}"),
            });
        }
        let out = self
            .data(x)
            .iter()
            .map(|&v| if v > floor { v.ln() } else { floor.ln() })
            .collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, out, Op::LogClamped(x, floor), &[x]))
    }

    /// `[n, h, w, c]` → `[n, c]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || s[1] * s[2] == 0 {
            return Err(TensorError::shape("global_avg_pool", &s, &[]));
        }
        let (n, hw, c) = (s[0], s[1] * s[2], s[3]);
        let xs = self.data(x);
        let mut out = Vec::with_capacity(n * c);
        for img in xs.chunks(hw * c) {
            let mut acc = vec![0.0f64; c];
            for px in img.chunks(c) {
                for (a, v) in acc.iter_mut().zip(px) {
                    *a += v.to_f64();
                }
            }
            out.extend(acc.iter().map(|a| E::from_f64(a / hw as f64)));
        }
        Ok(self.push(vec![n, c], out, Op::GlobalAvgPool(x), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let s = self.shape(x);
        if shape.iter().product::<usize>() != s.iter().product::<usize>() {
            return Err(TensorError::shape("reshape", s, shape));
        }
        let data = self.nodes[x.0].value.shared_data();
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push_node(Tensor::from_parts(shape.to_vec(), data), Op::Reshape(x), rg))
    }

    /// Collapses all but the leading axis.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.is_empty() {
            return Err(TensorError::Contract("flatten of a rank-0 tensor".into()));
        }
        let rest = s[1..].iter().product();
        let n = s[0];
        self.reshape(x, &[n, rest])
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(E, E) -> E) -> Result<Vec<E>> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::shape(name, self.shape(a), self.shape(b)));
        }
        Ok(self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "add", |x, y| x + y)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "sub", |x, y| x - y)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "mul", |x, y| x * y)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a `[f]` vector to every row of a `[.., f]` tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sb.len() != 1 || sx.last() != Some(&sb[0]) {
            return Err(TensorError::shape("add_bias", sx, sb));
        }
        let f = sb[0];
        let b = self.data(bias);
        let mut out = self.data(x).to_vec();
        for row in out.chunks_mut(f) {
            for (o, &bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        let shape = sx.to_vec();
        Ok(self.push(shape, out, Op::AddBias(x, bias), &[x, bias]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = E::from_f64(c);
        let out = self.data(x).iter().map(|&v| v * c).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::Scale(x, c), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let c = E::from_f64(c);
        let out = self.data(x).iter().map(|&v| v + c).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::AddScalar(x), &[x])
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let total: f64 = self.data(x).iter().map(|v| v.to_f64()).sum();
        self.push(Vec::new(), vec![E::from_f64(total)], Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.data(x).len();
        if n == 0 {
            return Err(TensorError::Contract("mean of an empty tensor".into()));
        }
        let total: f64 = self.data(x).iter().map(|v| v.to_f64()).sum();
        Ok(self.push(Vec::new(), vec![E::from_f64(total / n as f64)], Op::Mean(x), &[x]))
    }

    /// Max pooling over NHWC input with valid padding.
    pub fn max_pool2d(&mut self, x: Var, size: usize, stride: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || stride == 0 {
            return Err(TensorError::shape("max_pool2d", &s, &[size, size]));
        }
        let (oh, ow) = match (
            kernels::valid_extent(s[1], size, stride),
            kernels::valid_extent(s[2], size, stride),
        ) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(TensorError::shape("max_pool2d", &s, &[size, size])),
        };
        let win = Window {
            n: s[0],
            h: s[1],
            w: s[2],
            c: s[3],
            kh: size,
            kw: size,
            stride,
            pad_top: 0,
            pad_left: 0,
            out_h: oh,
            out_w: ow,
        };
        let (out, argmax) = kernels::max_pool(self.data(x), &win);
        let argmax = if self.recording { argmax } else { Vec::new() };
        Ok(self.push(vec![s[0], oh, ow, s[3]], out, Op::MaxPool { x, argmax }, &[x]))
    }

    /// Batch normalisation over every axis but the last (channel) one.
    ///
    /// Returns the batch statistics in training mode so the caller can fold
    /// them into its running averages.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_, E>,
        eps: f64,
    ) -> Result<(Var, Option<BatchStats>)> {
        let sx = self.shape(x).to_vec();
        let c = *sx
            .last()
            .ok_or_else(|| TensorError::Contract("batchnorm of a rank-0 tensor".into()))?;
        for p in [gamma, beta] {
            if self.shape(p) != [c] {
                return Err(TensorError::shape("batchnorm", &sx, self.shape(p)));
            }
        }
        let xs = self.data(x);
        let count = xs.len() / c.max(1);
        if count == 0 {
            return Err(TensorError::Contract("batchnorm over an empty batch".into()));
        }
        let (mean, var, stats, train) = match mode {
            BatchNormMode::Train => {
                let mut mean = vec![0.0f64; c];
                for px in xs.chunks(c) {
                    for (m, v) in mean.iter_mut().zip(px) {
                        *m += v.to_f64();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count as f64);
                let mut var = vec![0.0f64; c];
                for px in xs.chunks(c) {
                    for ((s, v), m) in var.iter_mut().zip(px).zip(&mean) {
                        let d = v.to_f64() - m;
                        *s += d * d;
                    }
                }
                var.iter_mut().for_each(|s| *s /= count as f64);
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: var.clone(),
                };
                (mean, var, Some(stats), true)
            }
            BatchNormMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(TensorError::shape("batchnorm", &sx, &[mean.len(), var.len()]));
                }
                let mean = mean.iter().map(|v| v.to_f64()).collect();
                let var = var.iter().map(|v| v.to_f64()).collect();
                (mean, var, None, false)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let g = self.data(gamma);
        let b = self.data(beta);
        // xhat = x·a + o and y = x·(γa) + (γo + β), per channel.
        let a: Vec<E> = inv_std.iter().map(|&v| E::from_f64(v)).collect();
        let o: Vec<E> = mean.iter().zip(&inv_std).map(|(m, v)| E::from_f64(-m * v)).collect();
        let ya: Vec<E> = (0..c).map(|ch| E::from_f64(g[ch].to_f64() * inv_std[ch])).collect();
        let yo: Vec<E> = (0..c)
            .map(|ch| E::from_f64(b[ch].to_f64() - g[ch].to_f64() * mean[ch] * inv_std[ch]))
            .collect();
        let mut out = Vec::with_capacity(xs.len());
        for px in xs.chunks_exact(c) {
            out.extend(px.iter().zip(ya.iter().zip(&yo)).map(|(&v, (&s, &t))| v * s + t));
        }
        let mut xhat = Vec::new();
        if self.recording {
            xhat.reserve_exact(xs.len());
            for px in xs.chunks_exact(c) {
                xhat.extend(px.iter().zip(a.iter().zip(&o)).map(|(&v, (&s, &t))| v * s + t));
            }
        }
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            train,
        };
        Ok((self.push(sx, out, op, &[x, gamma, beta]), stats))
    }

    /// Rows `start..start + len` along the leading axis.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.is_empty() || start + len > s[0] {
            return Err(TensorError::shape("slice_rows", &s, &[start, len]));
        }
        let row: usize = s[1..].iter().product();
        let out = self.data(x)[start * row..(start + len) * row].to_vec();
        let mut shape = s;
        shape[0] = len;
        Ok(self.push(shape, out, Op::SliceRows { x, start }, &[x]))
    }

    // ---- backward ----------------------------------------------------------

    /// Reverse sweep from a single-element `loss`.
    ///
    /// Afterwards every differentiable leaf has a gradient (zeros if it did not
    /// influence the loss). A second call requires [`Graph::reset_grads`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.recording {
            return Err(TensorError::Contract("backward on an inference graph".into()));
        }
        if self.backward_done {
            return Err(TensorError::Contract(
                "backward called twice without reset_grads".into(),
            ));
        }
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            self.fill_leaf_grads();
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![E::ONE]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = self.grads[i].take() else {
                continue;
            };
            self.backward_node(i, &dy);
        }
        self.fill_leaf_grads();
        Ok(())
    }

    fn fill_leaf_grads(&mut self) {
        for (node, g) in self.nodes.iter().zip(self.grads.iter_mut()) {
            if matches!(node.op, Op::Leaf) && node.requires_grad && g.is_none() {
                *g = Some(vec![E::ZERO; node.value.numel()]);
            }
        }
    }

    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    pub fn grad(&self, v: Var) -> Option<&[E]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<E>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    /// Adds into the gradient buffer of `v` if it is differentiable.
    fn accumulate(&mut self, v: Var, f: impl FnOnce(&mut [E], &Self)) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let mut buf = self.grads[v.0]
            .take()
            .unwrap_or_else(|| vec![E::ZERO; self.nodes[v.0].value.numel()]);
        f(&mut buf, self);
        self.grads[v.0] = Some(buf);
    }

    fn backward_node(&mut self, i: usize, dy: &[E]) {
        // The op is moved out while its inputs' grads are updated, then restored.
        let mut op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        let saved = match &mut op {
            Op::Conv2d { saved, .. } => saved.take(),
            _ => None,
        };
        match &op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                self.accumulate(*a, |da, g| {
                    E::gemm(m, n, k, dy, (n as isize, 1), g.data(*b), (1, n as isize), E::ONE, da, (k as isize, 1));
                });
                self.accumulate(*b, |db, g| {
                    E::gemm(k, m, n, g.data(*a), (1, k as isize), dy, (n as isize, 1), E::ONE, db, (n as isize, 1));
                });
            }
            Op::Conv2d { x, kernel, win, .. } => {
                let f = self.shape(*kernel)[3];
                let win = *win;
                let need_k = self.nodes[kernel.0].requires_grad;
                if win.uses_taps() {
                    let grid = TapGrid::new(&win);
                    let dy_wide = kernels::widen_output(dy, f, &win, &grid);
                    if need_k {
                        let padded = saved.unwrap_or_else(|| kernels::pad_input(self.data(*x), &win, &grid));
                        self.accumulate(*kernel, |dk, _| {
                            kernels::conv_taps_kernel_grad(&padded, &dy_wide, f, &win, &grid, dk)
                        });
                    }
                    self.accumulate(*x, |dx, g| {
                        kernels::conv_taps_input_grad(&dy_wide, g.data(*kernel), f, &win, &grid, dx)
                    });
                } else {
                    let (rows, plen) = (win.rows(), win.patch_len());
                    // The unrolled input is gone after an earlier backward; rebuild it.
                    let cols = match saved {
                        None if !win.is_pointwise() && need_k => Some(kernels::im2col(self.data(*x), &win)),
                        c => c,
                    };
                    self.accumulate(*kernel, |dk, g| {
                        let cols = cols.as_deref().unwrap_or_else(|| g.data(*x));
                        E::gemm(plen, rows, f, cols, (1, plen as isize), dy, (f as isize, 1), E::ONE, dk, (f as isize, 1));
                    });
                    // Its buffer then takes the unrolled input gradient.
                    self.accumulate(*x, |dx, g| {
                        let k = g.data(*kernel);
                        if win.is_pointwise() {
                            E::gemm(rows, f, plen, dy, (f as isize, 1), k, (1, f as isize), E::ONE, dx, (plen as isize, 1));
                        } else {
                            let mut dcols = cols.unwrap_or_else(|| vec![E::ZERO; rows * plen]);
                            E::gemm(rows, f, plen, dy, (f as isize, 1), k, (1, f as isize), E::ZERO, &mut dcols, (plen as isize, 1));
                            kernels::col2im_add(&dcols, &win, dx);
                        }
                    });
                }
            }
            Op::Relu(x) => {
                let y = self.nodes[i].value.shared_data();
                self.accumulate(*x, |dx, _| {
                    for ((d, &g), &yv) in dx.iter_mut().zip(dy).zip(y.iter()) {
                        if yv > E::ZERO {
                            *d += g;
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = self.nodes[i].value.shared_data();
                self.accumulate(*x, |dx, _| {
                    for ((d, &g), &yv) in dx.iter_mut().zip(dy).zip(y.iter()) {
                        *d += g * yv * (E::ONE - yv);
                    }
                });
            }
            Op::Softmax(x) => {
                let y = self.nodes[i].value.shared_data();
                let last = *self.shape(*x).last().unwrap();
                self.accumulate(*x, |dx, _| {
                    for ((drow, grow), yrow) in dx.chunks_mut(last).zip(dy.chunks(last)).zip(y.chunks(last)) {
                        let dot: f64 = grow.iter().zip(yrow).map(|(g, y)| g.to_f64() * y.to_f64()).sum();
                        for ((d, g), yv) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += E::from_f64(yv.to_f64() * (g.to_f64() - dot));
                        }
                    }
                });
            }
            Op::Log(x) => {
                self.accumulate(*x, |dx, g| {
                    for ((d, &gy), &xv) in dx.iter_mut().zip(dy).zip(g.data(*x)) {
                        *d += gy / xv;
                    }
                });
            }
            Op::LogClamped(x, floor) => {
                let floor = *floor;
                self.accumulate(*x, |dx, g| {
                    for ((d, &gy), &xv) in dx.iter_mut().zip(dy).zip(g.data(*x)) {
                        if xv > floor {
                            *d += gy / xv;
                        }
                    }
                });
            }
            Op::GlobalAvgPool(x) => {
                let s = self.shape(*x).to_vec();
                let (hw, c) = (s[1] * s[2], s[3]);
                let inv = E::from_f64(1.0 / hw as f64);
                self.accumulate(*x, |dx, _| {
                    for (img, grow) in dx.chunks_mut(hw * c).zip(dy.chunks(c)) {
                        for px in img.chunks_mut(c) {
                            for (d, &g) in px.iter_mut().zip(grow) {
                                *d += g * inv;
                            }
                        }
                    }
                });
            }
            Op::Reshape(x) | Op::AddScalar(x) => {
                self.accumulate(*x, |dx, _| add_into(dx, dy));
            }
            Op::Add(a, b) => {
                self.accumulate(*a, |da, _| add_into(da, dy));
                self.accumulate(*b, |db, _| add_into(db, dy));
            }
            Op::Sub(a, b) => {
                self.accumulate(*a, |da, _| add_into(da, dy));
                self.accumulate(*b, |db, _| {
                    for (d, &g) in db.iter_mut().zip(dy) {
                        *d -= g;
                    }
                });
            }
            Op::Mul(a, b) => {
                self.accumulate(*a, |da, g| {
                    for ((d, &gy), &bv) in da.iter_mut().zip(dy).zip(g.data(*b)) {
                        *d += gy * bv;
                    }
                });
                self.accumulate(*b, |db, g| {
                    for ((d, &gy), &av) in db.iter_mut().zip(dy).zip(g.data(*a)) {
                        *d += gy * av;
                    }
                });
            }
            Op::AddBias(x, bias) => {
                self.accumulate(*x, |dx, _| add_into(dx, dy));
                let f = self.shape(*bias)[0];
                self.accumulate(*bias, |db, _| {
                    let mut acc = vec![0.0f64; f];
                    for row in dy.chunks(f) {
                        for (a, g) in acc.iter_mut().zip(row) {
                            *a += g.to_f64();
                        }
                    }
                    for (d, a) in db.iter_mut().zip(acc) {
                        *d += E::from_f64(a);
                    }
                });
            }
            Op::Scale(x, c) => {
                let c = *c;
                self.accumulate(*x, |dx, _| {
                    for (d, &g) in dx.iter_mut().zip(dy) {
                        *d += g * c;
                    }
                });
            }
            Op::Sum(x) => {
                let g = dy[0];
                self.accumulate(*x, |dx, _| dx.iter_mut().for_each(|d| *d += g));
            }
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.numel();
                let g = E::from_f64(dy[0].to_f64() / n as f64);
                self.accumulate(*x, |dx, _| dx.iter_mut().for_each(|d| *d += g));
            }
            Op::MaxPool { x, argmax } => {
                self.accumulate(*x, |dx, _| {
                    for (&idx, &g) in argmax.iter().zip(dy) {
                        dx[idx] += g;
                    }
                });
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let c = inv_std.len();
                let count = xhat.len() / c;
                let mut sum_dy = vec![0.0f64; c];
                let mut sum_dy_xhat = vec![0.0f64; c];
                for (grow, hrow) in dy.chunks(c).zip(xhat.chunks(c)) {
                    for ch in 0..c {
                        sum_dy[ch] += grow[ch].to_f64();
                        sum_dy_xhat[ch] += grow[ch].to_f64() * hrow[ch].to_f64();
                    }
                }
                self.accumulate(*gamma, |dg, _| {
                    for (d, s) in dg.iter_mut().zip(&sum_dy_xhat) {
                        *d += E::from_f64(*s);
                    }
                });
                self.accumulate(*beta, |db, _| {
                    for (d, s) in db.iter_mut().zip(&sum_dy) {
                        *d += E::from_f64(*s);
                    }
                });
                let train = *train;
                self.accumulate(*x, |dx, g| {
                    let gm = g.data(*gamma);
                    let scale: Vec<f64> = (0..c).map(|ch| gm[ch].to_f64() * inv_std[ch]).collect();
                    let nf = count as f64;
                    for ((drow, grow), hrow) in dx.chunks_mut(c).zip(dy.chunks(c)).zip(xhat.chunks(c)) {
                        for ch in 0..c {
                            let gy = grow[ch].to_f64();
                            let v = if train {
                                scale[ch] * (gy - sum_dy[ch] / nf - hrow[ch].to_f64() * sum_dy_xhat[ch] / nf)
                            } else {
                                scale[ch] * gy
                            };
                            drow[ch] += E::from_f64(v);
                        }
                    }
                });
            }
            Op::SliceRows { x, start } => {
                let s = self.shape(*x);
                let row: usize = s[1..].iter().product();
                let off = start * row;
                self.accumulate(*x, |dx, _| add_into(&mut dx[off..off + dy.len()], dy));
            }
        }
        self.nodes[i].op = op;
    }
}

fn add_into<E: Element>(dst: &mut [E], src: &[E]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
