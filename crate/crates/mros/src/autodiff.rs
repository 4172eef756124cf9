//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every executed operation in topological order; inputs of
//! an operation always precede it, so [`Tape::backward`] replays the chain rule
//! in a single reverse sweep. Tensors are immutable once created on the tape;
//! gradients accumulate into the `grad` slot of `requires_grad` leaves.

use crate::error::{Error, Result};
use crate::losses::{self, TripletMining};
use crate::tensor::Tensor;

/// Handle to a tensor stored on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

/// Batch-norm running statistics, updated by the exponential moving average
/// during train-mode forward passes.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Add {
        a: TensorId,
        b: TensorId,
    },
    Scale {
        a: TensorId,
        factor: f64,
    },
    Sum {
        a: TensorId,
    },
    Relu {
        a: TensorId,
    },
    Matmul {
        a: TensorId,
        b: TensorId,
    },
    /// Row-broadcast bias add: `[m,c] + [c]`.
    AddBias {
        a: TensorId,
        bias: TensorId,
    },
    /// Channel-broadcast bias add: `[c,h,w] + [c]`.
    AddChannelBias {
        a: TensorId,
        bias: TensorId,
    },
    Conv2d {
        input: TensorId,
        kernels: TensorId,
        stride: usize,
    },
    BatchNorm1d {
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    /// Per-channel mean over rows `[row_start, row_end)` and the full width.
    MeanOverRegion {
        a: TensorId,
        row_start: usize,
        row_end: usize,
    },
    /// Concatenation of 1-D vectors into one 1-D vector.
    Concat {
        parts: Vec<TensorId>,
    },
    /// Stack of m equal-length vectors into an `[m,d]` matrix.
    StackRows {
        parts: Vec<TensorId>,
    },
    TripletBatchHard {
        g: TensorId,
        mining: TripletMining,
    },
    /// Saved residuals are `g_i − c_{y_i}`, flattened row-major.
    CenterLoss {
        g: TensorId,
        residuals: Vec<f64>,
    },
    CrossEntropyLs {
        logits: TensorId,
        labels: Vec<usize>,
        epsilon: f64,
        softmax: Vec<f64>,
    },
}

struct Node {
    op: Op,
    tensor: Tensor,
    /// Whether any `requires_grad` leaf feeds this node.
    tracked: bool,
}

/// Record of executed operations and their tensors.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, tensor: Tensor) -> TensorId {
        let tracked = tensor.requires_grad;
        self.push(tensor, Op::Leaf, tracked)
    }

    pub fn constant(&mut self, value: f64) -> TensorId {
        self.leaf(Tensor::scalar(value))
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].tensor
    }

    /// Gradient populated by [`Tape::backward`] (requires_grad nodes only).
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].tensor.grad.as_deref()
    }

    pub(crate) fn push(&mut self, tensor: Tensor, op: Op, tracked: bool) -> TensorId {
        self.nodes.push(Node {
            op,
            tensor,
            tracked,
        });
        TensorId(self.nodes.len() - 1)
    }

    pub(crate) fn is_tracked(&self, id: TensorId) -> bool {
        self.nodes[id.0].tracked
    }

    // ── Forward operations ──────────────────────────────────────────────

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::ShapeMismatch {
                op: "add",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let tracked = self.is_tracked(a) || self.is_tracked(b);
        Ok(self.push(out, Op::Add { a, b }, tracked))
    }

    pub fn scale(&mut self, a: TensorId, factor: f64) -> TensorId {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| x * factor).collect();
        let out = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        let tracked = self.is_tracked(a);
        self.push(out, Op::Scale { a, factor }, tracked)
    }

    pub fn sum(&mut self, a: TensorId) -> TensorId {
        let total: f64 = self.value(a).data().iter().sum();
        let tracked = self.is_tracked(a);
        self.push(Tensor::scalar(total), Op::Sum { a }, tracked)
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        let ta = self.value(a);
        let data = ta
            .data()
            .iter()
            .map(|&x| if x > 0.0 { x } else { 0.0 })
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        let tracked = self.is_tracked(a);
        self.push(out, Op::Relu { a }, tracked)
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let data = matmul_kernel(ta.data(), tb.data(), m, k, n);
        let out = Tensor::new(vec![m, n], data)?;
        let tracked = self.is_tracked(a) || self.is_tracked(b);
        Ok(self.push(out, Op::Matmul { a, b }, tracked))
    }

    pub fn add_bias(&mut self, a: TensorId, bias: TensorId) -> Result<TensorId> {
        let (ta, tb) = (self.value(a), self.value(bias));
        if ta.rank() != 2 || tb.rank() != 1 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let (m, c) = (ta.shape()[0], ta.shape()[1]);
        let mut data = ta.data().to_vec();
        for i in 0..m {
            for j in 0..c {
                data[i * c + j] += tb.data()[j];
            }
        }
        let out = Tensor::new(vec![m, c], data)?;
        let tracked = self.is_tracked(a) || self.is_tracked(bias);
        Ok(self.push(out, Op::AddBias { a, bias }, tracked))
    }

    pub fn add_channel_bias(&mut self, a: TensorId, bias: TensorId) -> Result<TensorId> {
        let (ta, tb) = (self.value(a), self.value(bias));
        if ta.rank() != 3 || tb.rank() != 1 || ta.shape()[0] != tb.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "add_channel_bias",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let (c, h, w) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
        let mut data = ta.data().to_vec();
        for ch in 0..c {
            let base = ch * h * w;
            for i in 0..h * w {
                data[base + i] += tb.data()[ch];
            }
        }
        let out = Tensor::new(vec![c, h, w], data)?;
        let tracked = self.is_tracked(a) || self.is_tracked(bias);
        Ok(self.push(out, Op::AddChannelBias { a, bias }, tracked))
    }

    /// Valid (no padding) cross-correlation of `[ci,h,w]` with `[co,ci,kh,kw]`.
    pub fn conv2d(
        &mut self,
        input: TensorId,
        kernels: TensorId,
        stride: usize,
    ) -> Result<TensorId> {
        let (ti, tk) = (self.value(input), self.value(kernels));
        if ti.rank() != 3 || tk.rank() != 4 || tk.shape()[1] != ti.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                left: ti.shape().to_vec(),
                right: tk.shape().to_vec(),
            });
        }
        if stride == 0 {
            return Err(Error::Contract("conv2d stride must be positive".into()));
        }
        let (ci, h, w) = (ti.shape()[0], ti.shape()[1], ti.shape()[2]);
        let (co, kh, kw) = (tk.shape()[0], tk.shape()[2], tk.shape()[3]);
        if kh > h || kw > w {
            return Err(Error::Geometry(format!(
                "conv2d kernel {kh}x{kw} larger than input {h}x{w}"
            )));
        }
        let oh = (h - kh) / stride + 1;
        let ow = (w - kw) / stride + 1;
        let mut data = vec![0.0; co * oh * ow];
        for o in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for c in 0..ci {
                        for ky in 0..kh {
                            let iy = oy * stride + ky;
                            let irow = c * h * w + iy * w + ox * stride;
                            let krow = ((o * ci + c) * kh + ky) * kw;
                            for kx in 0..kw {
                                acc += ti.data()[irow + kx] * tk.data()[krow + kx];
                            }
                        }
                    }
                    data[(o * oh + oy) * ow + ox] = acc;
                }
            }
        }
        let out = Tensor::new(vec![co, oh, ow], data)?;
        let tracked = self.is_tracked(input) || self.is_tracked(kernels);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernels,
                stride,
            },
            tracked,
        ))
    }

    /// 1-D batch normalization over `[m,c]`. Train mode normalizes by batch
    /// statistics (biased variance, eps-stabilized) and updates `stats` by
    /// exponential moving average; eval mode normalizes by `stats`.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm1d(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        stats: &mut RunningStats,
        mode: Mode,
        eps: f64,
        momentum: f64,
    ) -> Result<TensorId> {
        let tx = self.value(x);
        if tx.rank() != 2 {
            return Err(Error::Contract(format!(
                "batch_norm1d expects [m,c], got {:?}",
                tx.shape()
            )));
        }
        let (m, c) = (tx.shape()[0], tx.shape()[1]);
        let (tg, tb) = (self.value(gamma), self.value(beta));
        if tg.shape() != [c] || tb.shape() != [c] {
            return Err(Error::ShapeMismatch {
                op: "batch_norm1d",
                left: tx.shape().to_vec(),
                right: tg.shape().to_vec(),
            });
        }
        if stats.mean.len() != c {
            return Err(Error::ShapeMismatch {
                op: "batch_norm1d running stats",
                left: vec![stats.mean.len()],
                right: vec![c],
            });
        }
        if mode == Mode::Train && m < 2 {
            return Err(Error::DegenerateBatch(format!(
                "batch_norm1d train mode needs m >= 2, got {m}"
            )));
        }

        let (mean, inv_std) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for j in 0..c {
                    let mut s = 0.0;
                    for i in 0..m {
                        s += tx.data()[i * c + j];
                    }
                    mean[j] = s / m as f64;
                    let mut v = 0.0;
                    for i in 0..m {
                        let d = tx.data()[i * c + j] - mean[j];
                        v += d * d;
                    }
                    var[j] = v / m as f64;
                }
                for j in 0..c {
                    stats.mean[j] = (1.0 - momentum) * stats.mean[j] + momentum * mean[j];
                    // running variance keeps the unbiased estimate
                    let unbiased = var[j] * m as f64 / (m as f64 - 1.0);
                    stats.var[j] = (1.0 - momentum) * stats.var[j] + momentum * unbiased;
                }
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
                (mean, inv_std)
            }
            Mode::Eval => {
                let inv_std: Vec<f64> = stats.var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
                (stats.mean.clone(), inv_std)
            }
        };

        let mut data = vec![0.0; m * c];
        for i in 0..m {
            for j in 0..c {
                let xhat = (tx.data()[i * c + j] - mean[j]) * inv_std[j];
                data[i * c + j] = tg.data()[j] * xhat + tb.data()[j];
            }
        }
        let out = Tensor::new(vec![m, c], data)?;
        let tracked = self.is_tracked(x) || self.is_tracked(gamma) || self.is_tracked(beta);
        Ok(self.push(
            out,
            Op::BatchNorm1d {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                train: mode == Mode::Train,
            },
            tracked,
        ))
    }

    /// Per-channel mean of rows `[row_start, row_end)` over the full width:
    /// `[c,h,w] -> [c]`. This is global average pooling when the range spans
    /// the whole height.
    pub fn mean_over_region(
        &mut self,
        a: TensorId,
        row_start: usize,
        row_end: usize,
    ) -> Result<TensorId> {
        let ta = self.value(a);
        if ta.rank() != 3 {
            return Err(Error::Contract(format!(
                "mean_over_region expects [c,h,w], got {:?}",
                ta.shape()
            )));
        }
        let (c, h, w) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
        if row_start >= row_end || row_end > h {
            return Err(Error::Geometry(format!(
                "row range [{row_start},{row_end}) invalid for height {h}"
            )));
        }
        let count = ((row_end - row_start) * w) as f64;
        let mut data = vec![0.0; c];
        for ch in 0..c {
            let mut s = 0.0;
            for y in row_start..row_end {
                let base = ch * h * w + y * w;
                for x in 0..w {
                    s += ta.data()[base + x];
                }
            }
            data[ch] = s / count;
        }
        let out = Tensor::new(vec![c], data)?;
        let tracked = self.is_tracked(a);
        Ok(self.push(
            out,
            Op::MeanOverRegion {
                a,
                row_start,
                row_end,
            },
            tracked,
        ))
    }

    /// Concatenate 1-D vectors into one vector.
    pub fn concat(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of zero tensors".into()));
        }
        let mut data = Vec::new();
        let mut tracked = false;
        for &p in parts {
            let tp = self.value(p);
            if tp.rank() != 1 {
                return Err(Error::Contract(format!(
                    "concat expects 1-D parts, got {:?}",
                    tp.shape()
                )));
            }
            data.extend_from_slice(tp.data());
            tracked |= self.is_tracked(p);
        }
        let out = Tensor::new(vec![data.len()], data)?;
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
            },
            tracked,
        ))
    }

    /// Stack m equal-length vectors into an `[m,d]` matrix.
    pub fn stack_rows(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Contract("stack_rows of zero tensors".into()));
        }
        let d = self.value(parts[0]).numel();
        let mut data = Vec::with_capacity(parts.len() * d);
        let mut tracked = false;
        for &p in parts {
            let tp = self.value(p);
            if tp.rank() != 1 || tp.numel() != d {
                return Err(Error::ShapeMismatch {
                    op: "stack_rows",
                    left: vec![d],
                    right: tp.shape().to_vec(),
                });
            }
            data.extend_from_slice(tp.data());
            tracked |= self.is_tracked(p);
        }
        let out = Tensor::new(vec![parts.len(), d], data)?;
        Ok(self.push(
            out,
            Op::StackRows {
                parts: parts.to_vec(),
            },
            tracked,
        ))
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Populates `grad` on every
    /// `requires_grad` tensor reachable from `loss`.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let n = loss.0;
        let mut flowing: Vec<Option<Vec<f64>>> = Vec::with_capacity(n + 1);
        flowing.resize_with(n + 1, || None);
        flowing[n] = Some(vec![1.0]);

        for i in (0..=n).rev() {
            let Some(g) = flowing[i].take() else { continue };
            if !self.nodes[i].tracked {
                continue;
            }
            if self.nodes[i].tensor.requires_grad {
                match &mut self.nodes[i].tensor.grad {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            *a += b;
                        }
                    }
                    None => self.nodes[i].tensor.grad = Some(g.clone()),
                }
            }
            self.propagate(i, &g, &mut flowing);
        }
        Ok(())
    }

    fn accumulate(&self, flowing: &mut [Option<Vec<f64>>], id: TensorId, contrib: &[f64]) {
        if !self.nodes[id.0].tracked {
            return;
        }
        match &mut flowing[id.0] {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(contrib) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(contrib.to_vec()),
        }
    }

    fn propagate(&self, i: usize, g: &[f64], flowing: &mut [Option<Vec<f64>>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add { a, b } => {
                self.accumulate(flowing, *a, g);
                self.accumulate(flowing, *b, g);
            }
            Op::Scale { a, factor } => {
                let ga: Vec<f64> = g.iter().map(|x| x * factor).collect();
                self.accumulate(flowing, *a, &ga);
            }
            Op::Sum { a } => {
                let ga = vec![g[0]; self.nodes[a.0].tensor.numel()];
                self.accumulate(flowing, *a, &ga);
            }
            Op::Relu { a } => {
                // subgradient 0 at the kink
                let ga: Vec<f64> = self.nodes[a.0]
                    .tensor
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&x, &gy)| if x > 0.0 { gy } else { 0.0 })
                    .collect();
                self.accumulate(flowing, *a, &ga);
            }
            Op::Matmul { a, b } => {
                let ta = self.nodes[a.0].tensor.data();
                let tb = self.nodes[b.0].tensor.data();
                let (m, k) = (
                    self.nodes[a.0].tensor.shape()[0],
                    self.nodes[a.0].tensor.shape()[1],
                );
                let n = self.nodes[b.0].tensor.shape()[1];
                // dA = dC · Bᵀ
                let mut ga = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += g[i * n + j] * tb[p * n + j];
                        }
                        ga[i * k + p] = s;
                    }
                }
                // dB = Aᵀ · dC
                let mut gb = vec![0.0; k * n];
                for p in 0..k {
                    for j in 0..n {
                        let mut s = 0.0;
                        for i in 0..m {
                            s += ta[i * k + p] * g[i * n + j];
                        }
                        gb[p * n + j] = s;
                    }
                }
                self.accumulate(flowing, *a, &ga);
                self.accumulate(flowing, *b, &gb);
            }
            Op::AddBias { a, bias } => {
                self.accumulate(flowing, *a, g);
                let c = self.nodes[bias.0].tensor.numel();
                let m = g.len() / c;
                let mut gb = vec![0.0; c];
                for i in 0..m {
                    for j in 0..c {
                        gb[j] += g[i * c + j];
                    }
                }
                self.accumulate(flowing, *bias, &gb);
            }
            Op::AddChannelBias { a, bias } => {
                self.accumulate(flowing, *a, g);
                let c = self.nodes[bias.0].tensor.numel();
                let hw = g.len() / c;
                let mut gb = vec![0.0; c];
                for ch in 0..c {
                    for i in 0..hw {
                        gb[ch] += g[ch * hw + i];
                    }
                }
                self.accumulate(flowing, *bias, &gb);
            }
            Op::Conv2d {
                input,
                kernels,
                stride,
            } => {
                let ti = &self.nodes[input.0].tensor;
                let tk = &self.nodes[kernels.0].tensor;
                let (ci, h, w) = (ti.shape()[0], ti.shape()[1], ti.shape()[2]);
                let (co, kh, kw) = (tk.shape()[0], tk.shape()[2], tk.shape()[3]);
                let oh = (h - kh) / stride + 1;
                let ow = (w - kw) / stride + 1;
                let mut gi = vec![0.0; ci * h * w];
                let mut gk = vec![0.0; co * ci * kh * kw];
                for o in 0..co {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let go = g[(o * oh + oy) * ow + ox];
                            if go == 0.0 {
                                continue;
                            }
                            for c in 0..ci {
                                for ky in 0..kh {
                                    let iy = oy * stride + ky;
                                    let irow = c * h * w + iy * w + ox * stride;
                                    let krow = ((o * ci + c) * kh + ky) * kw;
                                    for kx in 0..kw {
                                        gi[irow + kx] += tk.data()[krow + kx] * go;
                                        gk[krow + kx] += ti.data()[irow + kx] * go;
                                    }
                                }
                            }
                        }
                    }
                }
                self.accumulate(flowing, *input, &gi);
                self.accumulate(flowing, *kernels, &gk);
            }
            Op::BatchNorm1d {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                train,
            } => {
                let tx = &self.nodes[x.0].tensor;
                let tg = self.nodes[gamma.0].tensor.data();
                let (m, c) = (tx.shape()[0], tx.shape()[1]);
                let mf = m as f64;
                let mut gx = vec![0.0; m * c];
                let mut gg = vec![0.0; c];
                let mut gb = vec![0.0; c];
                for j in 0..c {
                    if *train {
                        let mut sum_dxhat = 0.0;
                        let mut sum_dxhat_xhat = 0.0;
                        for i in 0..m {
                            let xhat = (tx.data()[i * c + j] - mean[j]) * inv_std[j];
                            let dy = g[i * c + j];
                            let dxhat = dy * tg[j];
                            sum_dxhat += dxhat;
                            sum_dxhat_xhat += dxhat * xhat;
                            gg[j] += dy * xhat;
                            gb[j] += dy;
                        }
                        for i in 0..m {
                            let xhat = (tx.data()[i * c + j] - mean[j]) * inv_std[j];
                            let dxhat = g[i * c + j] * tg[j];
                            gx[i * c + j] =
                                inv_std[j] / mf * (mf * dxhat - sum_dxhat - xhat * sum_dxhat_xhat);
                        }
                    } else {
                        for i in 0..m {
                            let xhat = (tx.data()[i * c + j] - mean[j]) * inv_std[j];
                            let dy = g[i * c + j];
                            gx[i * c + j] = dy * tg[j] * inv_std[j];
                            gg[j] += dy * xhat;
                            gb[j] += dy;
                        }
                    }
                }
                self.accumulate(flowing, *x, &gx);
                self.accumulate(flowing, *gamma, &gg);
                self.accumulate(flowing, *beta, &gb);
            }
            Op::MeanOverRegion {
                a,
                row_start,
                row_end,
            } => {
                let ta = &self.nodes[a.0].tensor;
                let (c, h, w) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
                let count = ((row_end - row_start) * w) as f64;
                let mut ga = vec![0.0; c * h * w];
                for ch in 0..c {
                    let share = g[ch] / count;
                    for y in *row_start..*row_end {
                        let base = ch * h * w + y * w;
                        for x in 0..w {
                            ga[base + x] = share;
                        }
                    }
                }
                self.accumulate(flowing, *a, &ga);
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p.0].tensor.numel();
                    self.accumulate(flowing, p, &g[offset..offset + len]);
                    offset += len;
                }
            }
            Op::StackRows { parts } => {
                let d = self.nodes[parts[0].0].tensor.numel();
                for (i, &p) in parts.iter().enumerate() {
                    self.accumulate(flowing, p, &g[i * d..(i + 1) * d]);
                }
            }
            Op::TripletBatchHard { g: emb, mining } => {
                let t = &self.nodes[emb.0].tensor;
                let ga = losses::triplet_backward(t.data(), t.shape()[1], mining, g[0]);
                self.accumulate(flowing, *emb, &ga);
            }
            Op::CenterLoss { g: emb, residuals } => {
                let ga: Vec<f64> = residuals.iter().map(|r| r * g[0]).collect();
                self.accumulate(flowing, *emb, &ga);
            }
            Op::CrossEntropyLs {
                logits,
                labels,
                epsilon,
                softmax,
            } => {
                // logits may be [m,c] or a bare [c] vector
                let shape = self.nodes[logits.0].tensor.shape();
                let c = *shape.last().expect("logits have a class axis");
                let ga = losses::cross_entropy_backward(softmax, labels, *epsilon, c, g[0]);
                self.accumulate(flowing, *logits, &ga);
            }
        }
    }
}

pub(crate) fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}
