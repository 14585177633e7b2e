use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::kernels::{self, ConvGeom};
use super::{AutodiffError, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Stable identifier of a trainable parameter across tapes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Constant,
    Param,
    Affine,
    Add,
    Sub,
    Mul,
    Relu,
    BatchNormTrain,
    BatchNormEval,
    L2Normalize,
    Softmax,
    LogSoftmax,
    Log,
    Mean,
    Sum,
    Scale,
    Concat,
    Reshape,
    StopGradient,
    Conv2d,
    AvgPool2,
    GlobalAvgPool,
}

enum Saved {
    None,
    Param(ParamId),
    BatchNorm { xhat: Vec<f64>, inv_std: Vec<f64>, has_gamma: bool, has_beta: bool },
    Norms(Vec<f64>),
    Scale(f64),
    Concat(Vec<usize>),
    Conv { geom: ConvGeom, cols: Vec<f64>, has_bias: bool },
    Pool([usize; 4]),
}

struct Node {
    kind: OpKind,
    parents: Vec<Var>,
    saved: Saved,
    value: Tensor,
    requires_grad: bool,
}

/// Per-channel statistics of one train-mode batch norm call, used by the
/// caller to update running estimates.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased (n − 1) variance.
    pub var: Vec<f64>,
}

/// Gradients of the loss with respect to every parameter leaf it reached.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradStore {
    grads: BTreeMap<ParamId, Tensor>,
}

impl GradStore {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().map(|(k, v)| (*k, v))
    }

    fn accumulate(&mut self, id: ParamId, shape: &[usize], g: &[f64]) {
        let entry = self.grads.entry(id).or_insert_with(|| Tensor::zeros(shape));
        for (a, b) in entry.data_mut().iter_mut().zip(g) {
            *a += b;
        }
    }
}

/// Which nodes received a gradient contribution during backward.
#[derive(Clone, Debug)]
pub struct BackwardTrace {
    received: Vec<bool>,
}

impl BackwardTrace {
    pub fn received_gradient(&self, v: Var) -> bool {
        self.received.get(v.0).copied().unwrap_or(false)
    }
}

/// Linear record of the forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    sg_log: Vec<Tensor>,
    sg_replay: Option<(Vec<Tensor>, usize)>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape whose stop-gradient nodes emit the given values in call order
    /// instead of their inputs. Used to differentiate the blocked semantics
    /// numerically.
    pub(crate) fn with_stop_gradient_replay(values: Vec<Tensor>) -> Self {
        Self { sg_replay: Some((values, 0)), ..Self::default() }
    }

    pub(crate) fn stop_gradient_log(&self) -> &[Tensor] {
        &self.sg_log
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].kind
    }

    /// Op kind of every node, in recording order.
    pub fn kinds(&self) -> impl Iterator<Item = OpKind> + '_ {
        self.nodes.iter().map(|n| n.kind)
    }

    pub fn parents(&self, v: Var) -> &[Var] {
        &self.nodes[v.0].parents
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// True exactly for stop-gradient nodes.
    pub fn is_grad_blocked(&self, v: Var) -> bool {
        self.nodes[v.0].kind == OpKind::StopGradient
    }

    fn push(&mut self, kind: OpKind, parents: Vec<Var>, saved: Saved, value: Tensor) -> Result<Var, AutodiffError> {
        if !value.all_finite() {
            return Err(AutodiffError::NonFinite { op: op_name(kind) });
        }
        let requires_grad = match kind {
            OpKind::Param => true,
            OpKind::Constant | OpKind::StopGradient => false,
            _ => parents.iter().any(|p| self.nodes[p.0].requires_grad),
        };
        self.nodes.push(Node { kind, parents, saved, value, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    // ── Leaves ──────────────────────────────────────────────────────────

    pub fn constant(&mut self, t: Tensor) -> Result<Var, AutodiffError> {
        self.push(OpKind::Constant, Vec::new(), Saved::None, t)
    }

    pub fn param(&mut self, id: ParamId, t: Tensor) -> Result<Var, AutodiffError> {
        self.push(OpKind::Param, Vec::new(), Saved::Param(id), t)
    }

    // ── Linear algebra ──────────────────────────────────────────────────

    /// `x[n,in] · w[out,in]ᵀ + b[out]`
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, AutodiffError> {
        let (xs, ws) = (self.value(x).shape(), self.value(w).shape());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(shape_err("affine", format!("x {:?}, w {:?}", xs, ws)));
        }
        let (n, inp, out) = (xs[0], xs[1], ws[0]);
        let mut y = kernels::matmul_nt(self.value(x).data(), self.value(w).data(), n, inp, out);
        let mut parents = vec![x, w];
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.shape() != [out] {
                return Err(shape_err("affine", format!("bias {:?}, expected [{}]", bv.shape(), out)));
            }
            for row in y.chunks_mut(out) {
                for (o, bb) in row.iter_mut().zip(bv.data()) {
                    *o += bb;
                }
            }
            parents.push(b);
        }
        let value = Tensor::new(vec![n, out], y)?;
        self.push(OpKind::Affine, parents, Saved::None, value)
    }

    // ── Elementwise ────────────────────────────────────────────────────

    fn binary(&mut self, kind: OpKind, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Var, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(op_name(kind), format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        self.push(kind, vec![a, b], Saved::None, value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(OpKind::Add, a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(OpKind::Sub, a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(OpKind::Mul, a, b, |x, y| x * y)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push(OpKind::Relu, vec![x], Saved::None, value)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var, AutodiffError> {
        let value = self.value(x).map(|v| v * c);
        self.push(OpKind::Scale, vec![x], Saved::Scale(c), value)
    }

    pub fn log(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let value = self.value(x).map(f64::ln);
        self.push(OpKind::Log, vec![x], Saved::None, value)
    }

    /// Identity in the forward pass; blocks all gradient flow backward.
    pub fn stop_gradient(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let value = match &mut self.sg_replay {
            Some((values, cursor)) => {
                let v = values
                    .get(*cursor)
                    .cloned()
                    .ok_or_else(|| AutodiffError::InvalidArgument("stop-gradient replay exhausted".into()))?;
                *cursor += 1;
                if v.shape() != self.nodes[x.0].value.shape() {
                    return Err(shape_err("stop_gradient", "replayed value has a different shape".into()));
                }
                v
            }
            None => self.nodes[x.0].value.clone(),
        };
        self.sg_log.push(value.clone());
        self.push(OpKind::StopGradient, vec![x], Saved::None, value)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, AutodiffError> {
        let value = self.value(x).clone().reshape(shape)?;
        self.push(OpKind::Reshape, vec![x], Saved::None, value)
    }

    /// Concatenates along the leading axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = parts.first().ok_or_else(|| AutodiffError::InvalidArgument("concat of nothing".into()))?;
        let tail = self.value(*first).shape()[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        let mut sizes = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            if t.rank() == 0 || t.shape()[1..] != tail[..] {
                return Err(shape_err("concat", format!("{:?} vs trailing {:?}", t.shape(), tail)));
            }
            rows += t.shape()[0];
            sizes.push(t.numel());
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        let value = Tensor::new(shape, data)?;
        self.push(OpKind::Concat, parts.to_vec(), Saved::Concat(sizes), value)
    }

    // ── Reductions ─────────────────────────────────────────────────────

    pub fn sum(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let s = self.value(x).data().iter().sum();
        self.push(OpKind::Sum, vec![x], Saved::None, Tensor::scalar(s))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let t = self.value(x);
        if t.numel() == 0 {
            return Err(AutodiffError::InvalidArgument("mean of empty tensor".into()));
        }
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(OpKind::Mean, vec![x], Saved::None, Tensor::scalar(s))
    }

    // ── Normalization ──────────────────────────────────────────────────

    /// Divides each last-axis vector by `max(‖v‖₂, eps)`.
    pub fn l2_normalize(&mut self, x: Var, eps: f64) -> Result<Var, AutodiffError> {
        let t = self.value(x);
        let d = t.last_dim();
        if t.rank() == 0 || d == 0 {
            return Err(shape_err("l2_normalize", format!("{:?}", t.shape())));
        }
        // A negative saved norm marks a row that hit the clamp, so backward
        // sees the same divisor as forward.
        let mut norms = Vec::with_capacity(t.numel() / d);
        let mut out = Vec::with_capacity(t.numel());
        for row in t.data().chunks(d) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let denom = n.max(eps);
            norms.push(if n > eps { n } else { -eps });
            out.extend(row.iter().map(|v| v / denom));
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        self.push(OpKind::L2Normalize, vec![x], Saved::Norms(norms), value)
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let t = self.value(x);
        let d = t.last_dim();
        let mut out = Vec::with_capacity(t.numel());
        for row in t.data().chunks(d) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            out.extend(e.into_iter().map(|v| v / s));
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        self.push(OpKind::Softmax, vec![x], Saved::None, value)
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let t = self.value(x);
        let d = t.last_dim();
        let mut out = Vec::with_capacity(t.numel());
        for row in t.data().chunks(d) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            out.extend(row.iter().map(|v| v - lse));
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        self.push(OpKind::LogSoftmax, vec![x], Saved::None, value)
    }

    /// Batch norm over the rows of `x[n,c]` using batch statistics.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Option<Var>,
        beta: Option<Var>,
        eps: f64,
    ) -> Result<(Var, BatchStats), AutodiffError> {
        let t = self.value(x);
        if t.rank() != 2 {
            return Err(shape_err("batch_norm", format!("expected [n, c], got {:?}", t.shape())));
        }
        let (n, c) = (t.shape()[0], t.shape()[1]);
        if n < 2 {
            return Err(AutodiffError::BatchTooSmall { got: n });
        }
        let mut mean = vec![0.0; c];
        for row in t.data().chunks(c) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; c];
        for row in t.data().chunks(c) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let biased: Vec<f64> = var.iter().map(|s| s / n as f64).collect();
        let unbiased: Vec<f64> = var.iter().map(|s| s / (n - 1) as f64).collect();
        let inv_std: Vec<f64> = biased.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = Vec::with_capacity(n * c);
        for row in t.data().chunks(c) {
            for j in 0..c {
                xhat.push((row[j] - mean[j]) * inv_std[j]);
            }
        }
        let y = self.affine_channels(&xhat, c, gamma, beta)?;
        let mut parents = vec![x];
        parents.extend(gamma);
        parents.extend(beta);
        let value = Tensor::new(vec![n, c], y)?;
        let saved = Saved::BatchNorm { xhat, inv_std, has_gamma: gamma.is_some(), has_beta: beta.is_some() };
        let v = self.push(OpKind::BatchNormTrain, parents, saved, value)?;
        Ok((v, BatchStats { mean, var: unbiased }))
    }

    /// Batch norm over the rows of `x[n,c]` using fixed running statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Option<Var>,
        beta: Option<Var>,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Var, AutodiffError> {
        let t = self.value(x);
        if t.rank() != 2 || t.shape()[1] != running_mean.len() || running_mean.len() != running_var.len() {
            return Err(shape_err("batch_norm", format!("x {:?}, stats {}", t.shape(), running_mean.len())));
        }
        let (n, c) = (t.shape()[0], t.shape()[1]);
        let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = Vec::with_capacity(n * c);
        for row in t.data().chunks(c) {
            for j in 0..c {
                xhat.push((row[j] - running_mean[j]) * inv_std[j]);
            }
        }
        let y = self.affine_channels(&xhat, c, gamma, beta)?;
        let mut parents = vec![x];
        parents.extend(gamma);
        parents.extend(beta);
        let value = Tensor::new(vec![n, c], y)?;
        let saved = Saved::BatchNorm { xhat, inv_std, has_gamma: gamma.is_some(), has_beta: beta.is_some() };
        self.push(OpKind::BatchNormEval, parents, saved, value)
    }

    fn affine_channels(&self, xhat: &[f64], c: usize, gamma: Option<Var>, beta: Option<Var>) -> Result<Vec<f64>, AutodiffError> {
        let g = gamma.map(|g| self.value(g).data());
        let b = beta.map(|b| self.value(b).data());
        for p in [g, b].into_iter().flatten() {
            if p.len() != c {
                return Err(shape_err("batch_norm", format!("affine parameter of length {} for {} channels", p.len(), c)));
            }
        }
        Ok(xhat
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let j = i % c;
                v * g.map_or(1.0, |g| g[j]) + b.map_or(0.0, |b| b[j])
            })
            .collect())
    }

    // ── Convolution ────────────────────────────────────────────────────

    /// Stride-1 convolution of NHWC `x` with `w[out, k, k, in]`, zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, padding: usize) -> Result<Var, AutodiffError> {
        let (xs, ws) = (self.value(x).shape(), self.value(w).shape());
        if xs.len() != 4 || ws.len() != 4 || ws[1] != ws[2] || ws[3] != xs[3] {
            return Err(shape_err("conv2d", format!("x {:?}, w {:?}", xs, ws)));
        }
        let geom = ConvGeom {
            batch: xs[0],
            height: xs[1],
            width: xs[2],
            in_channels: xs[3],
            out_channels: ws[0],
            kernel: ws[1],
            padding,
        };
        if geom.height + 2 * padding < geom.kernel || geom.width + 2 * padding < geom.kernel {
            return Err(shape_err("conv2d", "kernel larger than padded input".into()));
        }
        let cols = kernels::im2col(self.value(x).data(), &geom);
        let (p, k, co) = (geom.out_positions(), geom.patch_len(), geom.out_channels);
        let mut y = kernels::matmul_nt(&cols, self.value(w).data(), p, k, co);
        let mut parents = vec![x, w];
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.shape() != [co] {
                return Err(shape_err("conv2d", format!("bias {:?}", bv.shape())));
            }
            for row in y.chunks_mut(co) {
                for (o, bb) in row.iter_mut().zip(bv.data()) {
                    *o += bb;
                }
            }
            parents.push(b);
        }
        let value = Tensor::new(vec![geom.batch, geom.out_height(), geom.out_width(), co], y)?;
        self.push(OpKind::Conv2d, parents, Saved::Conv { geom, cols, has_bias: b.is_some() }, value)
    }

    /// 2×2 average pooling with stride 2 over NHWC input (odd edges dropped).
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let t = self.value(x);
        if t.rank() != 4 || t.shape()[1] < 2 || t.shape()[2] < 2 {
            return Err(shape_err("avg_pool2", format!("{:?}", t.shape())));
        }
        let [n, h, w, c] = [t.shape()[0], t.shape()[1], t.shape()[2], t.shape()[3]];
        let (oh, ow) = (h / 2, w / 2);
        let d = t.data();
        let mut out = vec![0.0; n * oh * ow * c];
        for b in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let o = ((b * oh + oy) * ow + ox) * c;
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let i = ((b * h + 2 * oy + dy) * w + 2 * ox + dx) * c;
                        for ch in 0..c {
                            out[o + ch] += 0.25 * d[i + ch];
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![n, oh, ow, c], out)?;
        self.push(OpKind::AvgPool2, vec![x], Saved::Pool([n, h, w, c]), value)
    }

    /// Averages NHWC input over its spatial axes, giving `[n, c]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let t = self.value(x);
        if t.rank() != 4 {
            return Err(shape_err("global_avg_pool", format!("{:?}", t.shape())));
        }
        let [n, h, w, c] = [t.shape()[0], t.shape()[1], t.shape()[2], t.shape()[3]];
        let inv = 1.0 / (h * w) as f64;
        let mut out = vec![0.0; n * c];
        for (i, chunk) in t.data().chunks(c).enumerate() {
            let b = i / (h * w);
            for ch in 0..c {
                out[b * c + ch] += chunk[ch] * inv;
            }
        }
        let value = Tensor::new(vec![n, c], out)?;
        self.push(OpKind::GlobalAvgPool, vec![x], Saved::Pool([n, h, w, c]), value)
    }

    // ── Backward ───────────────────────────────────────────────────────

    pub fn backward(&self, loss: Var) -> Result<GradStore, AutodiffError> {
        self.backward_traced(loss).map(|(g, _)| g)
    }

    /// Backward pass that also reports which nodes received gradient.
    pub fn backward_traced(&self, loss: Var) -> Result<(GradStore, BackwardTrace), AutodiffError> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(AutodiffError::NotScalar { shape: lv.shape().to_vec() });
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        let mut received = vec![false; self.nodes.len()];
        let mut store = GradStore::default();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            received[i] = true;
            let node = &self.nodes[i];
            for p in &node.parents {
                if p.0 >= i {
                    return Err(AutodiffError::Cycle { child: i, parent: p.0 });
                }
            }
            if let Saved::Param(id) = node.saved {
                store.accumulate(id, node.value.shape(), &g);
                continue;
            }
            for (parent, pg) in self.local_grads(node, &g) {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Ok((store, BackwardTrace { received }))
    }

    /// Vector-Jacobian products of one node with respect to its parents.
    fn local_grads(&self, node: &Node, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let ps = &node.parents;
        let val = |v: Var| self.nodes[v.0].value.data();
        let shape = |v: Var| self.nodes[v.0].value.shape();
        match node.kind {
            OpKind::Constant | OpKind::Param | OpKind::StopGradient => Vec::new(),
            OpKind::Affine => {
                let (x, w) = (ps[0], ps[1]);
                let (n, inp, out) = (shape(x)[0], shape(x)[1], shape(w)[0]);
                let mut res = vec![
                    (x, kernels::matmul_nn(g, val(w), n, out, inp)),
                    (w, kernels::matmul_tn(g, val(x), n, out, inp)),
                ];
                if let Some(&b) = ps.get(2) {
                    res.push((b, column_sums(g, out)));
                }
                res
            }
            OpKind::Add => vec![(ps[0], g.to_vec()), (ps[1], g.to_vec())],
            OpKind::Sub => vec![(ps[0], g.to_vec()), (ps[1], g.iter().map(|v| -v).collect())],
            OpKind::Mul => {
                let (a, b) = (val(ps[0]), val(ps[1]));
                vec![
                    (ps[0], g.iter().zip(b).map(|(g, b)| g * b).collect()),
                    (ps[1], g.iter().zip(a).map(|(g, a)| g * a).collect()),
                ]
            }
            OpKind::Relu => {
                let y = node.value.data();
                vec![(ps[0], g.iter().zip(y).map(|(g, y)| if *y > 0.0 { *g } else { 0.0 }).collect())]
            }
            OpKind::Scale => {
                let Saved::Scale(c) = node.saved else { unreachable!() };
                vec![(ps[0], g.iter().map(|v| v * c).collect())]
            }
            OpKind::Log => vec![(ps[0], g.iter().zip(val(ps[0])).map(|(g, x)| g / x).collect())],
            OpKind::Reshape => vec![(ps[0], g.to_vec())],
            OpKind::Concat => {
                let Saved::Concat(sizes) = &node.saved else { unreachable!() };
                let mut off = 0;
                ps.iter()
                    .zip(sizes)
                    .map(|(&p, &s)| {
                        let part = g[off..off + s].to_vec();
                        off += s;
                        (p, part)
                    })
                    .collect()
            }
            OpKind::Sum => vec![(ps[0], vec![g[0]; self.nodes[ps[0].0].value.numel()])],
            OpKind::Mean => {
                let n = self.nodes[ps[0].0].value.numel();
                vec![(ps[0], vec![g[0] / n as f64; n])]
            }
            OpKind::L2Normalize => {
                let Saved::Norms(norms) = &node.saved else { unreachable!() };
                let y = node.value.data();
                let d = node.value.last_dim();
                let mut dx = Vec::with_capacity(g.len());
                for ((gr, yr), &n) in g.chunks(d).zip(y.chunks(d)).zip(norms) {
                    if n < 0.0 {
                        // clamped row: y = x / eps, a plain scaling
                        dx.extend(gr.iter().map(|v| v / -n));
                    } else {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        dx.extend(gr.iter().zip(yr).map(|(gv, yv)| (gv - yv * dot) / n));
                    }
                }
                vec![(ps[0], dx)]
            }
            OpKind::Softmax => {
                let y = node.value.data();
                let d = node.value.last_dim();
                let mut dx = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(d).zip(y.chunks(d)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    dx.extend(gr.iter().zip(yr).map(|(gv, yv)| yv * (gv - dot)));
                }
                vec![(ps[0], dx)]
            }
            OpKind::LogSoftmax => {
                let y = node.value.data();
                let d = node.value.last_dim();
                let mut dx = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(d).zip(y.chunks(d)) {
                    let s: f64 = gr.iter().sum();
                    dx.extend(gr.iter().zip(yr).map(|(gv, yv)| gv - yv.exp() * s));
                }
                vec![(ps[0], dx)]
            }
            OpKind::BatchNormTrain | OpKind::BatchNormEval => {
                let Saved::BatchNorm { xhat, inv_std, has_gamma, has_beta } = &node.saved else { unreachable!() };
                let c = inv_std.len();
                let n = g.len() / c;
                let gamma = has_gamma.then(|| val(ps[1]));
                let gamma_at = |j: usize| gamma.map_or(1.0, |g| g[j]);
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for (gr, xr) in g.chunks(c).zip(xhat.chunks(c)) {
                    for j in 0..c {
                        sum_g[j] += gr[j];
                        sum_gx[j] += gr[j] * xr[j];
                    }
                }
                let mut dx = Vec::with_capacity(g.len());
                if node.kind == OpKind::BatchNormTrain {
                    let nf = n as f64;
                    for (gr, xr) in g.chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            let k = gamma_at(j) * inv_std[j] / nf;
                            dx.push(k * (nf * gr[j] - sum_g[j] - xr[j] * sum_gx[j]));
                        }
                    }
                } else {
                    for gr in g.chunks(c) {
                        for j in 0..c {
                            dx.push(gr[j] * gamma_at(j) * inv_std[j]);
                        }
                    }
                }
                let mut res = vec![(ps[0], dx)];
                let mut next = 1;
                if *has_gamma {
                    res.push((ps[next], sum_gx));
                    next += 1;
                }
                if *has_beta {
                    res.push((ps[next], sum_g));
                }
                res
            }
            OpKind::Conv2d => {
                let Saved::Conv { geom, cols, has_bias } = &node.saved else { unreachable!() };
                let (p, k, co) = (geom.out_positions(), geom.patch_len(), geom.out_channels);
                let dcols = kernels::matmul_nn(g, val(ps[1]), p, co, k);
                let mut res = vec![
                    (ps[0], kernels::col2im(&dcols, geom)),
                    (ps[1], kernels::matmul_tn(g, cols, p, co, k)),
                ];
                if *has_bias {
                    res.push((ps[2], column_sums(g, co)));
                }
                res
            }
            OpKind::AvgPool2 => {
                let Saved::Pool([n, h, w, c]) = node.saved else { unreachable!() };
                let (oh, ow) = (h / 2, w / 2);
                let mut dx = vec![0.0; n * h * w * c];
                for b in 0..n {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let o = ((b * oh + oy) * ow + ox) * c;
                            for (dy, dxo) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                                let i = ((b * h + 2 * oy + dy) * w + 2 * ox + dxo) * c;
                                for ch in 0..c {
                                    dx[i + ch] += 0.25 * g[o + ch];
                                }
                            }
                        }
                    }
                }
                vec![(ps[0], dx)]
            }
            OpKind::GlobalAvgPool => {
                let Saved::Pool([n, h, w, c]) = node.saved else { unreachable!() };
                let inv = 1.0 / (h * w) as f64;
                let mut dx = Vec::with_capacity(n * h * w * c);
                for b in 0..n {
                    for _ in 0..h * w {
                        dx.extend(g[b * c..(b + 1) * c].iter().map(|v| v * inv));
                    }
                }
                vec![(ps[0], dx)]
            }
        }
    }
}

fn column_sums(g: &[f64], cols: usize) -> Vec<f64> {
    let mut s = vec![0.0; cols];
    for row in g.chunks(cols) {
        for (a, b) in s.iter_mut().zip(row) {
            *a += b;
        }
    }
    s
}

fn shape_err(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::ShapeMismatch { op, detail }
}

fn op_name(kind: OpKind) -> &'static str {
    match kind {
        OpKind::Constant => "constant",
        OpKind::Param => "param",
        OpKind::Affine => "affine",
        OpKind::Add => "add",
        OpKind::Sub => "sub",
        OpKind::Mul => "mul",
        OpKind::Relu => "relu",
        OpKind::BatchNormTrain | OpKind::BatchNormEval => "batch_norm",
        OpKind::L2Normalize => "l2_normalize",
        OpKind::Softmax => "softmax",
        OpKind::LogSoftmax => "log_softmax",
        OpKind::Log => "log",
        OpKind::Mean => "mean",
        OpKind::Sum => "sum",
        OpKind::Scale => "scale",
        OpKind::Concat => "concat",
        OpKind::Reshape => "reshape",
        OpKind::StopGradient => "stop_gradient",
        OpKind::Conv2d => "conv2d",
        OpKind::AvgPool2 => "avg_pool2",
        OpKind::GlobalAvgPool => "global_avg_pool",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn l2_normalize_three_four_five() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![3.0, 4.0])).unwrap();
        let y = t.l2_normalize(x, 1e-12).unwrap();
        assert!(close(t.value(y).data(), &[0.6, 0.8], 1e-15));
    }

    #[test]
    fn l2_normalize_zero_vector_maps_to_zero() {
        let mut t = Tape::new();
        let x = t.param(ParamId(0), Tensor::vector(vec![0.0, 0.0])).unwrap();
        let y = t.l2_normalize(x, 1e-12).unwrap();
        assert_eq!(t.value(y).data(), &[0.0, 0.0]);
        let s = t.sum(y).unwrap();
        let g = t.backward(s).unwrap();
        assert!(g.get(ParamId(0)).unwrap().all_finite());
    }

    #[test]
    fn relu_definition() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![-1.0, 0.0, 2.0])).unwrap();
        let y = t.relu(x).unwrap();
        assert_eq!(t.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn batch_norm_two_rows() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![2, 1], vec![1.0, 3.0]).unwrap()).unwrap();
        let g = t.constant(Tensor::vector(vec![1.0])).unwrap();
        let b = t.constant(Tensor::vector(vec![0.0])).unwrap();
        let (y, stats) = t.batch_norm_train(x, Some(g), Some(b), 1e-5).unwrap();
        // μ = 2, biased σ² = 1
        let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!(close(t.value(y).data(), &[-expect, expect], 1e-12));
        assert_eq!(stats.mean, vec![2.0]);
        assert_eq!(stats.var, vec![2.0]);
    }

    #[test]
    fn batch_norm_rejects_single_row() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
        assert_eq!(t.batch_norm_train(x, None, None, 1e-5).unwrap_err(), AutodiffError::BatchTooSmall { got: 1 });
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![0.0, 1.0])).unwrap();
        assert_eq!(t.log(x).unwrap_err(), AutodiffError::NonFinite { op: "log" });
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::vector(vec![1.0, 2.0])).unwrap();
        let b = t.constant(Tensor::vector(vec![1.0, 2.0, 3.0])).unwrap();
        assert!(matches!(t.add(a, b), Err(AutodiffError::ShapeMismatch { op: "add", .. })));
    }

    #[test]
    fn stop_gradient_is_forward_identity_and_blocks() {
        let mut t = Tape::new();
        let w0 = vec![0.3, -1.7, 2.0];
        let w = t.param(ParamId(0), Tensor::vector(w0.clone())).unwrap();
        let sg = t.stop_gradient(w).unwrap();
        assert!(t.is_grad_blocked(sg));
        assert!(!t.is_grad_blocked(w));
        assert_eq!(t.value(sg).data(), &w0[..]);
        let prod = t.mul(w, sg).unwrap();
        let loss = t.sum(prod).unwrap();
        let g = t.backward(loss).unwrap();
        // product rule with one factor constant: d/dw = sg(w), not 2w
        assert_eq!(g.get(ParamId(0)).unwrap().data(), &w0[..]);
    }

    #[test]
    fn fully_blocked_path_gives_zero_or_no_gradient() {
        let mut t = Tape::new();
        let w = t.param(ParamId(0), Tensor::vector(vec![1.0, 2.0])).unwrap();
        let sg = t.stop_gradient(w).unwrap();
        let loss = t.sum(sg).unwrap();
        let g = t.backward(loss).unwrap();
        assert!(g.get(ParamId(0)).is_none_or(|t| t.data().iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn mean_of_linear_function() {
        let mut t = Tape::new();
        let xs = vec![1.0, -2.0, 0.5, 4.0];
        let w = t.param(ParamId(0), Tensor::vector(vec![0.1, 0.2, 0.3, 0.4])).unwrap();
        let x = t.constant(Tensor::vector(xs.clone())).unwrap();
        let p = t.mul(w, x).unwrap();
        let loss = t.mean(p).unwrap();
        let g = t.backward(loss).unwrap();
        let expect: Vec<f64> = xs.iter().map(|v| v / 4.0).collect();
        assert_eq!(g.get(ParamId(0)).unwrap().data(), &expect[..]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut t = Tape::new();
        let w = t.param(ParamId(0), Tensor::vector(vec![1.0, 2.0])).unwrap();
        assert!(matches!(t.backward(w), Err(AutodiffError::NotScalar { .. })));
    }

    #[test]
    fn shared_leaf_accumulates_once() {
        let mut t = Tape::new();
        let w = t.param(ParamId(3), Tensor::vector(vec![2.0])).unwrap();
        let a = t.mul(w, w).unwrap();
        let b = t.add(a, w).unwrap();
        let loss = t.sum(b).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.get(ParamId(3)).unwrap().data(), &[5.0]);
    }

    #[test]
    fn trace_marks_constants_untouched() {
        let mut t = Tape::new();
        let w = t.param(ParamId(0), Tensor::vector(vec![1.0, 2.0])).unwrap();
        let c = t.constant(Tensor::vector(vec![3.0, 4.0])).unwrap();
        let d = t.sub(w, c).unwrap();
        let sq = t.mul(d, d).unwrap();
        let loss = t.sum(sq).unwrap();
        let (_, trace) = t.backward_traced(loss).unwrap();
        assert!(trace.received_gradient(w));
        assert!(!trace.received_gradient(c));
    }
}
