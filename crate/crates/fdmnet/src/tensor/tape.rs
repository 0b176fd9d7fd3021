//! Reverse-mode tape over [`Tensor`] values.
//!
//! Forward builders evaluate eagerly, validate shapes, and append one node
//! per operation; `backward` replays the recorded ops in reverse. Gradients
//! accumulate across backward calls until [`Tape::zero_grads`]. Nodes bound
//! to a [`ParamStore`] entry sync their gradients back with
//! [`Tape::accumulate_param_grads`].

use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::fourier;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    /// Elementwise product where `m`'s last axis is 1 and broadcasts over
    /// `a`'s last axis.
    MulBroadcastLast { a: NodeId, m: NodeId },
    Scale { a: NodeId, factor: f64 },
    Abs { a: NodeId },
    Relu { a: NodeId },
    Sigmoid { a: NodeId },
    /// Derivative at exactly zero input is 0 by convention (no NaN).
    Sqrt { a: NodeId },
    Log1p { a: NodeId },
    /// ln(max(x, min)); flat below the clamp.
    LnClamped { a: NodeId, min: f64 },
    Sum { a: NodeId },
    Pick { a: NodeId, index: usize },
    Concat { inputs: Vec<NodeId>, axis: usize },
    Stack { inputs: Vec<NodeId> },
    Index { a: NodeId, index: usize },
    Conv2d { input: NodeId, kernel: NodeId, bias: NodeId },
    AvgPool2 { a: NodeId },
    InstanceNorm { a: NodeId, inv_std: Vec<f64> },
    BatchNormTrain {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        inv_std: Vec<f64>,
        mean: Vec<f64>,
        var: Vec<f64>,
    },
    BatchNormEval {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ChannelAvgPool { a: NodeId },
    /// Ties route the gradient to the lowest channel index.
    ChannelMaxPool { a: NodeId, argmax: Vec<usize> },
    GlobalAvgPool { a: NodeId },
    Linear { x: NodeId, w: NodeId, b: NodeId },
    LogSoftmax { x: NodeId },
    Softmax { x: NodeId },
    L2Normalize { x: NodeId, norm: f64 },
    Rfft2 { x: NodeId },
    Irfft2 { s: NodeId, w_full: usize },
    /// Gradient at an exactly-zero bin is 0 by convention.
    Amplitude { s: NodeId },
    /// Gradient at an exactly-zero bin is 0 by convention.
    Phase { s: NodeId },
    PolarCompose { amp: NodeId, phase: NodeId },
    /// Linear, self-adjoint: backward applies the same averaging.
    SymmetrizeMask { m: NodeId, w_full: usize },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Wengert list: append-only nodes, reverse sweep for gradients.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    bindings: Vec<(ParamId, NodeId)>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Accumulated gradient of `id`, if any backward pass reached it.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }

    pub fn zero_grads(&mut self) {
        for g in self.grads.iter_mut() {
            *g = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        debug_assert!(
            value.all_finite(),
            "non-finite value produced by {:?}",
            std::mem::discriminant(&op)
        );
        self.nodes.push(Node { value, op });
        self.grads.push(None);
        NodeId(self.nodes.len() - 1)
    }

    // ---- leaves ----

    /// Copies a tensor onto the tape, keeping its `requires_grad` flag.
    pub fn leaf(&mut self, t: &Tensor) -> NodeId {
        let mut value = t.clone();
        value.grad = None;
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, t: Tensor) -> NodeId {
        let mut value = t;
        value.requires_grad = false;
        value.grad = None;
        self.push(value, Op::Leaf)
    }

    pub fn scalar_const(&mut self, v: f64) -> NodeId {
        self.constant(Tensor::scalar(v))
    }

    /// Leaf bound to a trainable parameter. Repeated calls for the same
    /// parameter return the same node, so each parameter appears once per
    /// tape and fan-out is handled by the graph.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&(_, node)) = self.bindings.iter().find(|(pid, _)| *pid == id) {
            return node;
        }
        let entry = store.get(id);
        assert!(
            entry.trainable,
            "parameter {} is a buffer; pass it as a constant",
            entry.name
        );
        let mut value = entry.tensor.clone();
        value.requires_grad = true;
        value.grad = None;
        let node = self.push(value, Op::Leaf);
        self.bindings.push((id, node));
        node
    }

    // ---- elementwise arithmetic ----

    fn same_shape(&self, a: NodeId, b: NodeId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "operands differ: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b)?;
        let value = Tensor::new(
            self.shape(a).to_vec(),
            self.value(a)
                .data()
                .iter()
                .zip(self.value(b).data())
                .map(|(x, y)| x + y)
                .collect(),
        )?;
        Ok(self.push(value, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b)?;
        let value = Tensor::new(
            self.shape(a).to_vec(),
            self.value(a)
                .data()
                .iter()
                .zip(self.value(b).data())
                .map(|(x, y)| x - y)
                .collect(),
        )?;
        Ok(self.push(value, Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b)?;
        let value = Tensor::new(
            self.shape(a).to_vec(),
            self.value(a)
                .data()
                .iter()
                .zip(self.value(b).data())
                .map(|(x, y)| x * y)
                .collect(),
        )?;
        Ok(self.push(value, Op::Mul { a, b }))
    }

    /// `a[..., c] * m[..., 1]`, broadcasting `m` over the last axis of `a`.
    pub fn mul_broadcast_last(&mut self, a: NodeId, m: NodeId) -> Result<NodeId> {
        let sa = self.shape(a).to_vec();
        let sm = self.shape(m).to_vec();
        if sa.is_empty()
            || sa.len() != sm.len()
            || sm[sm.len() - 1] != 1
            || sa[..sa.len() - 1] != sm[..sm.len() - 1]
        {
            return Err(Error::shape(format!(
                "broadcast product expects [.., c] x [.., 1], got {sa:?} x {sm:?}"
            )));
        }
        let c = sa[sa.len() - 1];
        let md = self.value(m).data();
        let ad = self.value(a).data();
        let mut out = vec![0.0; ad.len()];
        for (i, chunk) in out.chunks_mut(c).enumerate() {
            let f = md[i];
            for (j, slot) in chunk.iter_mut().enumerate() {
                *slot = ad[i * c + j] * f;
            }
        }
        let value = Tensor::new(sa, out)?;
        Ok(self.push(value, Op::MulBroadcastLast { a, m }))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let value = Tensor::new(
            self.shape(a).to_vec(),
            self.value(a).data().iter().map(|x| x * factor).collect(),
        )
        .expect("same shape");
        self.push(value, Op::Scale { a, factor })
    }

    // ---- elementwise nonlinearities ----

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let value = Tensor::new(
            self.shape(a).to_vec(),
            self.value(a).data().iter().map(|x| x.abs()).collect(),
        )
        .expect("same shape");
        self.push(value, Op::Abs { a })
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = Tensor::new(
            self.shape(a).to_vec(),
            self.value(a).data().iter().map(|x| x.max(0.0)).collect(),
        )
        .expect("same shape");
        self.push(value, Op::Relu { a })
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = Tensor::new(
            self.shape(a).to_vec(),
            self.value(a)
                .data()
                .iter()
                .map(|x| 1.0 / (1.0 + (-x).exp()))
                .collect(),
        )
        .expect("same shape");
        self.push(value, Op::Sigmoid { a })
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let value = Tensor::new(
            self.shape(a).to_vec(),
            self.value(a).data().iter().map(|x| x.sqrt()).collect(),
        )
        .expect("same shape");
        self.push(value, Op::Sqrt { a })
    }

    pub fn log1p(&mut self, a: NodeId) -> NodeId {
        let value = Tensor::new(
            self.shape(a).to_vec(),
            self.value(a).data().iter().map(|x| x.ln_1p()).collect(),
        )
        .expect("same shape");
        self.push(value, Op::Log1p { a })
    }

    pub fn ln_clamped(&mut self, a: NodeId, min: f64) -> NodeId {
        assert!(min > 0.0);
        let value = Tensor::new(
            self.shape(a).to_vec(),
            self.value(a).data().iter().map(|x| x.max(min).ln()).collect(),
        )
        .expect("same shape");
        self.push(value, Op::LnClamped { a, min })
    }

    // ---- reductions and indexing ----

    /// Sum of all elements, as a rank-0 scalar.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let total: f64 = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum { a })
    }

    /// Single element at a flat index, as a rank-0 scalar.
    pub fn pick(&mut self, a: NodeId, index: usize) -> Result<NodeId> {
        if index >= self.value(a).numel() {
            return Err(Error::invalid(format!(
                "pick index {index} out of range for {:?}",
                self.shape(a)
            )));
        }
        let v = self.value(a).data()[index];
        Ok(self.push(Tensor::scalar(v), Op::Pick { a, index }))
    }

    /// Mean of rank-0 scalars, built from primitive ops.
    pub fn mean_scalars(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::invalid("mean of zero scalars"));
        }
        let mut acc = xs[0];
        for &x in &xs[1..] {
            acc = self.add(acc, x)?;
        }
        Ok(self.scale(acc, 1.0 / xs.len() as f64))
    }

    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId> {
        if inputs.is_empty() {
            return Err(Error::invalid("concat of zero tensors"));
        }
        let first = self.shape(inputs[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::invalid(format!(
                "concat axis {axis} out of range for rank {}",
                first.len()
            )));
        }
        let mut axis_total = 0;
        for &id in inputs {
            let s = self.shape(id);
            if s.len() != first.len()
                || s[..axis] != first[..axis]
                || s[axis + 1..] != first[axis + 1..]
            {
                return Err(Error::shape(format!(
                    "concat operand {s:?} incompatible with {first:?} on axis {axis}"
                )));
            }
            axis_total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * axis_total * inner];
        let mut axis_off = 0;
        for &id in inputs {
            let d = self.shape(id)[axis];
            let src = self.value(id).data();
            for o in 0..outer {
                let dst_base = (o * axis_total + axis_off) * inner;
                let src_base = o * d * inner;
                out[dst_base..dst_base + d * inner]
                    .copy_from_slice(&src[src_base..src_base + d * inner]);
            }
            axis_off += d;
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        ))
    }

    /// Stacks equally-shaped tensors along a new leading axis.
    pub fn stack(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        if inputs.is_empty() {
            return Err(Error::invalid("stack of zero tensors"));
        }
        let first = self.shape(inputs[0]).to_vec();
        let numel = self.value(inputs[0]).numel();
        let mut out = Vec::with_capacity(inputs.len() * numel);
        for &id in inputs {
            if self.shape(id) != first.as_slice() {
                return Err(Error::shape(format!(
                    "stack operand {:?} differs from {first:?}",
                    self.shape(id)
                )));
            }
            out.extend_from_slice(self.value(id).data());
        }
        let mut shape = vec![inputs.len()];
        shape.extend_from_slice(&first);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Stack {
                inputs: inputs.to_vec(),
            },
        ))
    }

    /// Slice `index` along the leading axis: `[n, rest..] -> [rest..]`.
    pub fn index(&mut self, a: NodeId, index: usize) -> Result<NodeId> {
        let s = self.shape(a).to_vec();
        if s.is_empty() || index >= s[0] {
            return Err(Error::invalid(format!(
                "index {index} out of range for {s:?}"
            )));
        }
        let numel: usize = s[1..].iter().product();
        let data = self.value(a).data()[index * numel..(index + 1) * numel].to_vec();
        let value = Tensor::new(s[1..].to_vec(), data)?;
        Ok(self.push(value, Op::Index { a, index }))
    }

    // ---- convolution, pooling, normalization ----

    /// Same-padded cross-correlation: input `[h, w, c_in]`, kernel
    /// `[k, k, c_in, c_out]` with k in {1, 3}, bias `[c_out]`.
    pub fn conv2d(&mut self, input: NodeId, kernel: NodeId, bias: NodeId) -> Result<NodeId> {
        let si = self.shape(input).to_vec();
        let sk = self.shape(kernel).to_vec();
        let sb = self.shape(bias).to_vec();
        if si.len() != 3 {
            return Err(Error::shape(format!("conv input must be [h,w,c], got {si:?}")));
        }
        if sk.len() != 4 || sk[0] != sk[1] || !(sk[0] == 1 || sk[0] == 3) {
            return Err(Error::shape(format!(
                "conv kernel must be [k,k,c_in,c_out] with k in {{1,3}}, got {sk:?}"
            )));
        }
        if sk[2] != si[2] {
            return Err(Error::shape(format!(
                "kernel expects {} input channels, image has {}",
                sk[2], si[2]
            )));
        }
        if sb != [sk[3]] {
            return Err(Error::shape(format!(
                "bias must be [{}], got {sb:?}",
                sk[3]
            )));
        }
        let (h, w, cin) = (si[0], si[1], si[2]);
        let (k, cout) = (sk[0], sk[3]);
        let r = (k / 2) as isize;
        let xd = self.value(input).data();
        let kd = self.value(kernel).data();
        let bd = self.value(bias).data();
        let mut out = vec![0.0; h * w * cout];
        for y in 0..h {
            for x in 0..w {
                let ob = (y * w + x) * cout;
                out[ob..ob + cout].copy_from_slice(bd);
                for dy in 0..k {
                    let yy = y as isize + dy as isize - r;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    for dx in 0..k {
                        let xx = x as isize + dx as isize - r;
                        if xx < 0 || xx >= w as isize {
                            continue;
                        }
                        let ib = ((yy as usize) * w + xx as usize) * cin;
                        let kb = (dy * k + dx) * cin * cout;
                        for i in 0..cin {
                            let v = xd[ib + i];
                            let ks = kb + i * cout;
                            for o in 0..cout {
                                out[ob + o] += v * kd[ks + o];
                            }
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![h, w, cout], out)?;
        Ok(self.push(value, Op::Conv2d { input, kernel, bias }))
    }

    /// 2x2 mean pooling; spatial dimensions must be even.
    pub fn avg_pool2(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape(a).to_vec();
        if s.len() != 3 || s[0] % 2 != 0 || s[1] % 2 != 0 {
            return Err(Error::shape(format!(
                "2x2 pooling needs an [h,w,c] input with even h and w, got {s:?}"
            )));
        }
        let (h, w, c) = (s[0], s[1], s[2]);
        let d = self.value(a).data();
        let mut out = vec![0.0; (h / 2) * (w / 2) * c];
        for y in 0..h / 2 {
            for x in 0..w / 2 {
                for ch in 0..c {
                    let sum = d[((2 * y) * w + 2 * x) * c + ch]
                        + d[((2 * y) * w + 2 * x + 1) * c + ch]
                        + d[((2 * y + 1) * w + 2 * x) * c + ch]
                        + d[((2 * y + 1) * w + 2 * x + 1) * c + ch];
                    out[(y * (w / 2) + x) * c + ch] = 0.25 * sum;
                }
            }
        }
        let value = Tensor::new(vec![h / 2, w / 2, c], out)?;
        Ok(self.push(value, Op::AvgPool2 { a }))
    }

    /// Per-channel normalization over spatial positions of an `[h, w, c]`
    /// map, population variance, no affine terms.
    pub fn instance_norm(&mut self, a: NodeId, eps: f64) -> Result<NodeId> {
        let s = self.shape(a).to_vec();
        if s.len() != 3 {
            return Err(Error::shape(format!(
                "instance norm expects [h,w,c], got {s:?}"
            )));
        }
        let (h, w, c) = (s[0], s[1], s[2]);
        let n = (h * w) as f64;
        let d = self.value(a).data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for (i, &v) in d.iter().enumerate() {
            mean[i % c] += v;
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        for (i, &v) in d.iter().enumerate() {
            let dv = v - mean[i % c];
            var[i % c] += dv * dv;
        }
        for v in var.iter_mut() {
            *v /= n;
        }
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        let out: Vec<f64> = d
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - mean[i % c]) * inv_std[i % c])
            .collect();
        let value = Tensor::new(s, out)?;
        Ok(self.push(value, Op::InstanceNorm { a, inv_std }))
    }

    /// Batch normalization in training mode: statistics per channel (last
    /// axis) over all other axes of `x`, then an affine transform. Returns
    /// the node; the batch statistics are readable via
    /// [`Tape::batch_stats`] for running-average updates.
    pub fn batch_norm_train(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if s.is_empty() {
            return Err(Error::shape("batch norm input must have a channel axis"));
        }
        let c = s[s.len() - 1];
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape(format!(
                "batch norm affine parameters must be [{c}], got {:?} and {:?}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let n = (self.value(x).numel() / c) as f64;
        if n < 2.0 {
            return Err(Error::invalid(
                "batch norm needs at least two values per channel",
            ));
        }
        let d = self.value(x).data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for (i, &v) in d.iter().enumerate() {
            mean[i % c] += v;
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        for (i, &v) in d.iter().enumerate() {
            let dv = v - mean[i % c];
            var[i % c] += dv * dv;
        }
        for v in var.iter_mut() {
            *v /= n;
        }
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        let gd = self.value(gamma).data().to_vec();
        let bd = self.value(beta).data().to_vec();
        let out: Vec<f64> = d
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let ch = i % c;
                (v - mean[ch]) * inv_std[ch] * gd[ch] + bd[ch]
            })
            .collect();
        let value = Tensor::new(s, out)?;
        Ok(self.push(
            value,
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                inv_std,
                mean,
                var,
            },
        ))
    }

    /// Per-channel batch statistics of a [`Tape::batch_norm_train`] node:
    /// `(mean, population variance)`.
    pub fn batch_stats(&self, id: NodeId) -> Option<(&[f64], &[f64])> {
        match &self.nodes[id.0].op {
            Op::BatchNormTrain { mean, var, .. } => Some((mean, var)),
            _ => None,
        }
    }

    /// Batch normalization in eval mode, normalizing with fixed running
    /// statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if s.is_empty() {
            return Err(Error::shape("batch norm input must have a channel axis"));
        }
        let c = s[s.len() - 1];
        if self.shape(gamma) != [c]
            || self.shape(beta) != [c]
            || running_mean.len() != c
            || running_var.len() != c
        {
            return Err(Error::shape(format!(
                "batch norm eval expects per-channel [{c}] statistics"
            )));
        }
        let inv_std: Vec<f64> = running_var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        let mean = running_mean.to_vec();
        let gd = self.value(gamma).data().to_vec();
        let bd = self.value(beta).data().to_vec();
        let out: Vec<f64> = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let ch = i % c;
                (v - mean[ch]) * inv_std[ch] * gd[ch] + bd[ch]
            })
            .collect();
        let value = Tensor::new(s, out)?;
        Ok(self.push(
            value,
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                mean,
                inv_std,
            },
        ))
    }

    /// Per-channel affine map over the last axis: `y = x * gamma[c] +
    /// beta[c]`, i.e. normalization against frozen identity statistics.
    pub fn channel_affine(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        let s = self.shape(x);
        if s.is_empty() {
            return Err(Error::shape("channel affine input must have a channel axis"));
        }
        let c = s[s.len() - 1];
        self.batch_norm_eval(x, gamma, beta, &vec![0.0; c], &vec![1.0; c], 0.0)
    }

    /// Mean over the channel axis: `[h, w, c] -> [h, w, 1]`.
    pub fn channel_avg_pool(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape(a).to_vec();
        if s.len() != 3 {
            return Err(Error::shape(format!(
                "channel pooling expects [h,w,c], got {s:?}"
            )));
        }
        let c = s[2];
        let d = self.value(a).data();
        let out: Vec<f64> = d
            .chunks(c)
            .map(|px| px.iter().sum::<f64>() / c as f64)
            .collect();
        let value = Tensor::new(vec![s[0], s[1], 1], out)?;
        Ok(self.push(value, Op::ChannelAvgPool { a }))
    }

    /// Maximum over the channel axis: `[h, w, c] -> [h, w, 1]`. Ties pick the
    /// lowest channel index.
    pub fn channel_max_pool(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape(a).to_vec();
        if s.len() != 3 {
            return Err(Error::shape(format!(
                "channel pooling expects [h,w,c], got {s:?}"
            )));
        }
        let c = s[2];
        let d = self.value(a).data();
        let mut out = Vec::with_capacity(s[0] * s[1]);
        let mut argmax = Vec::with_capacity(s[0] * s[1]);
        for px in d.chunks(c) {
            let mut best = 0;
            for (j, &v) in px.iter().enumerate() {
                if v > px[best] {
                    best = j;
                }
            }
            out.push(px[best]);
            argmax.push(best);
        }
        let value = Tensor::new(vec![s[0], s[1], 1], out)?;
        Ok(self.push(value, Op::ChannelMaxPool { a, argmax }))
    }

    /// Spatial mean per channel: `[h, w, c] -> [c]`.
    pub fn global_avg_pool(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape(a).to_vec();
        if s.len() != 3 {
            return Err(Error::shape(format!(
                "global pooling expects [h,w,c], got {s:?}"
            )));
        }
        let (h, w, c) = (s[0], s[1], s[2]);
        let n = (h * w) as f64;
        let d = self.value(a).data();
        let mut out = vec![0.0; c];
        for (i, &v) in d.iter().enumerate() {
            out[i % c] += v;
        }
        for v in out.iter_mut() {
            *v /= n;
        }
        let value = Tensor::new(vec![c], out)?;
        Ok(self.push(value, Op::GlobalAvgPool { a }))
    }

    // ---- dense heads ----

    /// Affine map of a vector: `x [in] * w [in, out] + b [out]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let sb = self.shape(b).to_vec();
        if sx.len() != 1 || sw.len() != 2 || sw[0] != sx[0] || sb != [sw[1]] {
            return Err(Error::shape(format!(
                "linear expects [in] x [in,out] + [out], got {sx:?}, {sw:?}, {sb:?}"
            )));
        }
        let (n_in, n_out) = (sw[0], sw[1]);
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let mut out = self.value(b).data().to_vec();
        for i in 0..n_in {
            let xv = xd[i];
            for o in 0..n_out {
                out[o] += xv * wd[i * n_out + o];
            }
        }
        let value = Tensor::new(vec![n_out], out)?;
        Ok(self.push(value, Op::Linear { x, w, b }))
    }

    pub fn log_softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if s.len() != 1 || s[0] == 0 {
            return Err(Error::shape(format!(
                "log softmax expects a nonempty vector, got {s:?}"
            )));
        }
        let d = self.value(x).data();
        let m = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + d.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let out: Vec<f64> = d.iter().map(|v| v - lse).collect();
        let value = Tensor::new(s, out)?;
        Ok(self.push(value, Op::LogSoftmax { x }))
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if s.len() != 1 || s[0] == 0 {
            return Err(Error::shape(format!(
                "softmax expects a nonempty vector, got {s:?}"
            )));
        }
        let d = self.value(x).data();
        let m = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = d.iter().map(|v| (v - m).exp()).collect();
        let total: f64 = exps.iter().sum();
        let out: Vec<f64> = exps.iter().map(|v| v / total).collect();
        let value = Tensor::new(s, out)?;
        Ok(self.push(value, Op::Softmax { x }))
    }

    /// `x / ||x||_2`; errors on (near-)zero vectors.
    pub fn l2_normalize(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if s.len() != 1 {
            return Err(Error::shape(format!(
                "l2 normalize expects a vector, got {s:?}"
            )));
        }
        let d = self.value(x).data();
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::Numerical(
                "cannot normalize a zero vector".into(),
            ));
        }
        let out: Vec<f64> = d.iter().map(|v| v / norm).collect();
        let value = Tensor::new(s, out)?;
        Ok(self.push(value, Op::L2Normalize { x, norm }))
    }

    // ---- spectral ops ----

    /// Unitary forward transform of `[h, w, c]` to the half-width spectrum
    /// `[h, w/2+1, c, 2]` (re/im interleaved).
    pub fn rfft2(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || s.contains(&0) {
            return Err(Error::shape(format!(
                "spectral transform expects [h,w,c], got {s:?}"
            )));
        }
        let (h, w, c) = (s[0], s[1], s[2]);
        let out = fourier::rfft2_raw(h, w, c, self.value(x).data());
        let value = Tensor::new(vec![h, w / 2 + 1, c, 2], out)?;
        Ok(self.push(value, Op::Rfft2 { x }))
    }

    /// Unitary inverse of a half-width spectrum back to `[h, w_full, c]`.
    /// Errors if the spectrum is not consistent with a real image.
    pub fn irfft2(&mut self, s: NodeId, w_full: usize) -> Result<NodeId> {
        let sh = self.shape(s).to_vec();
        if sh.len() != 4 || sh[3] != 2 || sh[1] != w_full / 2 + 1 {
            return Err(Error::shape(format!(
                "inverse transform expects [h, {}/2+1, c, 2], got {sh:?}",
                w_full
            )));
        }
        let (h, c) = (sh[0], sh[2]);
        let out = fourier::irfft2_raw(h, w_full, c, self.value(s).data())?;
        let value = Tensor::new(vec![h, w_full, c], out)?;
        Ok(self.push(value, Op::Irfft2 { s, w_full }))
    }

    /// Per-bin amplitude of an interleaved spectrum: `[h, wh, c, 2] -> [h, wh, c]`.
    pub fn amplitude(&mut self, s: NodeId) -> Result<NodeId> {
        let sh = self.shape(s).to_vec();
        if sh.len() != 4 || sh[3] != 2 {
            return Err(Error::shape(format!(
                "amplitude expects [h, wh, c, 2], got {sh:?}"
            )));
        }
        let d = self.value(s).data();
        let out: Vec<f64> = d
            .chunks(2)
            .map(|z| (z[0] * z[0] + z[1] * z[1]).sqrt())
            .collect();
        let value = Tensor::new(sh[..3].to_vec(), out)?;
        Ok(self.push(value, Op::Amplitude { s }))
    }

    /// Per-bin phase `atan2(im, re)`; exactly-zero bins give 0.
    pub fn phase(&mut self, s: NodeId) -> Result<NodeId> {
        let sh = self.shape(s).to_vec();
        if sh.len() != 4 || sh[3] != 2 {
            return Err(Error::shape(format!(
                "phase expects [h, wh, c, 2], got {sh:?}"
            )));
        }
        let d = self.value(s).data();
        let out: Vec<f64> = d
            .chunks(2)
            .map(|z| {
                if z[0] == 0.0 && z[1] == 0.0 {
                    0.0
                } else {
                    z[1].atan2(z[0])
                }
            })
            .collect();
        let value = Tensor::new(sh[..3].to_vec(), out)?;
        Ok(self.push(value, Op::Phase { s }))
    }

    /// Rebuilds an interleaved spectrum from amplitude and phase:
    /// `re = A cos P, im = A sin P`.
    pub fn polar_compose(&mut self, amp: NodeId, phase: NodeId) -> Result<NodeId> {
        self.same_shape(amp, phase)?;
        let sh = self.shape(amp).to_vec();
        if sh.len() != 3 {
            return Err(Error::shape(format!(
                "polar compose expects [h, wh, c], got {sh:?}"
            )));
        }
        let ad = self.value(amp).data();
        let pd = self.value(phase).data();
        let mut out = vec![0.0; ad.len() * 2];
        for i in 0..ad.len() {
            out[2 * i] = ad[i] * pd[i].cos();
            out[2 * i + 1] = ad[i] * pd[i].sin();
        }
        let mut shape = sh;
        shape.push(2);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::PolarCompose { amp, phase }))
    }

    /// Averages each mirror row pair (u, h-u) within the self-conjugate
    /// columns (v = 0 and, for even widths, v = w/2) of an `[h, wh, 1]`
    /// mask, leaving other columns untouched. A mask passed through this is
    /// safe to multiply onto half-spectrum amplitudes: the scaled spectrum
    /// keeps the conjugate symmetry the inverse transform checks for.
    pub fn symmetrize_mask(&mut self, m: NodeId, w_full: usize) -> Result<NodeId> {
        let s = self.shape(m).to_vec();
        if s.len() != 3 || s[2] != 1 || s[1] != w_full / 2 + 1 {
            return Err(Error::shape(format!(
                "mask for width {w_full} must be [h, {}, 1], got {s:?}",
                w_full / 2 + 1
            )));
        }
        let value = Tensor::new(
            s.clone(),
            symmetrize_mask_values(self.value(m).data(), s[0], s[1], w_full),
        )?;
        Ok(self.push(value, Op::SymmetrizeMask { m, w_full }))
    }

    // ---- backward ----

    /// Reverse sweep from a scalar loss node. Gradients add into the tape's
    /// buffers, so calling twice doubles every gradient.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut local: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        local[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = local[i].take() else { continue };
            self.backprop_node(i, &g, &mut local);
            // keep the node's own gradient
            match &mut self.grads[i] {
                Some(dst) => {
                    for (d, s) in dst.iter_mut().zip(&g) {
                        *d += s;
                    }
                }
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }

    /// Syncs gradients of parameter-bound leaves into the store,
    /// accumulating into each parameter's grad buffer.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for &(pid, node) in &self.bindings {
            if let Some(g) = self.grads[node.0].as_deref() {
                store.tensor_mut(pid).accumulate_grad(g);
            }
        }
    }

    fn backprop_node(&self, i: usize, g: &[f64], local: &mut Vec<Option<Vec<f64>>>) {
        let nodes = &self.nodes;
        let numel = |id: NodeId| nodes[id.0].value.numel();
        macro_rules! buf {
            ($id:expr) => {
                local[$id.0]
                    .get_or_insert_with(|| vec![0.0; numel($id)])
                    .as_mut_slice()
            };
        }
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Add { a, b } => {
                for (d, s) in buf!(*a).iter_mut().zip(g) {
                    *d += s;
                }
                for (d, s) in buf!(*b).iter_mut().zip(g) {
                    *d += s;
                }
            }
            Op::Sub { a, b } => {
                for (d, s) in buf!(*a).iter_mut().zip(g) {
                    *d += s;
                }
                for (d, s) in buf!(*b).iter_mut().zip(g) {
                    *d -= s;
                }
            }
            Op::Mul { a, b } => {
                {
                    let bv = nodes[b.0].value.data();
                    for ((d, s), x) in buf!(*a).iter_mut().zip(g).zip(bv) {
                        *d += s * x;
                    }
                }
                let av = nodes[a.0].value.data();
                for ((d, s), x) in buf!(*b).iter_mut().zip(g).zip(av) {
                    *d += s * x;
                }
            }
            Op::MulBroadcastLast { a, m } => {
                let c = nodes[a.0].value.shape().last().copied().unwrap_or(1);
                {
                    let mv = nodes[m.0].value.data();
                    let da = buf!(*a);
                    for (i, gv) in g.iter().enumerate() {
                        da[i] += gv * mv[i / c];
                    }
                }
                let av = nodes[a.0].value.data();
                let dm = buf!(*m);
                for (i, gv) in g.iter().enumerate() {
                    dm[i / c] += gv * av[i];
                }
            }
            Op::Scale { a, factor } => {
                for (d, s) in buf!(*a).iter_mut().zip(g) {
                    *d += s * factor;
                }
            }
            Op::Abs { a } => {
                let av = nodes[a.0].value.data();
                for ((d, s), x) in buf!(*a).iter_mut().zip(g).zip(av) {
                    *d += s * if *x > 0.0 {
                        1.0
                    } else if *x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                }
            }
            Op::Relu { a } => {
                let av = nodes[a.0].value.data();
                for ((d, s), x) in buf!(*a).iter_mut().zip(g).zip(av) {
                    if *x > 0.0 {
                        *d += s;
                    }
                }
            }
            Op::Sigmoid { a } => {
                let out = nodes[i].value.data();
                for ((d, s), y) in buf!(*a).iter_mut().zip(g).zip(out) {
                    *d += s * y * (1.0 - y);
                }
            }
            Op::Sqrt { a } => {
                let out = nodes[i].value.data();
                for ((d, s), y) in buf!(*a).iter_mut().zip(g).zip(out) {
                    if *y > 0.0 {
                        *d += s * 0.5 / y;
                    }
                }
            }
            Op::Log1p { a } => {
                let av = nodes[a.0].value.data();
                for ((d, s), x) in buf!(*a).iter_mut().zip(g).zip(av) {
                    *d += s / (1.0 + x);
                }
            }
            Op::LnClamped { a, min } => {
                let av = nodes[a.0].value.data();
                for ((d, s), x) in buf!(*a).iter_mut().zip(g).zip(av) {
                    if *x > *min {
                        *d += s / x;
                    }
                }
            }
            Op::Sum { a } => {
                let gv = g[0];
                for d in buf!(*a).iter_mut() {
                    *d += gv;
                }
            }
            Op::Pick { a, index } => {
                buf!(*a)[*index] += g[0];
            }
            Op::Concat { inputs, axis } => {
                let out_shape = nodes[i].value.shape();
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[*axis + 1..].iter().product();
                let total = out_shape[*axis];
                let mut axis_off = 0;
                for &id in inputs {
                    let d = nodes[id.0].value.shape()[*axis];
                    let dst = buf!(id);
                    for o in 0..outer {
                        let src_base = (o * total + axis_off) * inner;
                        let dst_base = o * d * inner;
                        for j in 0..d * inner {
                            dst[dst_base + j] += g[src_base + j];
                        }
                    }
                    axis_off += d;
                }
            }
            Op::Stack { inputs } => {
                let each = if inputs.is_empty() { 0 } else { numel(inputs[0]) };
                for (n, &id) in inputs.iter().enumerate() {
                    let dst = buf!(id);
                    for (d, s) in dst.iter_mut().zip(&g[n * each..(n + 1) * each]) {
                        *d += s;
                    }
                }
            }
            Op::Index { a, index } => {
                let each = g.len();
                let dst = buf!(*a);
                for (j, s) in g.iter().enumerate() {
                    dst[index * each + j] += s;
                }
            }
            Op::Conv2d { input, kernel, bias } => {
                let si = nodes[input.0].value.shape().to_vec();
                let sk = nodes[kernel.0].value.shape().to_vec();
                let (h, w, cin) = (si[0], si[1], si[2]);
                let (k, cout) = (sk[0], sk[3]);
                let r = (k / 2) as isize;
                let xd = nodes[input.0].value.data();
                let kd = nodes[kernel.0].value.data();
                {
                    let db = buf!(*bias);
                    for px in g.chunks(cout) {
                        for (o, s) in px.iter().enumerate() {
                            db[o] += s;
                        }
                    }
                }
                {
                    let dk = buf!(*kernel);
                    for y in 0..h {
                        for x in 0..w {
                            let ob = (y * w + x) * cout;
                            for dy in 0..k {
                                let yy = y as isize + dy as isize - r;
                                if yy < 0 || yy >= h as isize {
                                    continue;
                                }
                                for dx in 0..k {
                                    let xx = x as isize + dx as isize - r;
                                    if xx < 0 || xx >= w as isize {
                                        continue;
                                    }
                                    let ib = ((yy as usize) * w + xx as usize) * cin;
                                    let kb = (dy * k + dx) * cin * cout;
                                    for ci in 0..cin {
                                        let v = xd[ib + ci];
                                        let ks = kb + ci * cout;
                                        for o in 0..cout {
                                            dk[ks + o] += v * g[ob + o];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                let din = buf!(*input);
                for y in 0..h {
                    for x in 0..w {
                        let ob = (y * w + x) * cout;
                        for dy in 0..k {
                            let yy = y as isize + dy as isize - r;
                            if yy < 0 || yy >= h as isize {
                                continue;
                            }
                            for dx in 0..k {
                                let xx = x as isize + dx as isize - r;
                                if xx < 0 || xx >= w as isize {
                                    continue;
                                }
                                let ib = ((yy as usize) * w + xx as usize) * cin;
                                let kb = (dy * k + dx) * cin * cout;
                                for ci in 0..cin {
                                    let ks = kb + ci * cout;
                                    let mut acc = 0.0;
                                    for o in 0..cout {
                                        acc += kd[ks + o] * g[ob + o];
                                    }
                                    din[ib + ci] += acc;
                                }
                            }
                        }
                    }
                }
            }
            Op::AvgPool2 { a } => {
                let s = nodes[a.0].value.shape();
                let (h, w, c) = (s[0], s[1], s[2]);
                let da = buf!(*a);
                for y in 0..h / 2 {
                    for x in 0..w / 2 {
                        for ch in 0..c {
                            let gv = 0.25 * g[(y * (w / 2) + x) * c + ch];
                            da[((2 * y) * w + 2 * x) * c + ch] += gv;
                            da[((2 * y) * w + 2 * x + 1) * c + ch] += gv;
                            da[((2 * y + 1) * w + 2 * x) * c + ch] += gv;
                            da[((2 * y + 1) * w + 2 * x + 1) * c + ch] += gv;
                        }
                    }
                }
            }
            Op::InstanceNorm { a, inv_std } => {
                let c = inv_std.len();
                let n = (nodes[a.0].value.numel() / c) as f64;
                let xhat = nodes[i].value.data();
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for (j, &gv) in g.iter().enumerate() {
                    sum_g[j % c] += gv;
                    sum_gx[j % c] += gv * xhat[j];
                }
                let da = buf!(*a);
                for (j, &gv) in g.iter().enumerate() {
                    let ch = j % c;
                    da[j] += inv_std[ch] * (gv - sum_g[ch] / n - xhat[j] * sum_gx[ch] / n);
                }
            }
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                inv_std,
                mean,
                ..
            } => {
                let c = inv_std.len();
                let n = (nodes[x.0].value.numel() / c) as f64;
                let xd = nodes[x.0].value.data();
                let gd = nodes[gamma.0].value.data();
                // normalized activations and per-channel reductions
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for (j, &gv) in g.iter().enumerate() {
                    let ch = j % c;
                    let xh = (xd[j] - mean[ch]) * inv_std[ch];
                    sum_g[ch] += gv;
                    sum_gx[ch] += gv * xh;
                }
                {
                    let dgamma = buf!(*gamma);
                    for ch in 0..c {
                        dgamma[ch] += sum_gx[ch];
                    }
                }
                {
                    let dbeta = buf!(*beta);
                    for ch in 0..c {
                        dbeta[ch] += sum_g[ch];
                    }
                }
                let dx = buf!(*x);
                for (j, &gv) in g.iter().enumerate() {
                    let ch = j % c;
                    let xh = (xd[j] - mean[ch]) * inv_std[ch];
                    dx[j] += gd[ch]
                        * inv_std[ch]
                        * (gv - sum_g[ch] / n - xh * sum_gx[ch] / n);
                }
            }
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                mean,
                inv_std,
            } => {
                let c = inv_std.len();
                let xd = nodes[x.0].value.data();
                let gd = nodes[gamma.0].value.data();
                {
                    let dgamma = buf!(*gamma);
                    for (j, &gv) in g.iter().enumerate() {
                        let ch = j % c;
                        dgamma[ch] += gv * (xd[j] - mean[ch]) * inv_std[ch];
                    }
                }
                {
                    let dbeta = buf!(*beta);
                    for (j, &gv) in g.iter().enumerate() {
                        dbeta[j % c] += gv;
                    }
                }
                let dx = buf!(*x);
                for (j, &gv) in g.iter().enumerate() {
                    let ch = j % c;
                    dx[j] += gv * gd[ch] * inv_std[ch];
                }
            }
            Op::ChannelAvgPool { a } => {
                let c = nodes[a.0].value.shape()[2];
                let da = buf!(*a);
                for (px, &gv) in g.iter().enumerate() {
                    let share = gv / c as f64;
                    for ch in 0..c {
                        da[px * c + ch] += share;
                    }
                }
            }
            Op::ChannelMaxPool { a, argmax } => {
                let c = nodes[a.0].value.shape()[2];
                let da = buf!(*a);
                for (px, &gv) in g.iter().enumerate() {
                    da[px * c + argmax[px]] += gv;
                }
            }
            Op::GlobalAvgPool { a } => {
                let s = nodes[a.0].value.shape();
                let (h, w, c) = (s[0], s[1], s[2]);
                let n = (h * w) as f64;
                let da = buf!(*a);
                for j in 0..h * w * c {
                    da[j] += g[j % c] / n;
                }
            }
            Op::Linear { x, w, b } => {
                let n_in = nodes[x.0].value.numel();
                let n_out = g.len();
                let xd = nodes[x.0].value.data();
                let wd = nodes[w.0].value.data();
                {
                    let dx = buf!(*x);
                    for i_in in 0..n_in {
                        let mut acc = 0.0;
                        for o in 0..n_out {
                            acc += wd[i_in * n_out + o] * g[o];
                        }
                        dx[i_in] += acc;
                    }
                }
                {
                    let dw = buf!(*w);
                    for i_in in 0..n_in {
                        let xv = xd[i_in];
                        for o in 0..n_out {
                            dw[i_in * n_out + o] += xv * g[o];
                        }
                    }
                }
                let db = buf!(*b);
                for (d, s) in db.iter_mut().zip(g) {
                    *d += s;
                }
            }
            Op::LogSoftmax { x } => {
                let out = nodes[i].value.data();
                let sum_g: f64 = g.iter().sum();
                let dx = buf!(*x);
                for (j, &gv) in g.iter().enumerate() {
                    dx[j] += gv - out[j].exp() * sum_g;
                }
            }
            Op::Softmax { x } => {
                let out = nodes[i].value.data();
                let dot: f64 = g.iter().zip(out).map(|(a, b)| a * b).sum();
                let dx = buf!(*x);
                for (j, &sv) in out.iter().enumerate() {
                    dx[j] += sv * (g[j] - dot);
                }
            }
            Op::L2Normalize { x, norm } => {
                let xd = nodes[x.0].value.data();
                let gx: f64 = g.iter().zip(xd).map(|(a, b)| a * b).sum();
                let r3 = norm * norm * norm;
                let dx = buf!(*x);
                for (j, &gv) in g.iter().enumerate() {
                    dx[j] += gv / norm - xd[j] * gx / r3;
                }
            }
            Op::Rfft2 { x } => {
                let s = nodes[x.0].value.shape();
                let (h, w, c) = (s[0], s[1], s[2]);
                let adj = fourier::rfft2_adjoint(h, w, c, g);
                for (d, s) in buf!(*x).iter_mut().zip(&adj) {
                    *d += s;
                }
            }
            Op::Irfft2 { s, w_full } => {
                let sh = nodes[s.0].value.shape();
                let (h, c) = (sh[0], sh[2]);
                let adj = fourier::irfft2_adjoint(h, *w_full, c, g);
                for (d, v) in buf!(*s).iter_mut().zip(&adj) {
                    *d += v;
                }
            }
            Op::Amplitude { s } => {
                let sd = nodes[s.0].value.data();
                let out = nodes[i].value.data();
                let ds = buf!(*s);
                for (j, &gv) in g.iter().enumerate() {
                    let a = out[j];
                    if a > 0.0 {
                        ds[2 * j] += gv * sd[2 * j] / a;
                        ds[2 * j + 1] += gv * sd[2 * j + 1] / a;
                    }
                }
            }
            Op::Phase { s } => {
                let sd = nodes[s.0].value.data();
                let ds = buf!(*s);
                for (j, &gv) in g.iter().enumerate() {
                    let re = sd[2 * j];
                    let im = sd[2 * j + 1];
                    let a2 = re * re + im * im;
                    if a2 > 0.0 {
                        ds[2 * j] += -gv * im / a2;
                        ds[2 * j + 1] += gv * re / a2;
                    }
                }
            }
            Op::PolarCompose { amp, phase } => {
                let ad = nodes[amp.0].value.data();
                let pd = nodes[phase.0].value.data();
                {
                    let da = buf!(*amp);
                    for j in 0..ad.len() {
                        da[j] += g[2 * j] * pd[j].cos() + g[2 * j + 1] * pd[j].sin();
                    }
                }
                let dp = buf!(*phase);
                for j in 0..ad.len() {
                    dp[j] += ad[j] * (-g[2 * j] * pd[j].sin() + g[2 * j + 1] * pd[j].cos());
                }
            }
            Op::SymmetrizeMask { m, w_full } => {
                let s = nodes[m.0].value.shape();
                let (h, wh) = (s[0], s[1]);
                let sg = symmetrize_mask_values(g, h, wh, *w_full);
                let dm = buf!(*m);
                for (slot, v) in dm.iter_mut().zip(&sg) {
                    *slot += v;
                }
            }
        }
    }
}

/// Shared forward/adjoint kernel of [`Tape::symmetrize_mask`]: the averaging
/// matrix is symmetric, so the same map serves both directions.
fn symmetrize_mask_values(d: &[f64], h: usize, wh: usize, w_full: usize) -> Vec<f64> {
    let mut out = d.to_vec();
    let mut columns = vec![0usize];
    if w_full % 2 == 0 && w_full > 1 {
        columns.push(w_full / 2);
    }
    for &v in &columns {
        for u in 0..h {
            let mu = (h - u) % h;
            out[u * wh + v] = 0.5 * (d[u * wh + v] + d[mu * wh + v]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn quadratic_gradient_is_input() {
        // loss = sum(x * x) / 2, so dloss/dx = x
        let mut tape = Tape::new();
        let x = tape.leaf(&tensor(&[3], &[1.0, -2.0, 3.0]));
        let sq = tape.mul(x, x).unwrap();
        let total = tape.sum(sq);
        let loss = tape.scale(total, 0.5);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn backward_twice_exactly_doubles_leaf_gradients() {
        let mut tape = Tape::new();
        let x = tape.leaf(&tensor(&[2], &[0.3, -0.7]));
        let y = tape.mul(x, x).unwrap();
        let loss = tape.sum(y);
        tape.backward(loss).unwrap();
        let once: Vec<f64> = tape.grad(x).unwrap().to_vec();
        tape.backward(loss).unwrap();
        let twice: Vec<f64> = tape.grad(x).unwrap().to_vec();
        for (a, b) in once.iter().zip(&twice) {
            assert_eq!(2.0 * a, *b);
        }
        tape.zero_grads();
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn identity_conv_reproduces_input() {
        let mut tape = Tape::new();
        let x = tape.leaf(&tensor(&[2, 2, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]));
        // kernel [1,1,2,2] with k[0,0,i,o] = delta_io
        let k = tape.leaf(&tensor(&[1, 1, 2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = tape.leaf(&tensor(&[2], &[0.0, 0.0]));
        let y = tape.conv2d(x, k, b).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn conv_rejects_even_kernel_and_channel_mismatch() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::zeros(&[4, 4, 2]));
        let k2 = tape.leaf(&Tensor::zeros(&[2, 2, 2, 1]));
        let b = tape.leaf(&Tensor::zeros(&[1]));
        assert!(tape.conv2d(x, k2, b).is_err());
        let k_badc = tape.leaf(&Tensor::zeros(&[3, 3, 3, 1]));
        assert!(tape.conv2d(x, k_badc, b).is_err());
    }

    #[test]
    fn instance_norm_two_values() {
        // channel with values {1, 3}: mean 2, population var 1
        let mut tape = Tape::new();
        let x = tape.leaf(&tensor(&[2, 1, 1], &[1.0, 3.0]));
        let y = tape.instance_norm(x, 1e-5).unwrap();
        let want = 1.0 / (1.0 + 1e-5f64).sqrt();
        assert!((tape.value(y).data()[0] + want).abs() < 1e-15);
        assert!((tape.value(y).data()[1] - want).abs() < 1e-15);
    }

    #[test]
    fn batch_norm_train_normalizes_and_eval_uses_given_stats() {
        let mut tape = Tape::new();
        let x = tape.leaf(&tensor(&[4, 1, 1, 1], &[1.0, 2.0, 3.0, 4.0]));
        let gamma = tape.leaf(&tensor(&[1], &[1.0]));
        let beta = tape.leaf(&tensor(&[1], &[0.0]));
        let y = tape.batch_norm_train(x, gamma, beta, 1e-5).unwrap();
        let out = tape.value(y).data();
        let mean: f64 = out.iter().sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        let (m, v) = tape.batch_stats(y).unwrap();
        assert!((m[0] - 2.5).abs() < 1e-12);
        assert!((v[0] - 1.25).abs() < 1e-12);

        let z = tape
            .batch_norm_eval(x, gamma, beta, &[2.5], &[1.25], 1e-5)
            .unwrap();
        let ze = tape.value(z).data();
        assert!((ze[0] - (1.0 - 2.5) / (1.25f64 + 1e-5).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn channel_affine_scales_and_shifts_exactly() {
        let mut tape = Tape::new();
        let x = tape.leaf(&tensor(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let gamma = tape.leaf(&tensor(&[2], &[2.0, -1.0]));
        let beta = tape.leaf(&tensor(&[2], &[0.5, 10.0]));
        let y = tape.channel_affine(x, gamma, beta).unwrap();
        assert_eq!(tape.value(y).data(), &[2.5, 8.0, 6.5, 6.0]);
        let l = tape.sum(y);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, -1.0, 2.0, -1.0]);
        assert_eq!(tape.grad(gamma).unwrap(), &[4.0, 6.0]);
        assert_eq!(tape.grad(beta).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn channel_pools_and_tie_breaking() {
        let mut tape = Tape::new();
        // one pixel, three channels, max tied between channels 0 and 2
        let x = tape.leaf(&tensor(&[1, 1, 3], &[5.0, 1.0, 5.0]));
        let avg = tape.channel_avg_pool(x).unwrap();
        let max = tape.channel_max_pool(x).unwrap();
        assert!((tape.value(avg).item() - 11.0 / 3.0).abs() < 1e-15);
        assert_eq!(tape.value(max).item(), 5.0);
        let l = tape.sum(max);
        tape.backward(l).unwrap();
        // gradient goes to the lowest tied channel only
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn global_avg_pool_means_over_space() {
        let mut tape = Tape::new();
        let x = tape.leaf(&tensor(&[2, 2, 2], &[1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0]));
        let y = tape.global_avg_pool(x).unwrap();
        assert_eq!(tape.value(y).data(), &[2.5, 25.0]);
    }

    #[test]
    fn log_softmax_of_equal_logits_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.leaf(&tensor(&[2], &[1.0, 1.0]));
        let y = tape.log_softmax(x).unwrap();
        let want = -(2.0f64).ln();
        for v in tape.value(y).data() {
            assert!((v - want).abs() < 1e-15);
        }
    }

    #[test]
    fn l2_normalize_rejects_zero_vector() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::zeros(&[3]));
        assert!(tape.l2_normalize(x).is_err());
    }

    #[test]
    fn sqrt_at_zero_has_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(&tensor(&[2], &[0.0, 4.0]));
        let y = tape.sqrt(x);
        let l = tape.sum(y);
        tape.backward(l).unwrap();
        let g = tape.grad(x).unwrap();
        assert_eq!(g[0], 0.0);
        assert!((g[1] - 0.25).abs() < 1e-15);
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn amplitude_and_phase_at_zero_bin_have_zero_gradient() {
        let mut tape = Tape::new();
        // spectrum [1,1,1,2] with re=im=0
        let s = tape.leaf(&tensor(&[1, 1, 1, 2], &[0.0, 0.0]));
        let a = tape.amplitude(s).unwrap();
        let p = tape.phase(s).unwrap();
        assert_eq!(tape.value(a).item(), 0.0);
        assert_eq!(tape.value(p).item(), 0.0);
        let sum_ap = tape.add(a, p).unwrap();
        let l = tape.sum(sum_ap);
        tape.backward(l).unwrap();
        let g = tape.grad(s).unwrap();
        assert_eq!(g, &[0.0, 0.0]);
    }

    #[test]
    fn stack_index_concat_roundtrip() {
        let mut tape = Tape::new();
        let a = tape.leaf(&tensor(&[2, 1, 1], &[1.0, 2.0]));
        let b = tape.leaf(&tensor(&[2, 1, 1], &[3.0, 4.0]));
        let st = tape.stack(&[a, b]).unwrap();
        assert_eq!(tape.shape(st), &[2, 2, 1, 1]);
        let back = tape.index(st, 1).unwrap();
        assert_eq!(tape.value(back).data(), &[3.0, 4.0]);

        let cat = tape.concat(&[a, b], 2).unwrap();
        assert_eq!(tape.shape(cat), &[2, 1, 2]);
        assert_eq!(tape.value(cat).data(), &[1.0, 3.0, 2.0, 4.0]);
    }

    #[test]
    fn param_binding_dedupes_and_accumulates() {
        let mut store = ParamStore::new();
        let w = store.add("w", tensor(&[2], &[1.0, 2.0]).with_requires_grad(), true);
        let mut tape = Tape::new();
        let n1 = tape.param(&store, w);
        let n2 = tape.param(&store, w);
        assert_eq!(n1, n2);
        let y = tape.mul(n1, n2).unwrap();
        let l = tape.sum(y);
        tape.backward(l).unwrap();
        tape.accumulate_param_grads(&mut store);
        // d/dw sum(w*w) = 2w
        assert_eq!(store.tensor(w).grad.as_deref(), Some(&[2.0, 4.0][..]));
    }

    #[test]
    fn spectral_roundtrip_on_tape() {
        let mut tape = Tape::new();
        let x = tape.leaf(&tensor(
            &[2, 3, 1],
            &[0.1, -0.4, 0.9, 0.5, 0.2, -0.3],
        ));
        let s = tape.rfft2(x).unwrap();
        let back = tape.irfft2(s, 3).unwrap();
        let err: f64 = tape
            .value(back)
            .data()
            .iter()
            .zip(tape.value(x).data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn symmetrize_mask_averages_only_self_conjugate_columns() {
        // width 6: wh = 4, self-conjugate columns 0 and 3
        let mut tape = Tape::new();
        let vals: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let m = tape.leaf(&tensor(&[4, 4, 1], &vals));
        let sym = tape.symmetrize_mask(m, 6).unwrap();
        let out = tape.value(sym).data();
        for v in [0usize, 3] {
            for u in 0..4 {
                let mu = (4 - u) % 4;
                assert_eq!(out[u * 4 + v], out[mu * 4 + v], "column {v} row {u}");
                let expected = 0.5 * (vals[u * 4 + v] + vals[mu * 4 + v]);
                assert_eq!(out[u * 4 + v], expected);
            }
        }
        for v in [1usize, 2] {
            for u in 0..4 {
                assert_eq!(out[u * 4 + v], vals[u * 4 + v], "column {v} must not move");
            }
        }
    }

    #[test]
    fn symmetrize_mask_backward_is_self_adjoint() {
        // loss = sum(weights * S(m)) must give grad = S(weights)
        let mut tape = Tape::new();
        let vals: Vec<f64> = (0..12).map(|i| (i as f64) * 0.5 - 2.0).collect();
        let weights: Vec<f64> = (0..12).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let m = tape.leaf(&tensor(&[3, 4, 1], &vals));
        let sym = tape.symmetrize_mask(m, 6).unwrap();
        let w = tape.constant(tensor(&[3, 4, 1], &weights));
        let prod = tape.mul(sym, w).unwrap();
        let loss = tape.sum(prod);
        tape.backward(loss).unwrap();
        let expected = symmetrize_mask_values(&weights, 3, 4, 6);
        assert_eq!(tape.grad(m).unwrap(), &expected[..]);
    }
}
