//! Reverse-mode automatic differentiation on a flat tape of tensor ops.
//!
//! A `Graph` is built fresh for every forward pass. Nodes are appended in
//! topological order, so a reverse scan over node ids is a valid reverse
//! topological order for backpropagation. Gradients live outside the graph
//! in a `GradStore`, which makes it cheap to run many backward passes (one
//! per probe vector) over a single taped forward.
//!
//! The op set is exactly what the models and the attack head need: dense and
//! convolutional affine maps, ReLU, 2x2 max pooling, reshape, elementwise
//! helpers, and two fused losses.

use crate::error::{Error, Result};
use crate::tensor::{matmul, matmul_nt, matmul_tn, Tensor};

/// Handle to a node in a `Graph`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(pub(crate) usize);

enum Op {
    Leaf,
    /// Same-shape elementwise sum.
    Add(VarId, VarId),
    /// `[m, n] + [n]`, bias broadcast over rows.
    BiasAddRow(VarId, VarId),
    /// `[m, c, h, w] + [c]`, bias broadcast over channel planes.
    BiasAddChan(VarId, VarId),
    MulElem(VarId, VarId),
    Scale(VarId, f64),
    MatMul(VarId, VarId),
    Relu(VarId),
    Conv2d {
        input: VarId,
        weight: VarId,
        bias: VarId,
        pad: usize,
    },
    /// 2x2 max pooling with stride 2. `argmax` holds, per output element,
    /// the flat index of the winning input element.
    MaxPool2 { input: VarId, argmax: Vec<u32> },
    Reshape(VarId),
    SumAll(VarId),
    /// Mean cross-entropy of row-wise softmax against integer labels.
    /// Softmax probabilities are cached for the backward pass.
    SoftmaxCrossEntropy {
        logits: VarId,
        labels: Vec<usize>,
        probs: Tensor,
    },
    /// Mean binary cross-entropy of sigmoid logits against 0/1 targets.
    SigmoidBce { logits: VarId, targets: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients produced by one backward pass, indexed by `VarId`.
pub struct GradStore {
    grads: Vec<Option<Tensor>>,
}

impl GradStore {
    pub fn get(&self, id: VarId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: VarId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }

    fn accumulate(&mut self, id: VarId, g: Tensor) {
        match &mut self.grads[id.0] {
            Some(existing) => {
                for (dst, src) in existing.data.iter_mut().zip(g.data.iter()) {
                    *dst += src;
                }
            }
            slot => *slot = Some(g),
        }
    }
}

/// Tape of one forward pass.
pub struct Graph {
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Graph {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: VarId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> VarId {
        self.nodes.push(Node { value, op });
        VarId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> VarId {
        self.push(value, Op::Leaf)
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn bias_add_row(&mut self, x: VarId, bias: VarId) -> Result<VarId> {
        let xv = self.value(x);
        let bv = self.value(bias);
        if xv.ndim() != 2 || bv.ndim() != 1 || xv.cols() != bv.shape[0] {
            return Err(Error::contract(format!(
                "bias_add_row expects [m, n] + [n], got {:?} + {:?}",
                xv.shape, bv.shape
            )));
        }
        let (m, n) = (xv.rows(), xv.cols());
        let mut out = xv.clone();
        for i in 0..m {
            for j in 0..n {
                out.data[i * n + j] += bv.data[j];
            }
        }
        Ok(self.push(out, Op::BiasAddRow(x, bias)))
    }

    pub fn bias_add_chan(&mut self, x: VarId, bias: VarId) -> Result<VarId> {
        let xv = self.value(x);
        let bv = self.value(bias);
        if xv.ndim() != 4 || bv.ndim() != 1 || xv.shape[1] != bv.shape[0] {
            return Err(Error::contract(format!(
                "bias_add_chan expects [m, c, h, w] + [c], got {:?} + {:?}",
                xv.shape, bv.shape
            )));
        }
        let (m, c) = (xv.shape[0], xv.shape[1]);
        let plane = xv.shape[2] * xv.shape[3];
        let mut out = xv.clone();
        for s in 0..m {
            for ch in 0..c {
                let base = (s * c + ch) * plane;
                let b = bv.data[ch];
                for v in &mut out.data[base..base + plane] {
                    *v += b;
                }
            }
        }
        Ok(self.push(out, Op::BiasAddChan(x, bias)))
    }

    pub fn mul_elem(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let out = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(out, Op::MulElem(a, b)))
    }

    pub fn scale(&mut self, x: VarId, s: f64) -> VarId {
        let out = self.value(x).scale(s);
        self.push(out, Op::Scale(x, s))
    }

    pub fn matmul_node(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let out = matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn relu(&mut self, x: VarId) -> VarId {
        let mut out = self.value(x).clone();
        for v in &mut out.data {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        self.push(out, Op::Relu(x))
    }

    pub fn reshape_node(&mut self, x: VarId, shape: &[usize]) -> Result<VarId> {
        let out = self.value(x).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    pub fn sum_all(&mut self, x: VarId) -> VarId {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::SumAll(x))
    }

    /// 2D convolution, stride 1, symmetric zero padding.
    /// Input `[m, c, h, w]`, weight `[oc, c, k, k]`, bias `[oc]`.
    pub fn conv2d(&mut self, input: VarId, weight: VarId, bias: VarId, pad: usize) -> Result<VarId> {
        let xv = self.value(input);
        let wv = self.value(weight);
        let bv = self.value(bias);
        if xv.ndim() != 4 || wv.ndim() != 4 {
            return Err(Error::contract(format!(
                "conv2d expects 4-D input and weight, got {:?} and {:?}",
                xv.shape, wv.shape
            )));
        }
        let (m, c, h, w) = (xv.shape[0], xv.shape[1], xv.shape[2], xv.shape[3]);
        let (oc, wc, kh, kw) = (wv.shape[0], wv.shape[1], wv.shape[2], wv.shape[3]);
        if wc != c || kh != kw {
            return Err(Error::contract(format!(
                "conv2d weight {:?} incompatible with input {:?}",
                wv.shape, xv.shape
            )));
        }
        if bv.ndim() != 1 || bv.shape[0] != oc {
            return Err(Error::contract(format!(
                "conv2d bias {:?} incompatible with {} output channels",
                bv.shape, oc
            )));
        }
        let k = kh;
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::contract(format!(
                "conv2d kernel {} too large for padded input {}x{}",
                k,
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        let oh = h + 2 * pad - k + 1;
        let ow = w + 2 * pad - k + 1;

        let w2d = wv.reshape(&[oc, c * k * k])?;
        let mut out = Tensor::zeros(&[m, oc, oh, ow]);
        let mut cols = Tensor::zeros(&[c * k * k, oh * ow]);
        for s in 0..m {
            im2col(xv, s, k, pad, &mut cols);
            let res = matmul(&w2d, &cols)?;
            let base = s * oc * oh * ow;
            for o in 0..oc {
                let b = bv.data[o];
                let src = &res.data[o * oh * ow..(o + 1) * oh * ow];
                let dst = &mut out.data[base + o * oh * ow..base + (o + 1) * oh * ow];
                for (d, v) in dst.iter_mut().zip(src.iter()) {
                    *d = v + b;
                }
            }
        }
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                pad,
            },
        ))
    }

    /// 2x2 max pooling with stride 2. Spatial dims must be even.
    pub fn maxpool2(&mut self, input: VarId) -> Result<VarId> {
        let xv = self.value(input);
        if xv.ndim() != 4 {
            return Err(Error::contract(format!(
                "maxpool2 expects a 4-D input, got {:?}",
                xv.shape
            )));
        }
        let (m, c, h, w) = (xv.shape[0], xv.shape[1], xv.shape[2], xv.shape[3]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::contract(format!(
                "maxpool2 requires even spatial dims, got {}x{}",
                h, w
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Tensor::zeros(&[m, c, oh, ow]);
        let mut argmax = vec![0u32; m * c * oh * ow];
        for s in 0..m {
            for ch in 0..c {
                let in_base = (s * c + ch) * h * w;
                let out_base = (s * c + ch) * oh * ow;
                for i in 0..oh {
                    for j in 0..ow {
                        let mut best_idx = in_base + (2 * i) * w + 2 * j;
                        let mut best = xv.data[best_idx];
                        for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                            let idx = in_base + (2 * i + di) * w + 2 * j + dj;
                            if xv.data[idx] > best {
                                best = xv.data[idx];
                                best_idx = idx;
                            }
                        }
                        out.data[out_base + i * ow + j] = best;
                        argmax[out_base + i * ow + j] = best_idx as u32;
                    }
                }
            }
        }
        Ok(self.push(out, Op::MaxPool2 { input, argmax }))
    }

    /// Mean softmax cross-entropy over the batch. Logits `[m, n]`, one
    /// integer label per row.
    pub fn softmax_cross_entropy(&mut self, logits: VarId, labels: &[usize]) -> Result<VarId> {
        let lv = self.value(logits);
        if lv.ndim() != 2 || lv.rows() != labels.len() {
            return Err(Error::contract(format!(
                "softmax_cross_entropy expects [m, n] logits with m labels, got {:?} and {}",
                lv.shape,
                labels.len()
            )));
        }
        let (m, n) = (lv.rows(), lv.cols());
        for &l in labels {
            if l >= n {
                return Err(Error::contract(format!(
                    "label {} out of range for {} classes",
                    l, n
                )));
            }
        }
        let mut probs = Tensor::zeros(&[m, n]);
        let mut loss = 0.0;
        for i in 0..m {
            let row = &lv.data[i * n..(i + 1) * n];
            let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let mut denom = 0.0;
            for (j, &v) in row.iter().enumerate() {
                let e = (v - max).exp();
                probs.data[i * n + j] = e;
                denom += e;
            }
            for j in 0..n {
                probs.data[i * n + j] /= denom;
            }
            loss -= (probs.data[i * n + labels[i]]).max(f64::MIN_POSITIVE).ln();
        }
        loss /= m as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Mean binary cross-entropy of sigmoid logits. Logits `[m, 1]` or `[m]`.
    pub fn sigmoid_bce(&mut self, logits: VarId, targets: &[f64]) -> Result<VarId> {
        let lv = self.value(logits);
        if lv.len() != targets.len() {
            return Err(Error::contract(format!(
                "sigmoid_bce expects one target per logit, got {} logits and {} targets",
                lv.len(),
                targets.len()
            )));
        }
        if targets.is_empty() {
            return Err(Error::contract("sigmoid_bce expects at least one logit".to_string()));
        }
        let m = targets.len() as f64;
        // Stable form: max(z, 0) - z*t + ln(1 + exp(-|z|)).
        let mut loss = 0.0;
        for (&z, &t) in lv.data.iter().zip(targets.iter()) {
            loss += z.max(0.0) - z * t + (-z.abs()).exp().ln_1p();
        }
        loss /= m;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SigmoidBce {
                logits,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Backward pass from a scalar output, seeded with 1.
    pub fn backward(&self, output: VarId) -> Result<GradStore> {
        if self.value(output).len() != 1 {
            return Err(Error::contract(format!(
                "backward expects a scalar output, got shape {:?}",
                self.value(output).shape
            )));
        }
        let mut seed = self.value(output).clone();
        seed.data[0] = 1.0;
        self.backward_seeded(output, &seed)
    }

    /// Backward pass seeded with an explicit cotangent at `var`. Gradients
    /// flow only to ancestors of `var`; every other slot stays empty.
    pub fn backward_seeded(&self, var: VarId, seed: &Tensor) -> Result<GradStore> {
        self.backward_from(var, seed, None)
    }

    /// Like `backward_seeded`, but computes only the gradients needed to
    /// reach `target`, skipping every branch `target` does not feed. The
    /// gradient arriving at `target` is bitwise identical to the full
    /// sweep's.
    pub fn backward_seeded_toward(
        &self,
        var: VarId,
        seed: &Tensor,
        target: VarId,
    ) -> Result<GradStore> {
        let deps = self.depends_on(target);
        self.backward_from(var, seed, Some(&deps))
    }

    /// `deps[n]` is true when node `n` is `target` or reads it, directly
    /// or transitively.
    fn depends_on(&self, target: VarId) -> Vec<bool> {
        let mut deps = vec![false; self.nodes.len()];
        deps[target.0] = true;
        let mut operands = Vec::with_capacity(3);
        for id in target.0 + 1..self.nodes.len() {
            operands.clear();
            self.push_operands(id, &mut operands);
            deps[id] = operands.iter().any(|&o| deps[o]);
        }
        deps
    }

    fn push_operands(&self, id: usize, out: &mut Vec<usize>) {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::MulElem(a, b) | Op::MatMul(a, b) => {
                out.push(a.0);
                out.push(b.0);
            }
            Op::BiasAddRow(x, bias) | Op::BiasAddChan(x, bias) => {
                out.push(x.0);
                out.push(bias.0);
            }
            Op::Scale(x, _) | Op::Relu(x) | Op::Reshape(x) | Op::SumAll(x) => out.push(x.0),
            Op::Conv2d {
                input,
                weight,
                bias,
                ..
            } => {
                out.push(input.0);
                out.push(weight.0);
                out.push(bias.0);
            }
            Op::MaxPool2 { input, .. } => out.push(input.0),
            Op::SoftmaxCrossEntropy { logits, .. } | Op::SigmoidBce { logits, .. } => {
                out.push(logits.0)
            }
        }
    }

    fn backward_from(&self, var: VarId, seed: &Tensor, deps: Option<&[bool]>) -> Result<GradStore> {
        if seed.shape != self.value(var).shape {
            return Err(Error::contract(format!(
                "backward seed shape {:?} does not match value shape {:?}",
                seed.shape,
                self.value(var).shape
            )));
        }
        let mut store = GradStore {
            grads: (0..self.nodes.len()).map(|_| None).collect(),
        };
        store.grads[var.0] = Some(seed.clone());

        for id in (0..=var.0).rev() {
            if let Some(deps) = deps {
                if !deps[id] {
                    store.grads[id] = None;
                    continue;
                }
            }
            let grad = match store.grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.backprop_node(id, &grad, &mut store, deps)?;
            store.grads[id] = Some(grad);
        }
        Ok(store)
    }

    fn backprop_node(
        &self,
        id: usize,
        grad: &Tensor,
        store: &mut GradStore,
        deps: Option<&[bool]>,
    ) -> Result<()> {
        let want = |v: VarId| deps.map_or(true, |d| d[v.0]);
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if want(*a) {
                    store.accumulate(*a, grad.clone());
                }
                if want(*b) {
                    store.accumulate(*b, grad.clone());
                }
            }
            Op::BiasAddRow(x, bias) => {
                if want(*x) {
                    store.accumulate(*x, grad.clone());
                }
                if want(*bias) {
                    let n = grad.cols();
                    let mut db = Tensor::zeros(&[n]);
                    for i in 0..grad.rows() {
                        for j in 0..n {
                            db.data[j] += grad.data[i * n + j];
                        }
                    }
                    store.accumulate(*bias, db);
                }
            }
            Op::BiasAddChan(x, bias) => {
                if want(*x) {
                    store.accumulate(*x, grad.clone());
                }
                if want(*bias) {
                    let (m, c) = (grad.shape[0], grad.shape[1]);
                    let plane = grad.shape[2] * grad.shape[3];
                    let mut db = Tensor::zeros(&[c]);
                    for s in 0..m {
                        for ch in 0..c {
                            let base = (s * c + ch) * plane;
                            db.data[ch] += grad.data[base..base + plane].iter().sum::<f64>();
                        }
                    }
                    store.accumulate(*bias, db);
                }
            }
            Op::MulElem(a, b) => {
                if want(*a) {
                    store.accumulate(*a, grad.hadamard(self.value(*b))?);
                }
                if want(*b) {
                    store.accumulate(*b, grad.hadamard(self.value(*a))?);
                }
            }
            Op::Scale(x, s) => {
                if want(*x) {
                    store.accumulate(*x, grad.scale(*s));
                }
            }
            Op::MatMul(a, b) => {
                if want(*a) {
                    store.accumulate(*a, matmul_nt(grad, self.value(*b))?);
                }
                if want(*b) {
                    store.accumulate(*b, matmul_tn(self.value(*a), grad)?);
                }
            }
            Op::Relu(x) => {
                if want(*x) {
                    let xv = self.value(*x);
                    let mut dx = grad.clone();
                    for (d, &v) in dx.data.iter_mut().zip(xv.data.iter()) {
                        if v <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    store.accumulate(*x, dx);
                }
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                pad,
            } => {
                let flags = (want(*input), want(*weight), want(*bias));
                self.conv2d_backward(*input, *weight, *bias, *pad, grad, store, flags)?;
            }
            Op::MaxPool2 { input, argmax } => {
                if want(*input) {
                    let mut dx = Tensor::zeros(&self.value(*input).shape);
                    for (out_idx, &in_idx) in argmax.iter().enumerate() {
                        dx.data[in_idx as usize] += grad.data[out_idx];
                    }
                    store.accumulate(*input, dx);
                }
            }
            Op::Reshape(x) => {
                if want(*x) {
                    store.accumulate(*x, grad.reshape(&self.value(*x).shape)?);
                }
            }
            Op::SumAll(x) => {
                if want(*x) {
                    let g = grad.data[0];
                    let xv = self.value(*x);
                    store.accumulate(
                        *x,
                        Tensor {
                            shape: xv.shape.clone(),
                            data: vec![g; xv.len()],
                        },
                    );
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                if want(*logits) {
                    let g = grad.data[0];
                    let (m, n) = (probs.rows(), probs.cols());
                    let mut dl = probs.scale(g / m as f64);
                    for (i, &label) in labels.iter().enumerate() {
                        dl.data[i * n + label] -= g / m as f64;
                    }
                    store.accumulate(*logits, dl);
                }
            }
            Op::SigmoidBce { logits, targets } => {
                if want(*logits) {
                    let g = grad.data[0];
                    let lv = self.value(*logits);
                    let m = targets.len() as f64;
                    let mut dl = lv.clone();
                    for (d, &t) in dl.data.iter_mut().zip(targets.iter()) {
                        let sig = 1.0 / (1.0 + (-*d).exp());
                        *d = g * (sig - t) / m;
                    }
                    store.accumulate(*logits, dl);
                }
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn conv2d_backward(
        &self,
        input: VarId,
        weight: VarId,
        bias: VarId,
        pad: usize,
        grad: &Tensor,
        store: &mut GradStore,
        (want_dx, want_dw, want_db): (bool, bool, bool),
    ) -> Result<()> {
        let xv = self.value(input);
        let wv = self.value(weight);
        let (m, c, h, w) = (xv.shape[0], xv.shape[1], xv.shape[2], xv.shape[3]);
        let oc = wv.shape[0];
        let k = wv.shape[2];
        let (oh, ow) = (grad.shape[2], grad.shape[3]);

        let w2d = wv.reshape(&[oc, c * k * k])?;
        let mut dw2d = Tensor::zeros(&[oc, c * k * k]);
        let mut db = Tensor::zeros(&[oc]);
        let mut dx = Tensor::zeros(&[m, c, h, w]);
        let mut cols = Tensor::zeros(&[c * k * k, oh * ow]);

        for s in 0..m {
            let g_s = Tensor {
                shape: vec![oc, oh * ow],
                data: grad.data[s * oc * oh * ow..(s + 1) * oc * oh * ow].to_vec(),
            };
            if want_db {
                for o in 0..oc {
                    db.data[o] += g_s.data[o * oh * ow..(o + 1) * oh * ow].iter().sum::<f64>();
                }
            }
            if want_dw {
                im2col(xv, s, k, pad, &mut cols);
                let dw_s = matmul_nt(&g_s, &cols)?;
                for (d, v) in dw2d.data.iter_mut().zip(dw_s.data.iter()) {
                    *d += v;
                }
            }
            if want_dx {
                let dcols = matmul_tn(&w2d, &g_s)?;
                col2im_accumulate(&dcols, s, c, h, w, k, pad, &mut dx);
            }
        }

        if want_dx {
            store.accumulate(input, dx);
        }
        if want_dw {
            store.accumulate(weight, dw2d.reshape(&wv.shape)?);
        }
        if want_db {
            store.accumulate(bias, db);
        }
        Ok(())
    }
}

/// Unfold sample `s` of `x` into `cols[(c*k + ki)*k + kj, oi*ow + oj]`.
/// Out-of-bounds (padding) positions contribute zeros.
fn im2col(x: &Tensor, s: usize, k: usize, pad: usize, cols: &mut Tensor) {
    let (c, h, w) = (x.shape[1], x.shape[2], x.shape[3]);
    let oh = h + 2 * pad - k + 1;
    let ow = w + 2 * pad - k + 1;
    let x_base = s * c * h * w;
    for ch in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = ((ch * k + ki) * k + kj) * oh * ow;
                for oi in 0..oh {
                    let ii = (oi + ki) as isize - pad as isize;
                    let dst = &mut cols.data[row + oi * ow..row + (oi + 1) * ow];
                    if ii < 0 || ii >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src_row = x_base + (ch * h + ii as usize) * w;
                    for (oj, d) in dst.iter_mut().enumerate() {
                        let jj = (oj + kj) as isize - pad as isize;
                        *d = if jj < 0 || jj >= w as isize {
                            0.0
                        } else {
                            x.data[src_row + jj as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Fold `cols` (same layout as `im2col`) back into sample `s` of `dx`,
/// accumulating overlapping contributions.
#[allow(clippy::too_many_arguments)]
fn col2im_accumulate(
    cols: &Tensor,
    s: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
    dx: &mut Tensor,
) {
    let oh = h + 2 * pad - k + 1;
    let ow = w + 2 * pad - k + 1;
    let x_base = s * c * h * w;
    for ch in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = ((ch * k + ki) * k + kj) * oh * ow;
                for oi in 0..oh {
                    let ii = (oi + ki) as isize - pad as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    let dst_row = x_base + (ch * h + ii as usize) * w;
                    let src = &cols.data[row + oi * ow..row + (oi + 1) * ow];
                    for (oj, &v) in src.iter().enumerate() {
                        let jj = (oj + kj) as isize - pad as isize;
                        if jj >= 0 && jj < w as isize {
                            dx.data[dst_row + jj as usize] += v;
                        }
                    }
                }
            }
        }
    }
}
