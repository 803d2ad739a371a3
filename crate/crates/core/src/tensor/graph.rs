//! Computation tape. Every op appends a node holding its output value and the
//! data its adjoint needs; [`Graph::backward`] walks the tape in reverse.

use super::conv::{self, ConvDims, ConvMode};
use super::{shape_err, Tensor, TensorError};
use crate::scalar::{gemm, Scalar};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Batch-normalization statistics source.
#[derive(Debug, Clone, Copy)]
pub enum BnMode<'a, T> {
    /// Normalize with the statistics of the current batch.
    Train,
    /// Normalize with running statistics.
    Eval { mean: &'a [T], var: &'a [T] },
}

/// Result of a batch-norm op: the normalized node plus the batch statistics
/// (biased variance) so the caller can update its running averages.
#[derive(Debug, Clone)]
pub struct BnOutput<T> {
    pub out: Var,
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
}

pub const BN_EPS: f64 = 1e-5;
pub const CE_CLAMP: f64 = 1e-12;

enum Op<T> {
    Leaf,
    MatMul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
        trans_b: bool,
    },
    AddRowBias {
        x: usize,
        bias: usize,
        cols: usize,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Softmax {
        x: usize,
        cols: usize,
    },
    Concat {
        inputs: Vec<usize>,
        lens: Vec<usize>,
        outer: usize,
        inner: usize,
    },
    Narrow {
        x: usize,
        outer: usize,
        inner: usize,
        len_in: usize,
        start: usize,
        len: usize,
    },
    Reshape(usize),
    Conv {
        x: usize,
        kernel: usize,
        bias: Option<usize>,
        dims: ConvDims,
    },
    Depthwise {
        x: usize,
        kernel: usize,
        bias: Option<usize>,
        dims: [usize; 4],
    },
    MaxPool {
        x: usize,
        argmax: Vec<usize>,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        dims: [usize; 3],
        train: bool,
    },
    GlobalAvgPool {
        x: usize,
        hw: usize,
    },
    LstmCell {
        gates: usize,
        c_prev: usize,
        units: usize,
        /// σ(i), σ(f), tanh(g) per row, `[B, 3U]`.
        acts: Vec<T>,
    },
    LstmHidden {
        gates: usize,
        cell: usize,
        units: usize,
        /// σ(o), tanh(c) per row, `[B, 2U]`.
        acts: Vec<T>,
    },
    Mse {
        pred: usize,
        target: Vec<T>,
    },
    CrossEntropy {
        probs: usize,
        target: Vec<T>,
        rows: usize,
    },
    MaskedCe {
        logits: usize,
        probs: Vec<T>,
        targets: Vec<usize>,
        mask: Vec<bool>,
        classes: usize,
        count: usize,
    },
    Sum(usize),
    Mean(usize),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Reverse-mode autodiff tape over [`Tensor`] values.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += *s);
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: usize) -> bool {
        self.nodes[v].needs_grad
    }

    /// Trainable leaf; receives a gradient in [`Graph::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf; no gradient is propagated into it.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last `backward` target w.r.t. `v`. Nodes that did not
    /// influence the target get an exact zero tensor.
    pub fn grad(&self, v: Var) -> Tensor<T> {
        let shape = self.nodes[v.0].value.shape().to_vec();
        match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => Tensor::new(shape, g.clone()).expect("grad shape"),
            None => Tensor::zeros(&shape),
        }
    }

    fn make(&self, shape: Vec<usize>, data: Vec<T>) -> Tensor<T> {
        Tensor::new(shape, data).expect("op produced inconsistent shape")
    }

    pub fn matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 {
            return Err(shape_err(format!("matmul needs 2-D operands, got {sa:?} x {sb:?}")));
        }
        let (m, k) = (sa[0], sa[1]);
        let (kb, n) = if trans_b { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if k != kb {
            return Err(shape_err(format!("matmul inner dims {sa:?} x {sb:?} (trans_b={trans_b})")));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), trans_b, &mut out, false);
        let ng = self.ng(a.0) || self.ng(b.0);
        let value = self.make(vec![m, n], out);
        Ok(self.push(value, Op::MatMul { a: a.0, b: b.0, m, k, n, trans_b }, ng))
    }

    /// Adds `bias [C]` to every row of `x [.., C]`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let cols = *self.shape(x).last().unwrap();
        if self.value(bias).len() != cols {
            return Err(shape_err(format!(
                "bias of {} for rows of {}",
                self.value(bias).len(),
                cols
            )));
        }
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(cols) {
            add_into(row, &b);
        }
        let shape = self.shape(x).to_vec();
        let ng = self.ng(x.0) || self.ng(bias.0);
        let value = self.make(shape, out);
        Ok(self.push(value, Op::AddRowBias { x: x.0, bias: bias.0, cols }, ng))
    }

    /// Fully connected layer: `x [B,D] * weights[O,D]^T + bias[O]`.
    pub fn linear(&mut self, x: Var, weights: Var, bias: Var) -> Result<Var, TensorError> {
        let y = self.matmul(x, weights, true)?;
        self.add_row_bias(y, bias)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!(
                "elementwise op on {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let out: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let ng = self.ng(a.0) || self.ng(b.0);
        let value = self.make(self.shape(a).to_vec(), out);
        Ok(self.push(value, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).data().iter().map(|v| *v * s).collect();
        let value = self.make(self.shape(a).to_vec(), out);
        let ng = self.ng(a.0);
        self.push(value, Op::Scale(a.0, s), ng)
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let out = self.value(a).data().iter().map(|v| f(*v)).collect();
        let value = self.make(self.shape(a).to_vec(), out);
        let ng = self.ng(a.0);
        self.push(value, op, ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |v| v.tanh(), Op::Tanh(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(a.0))
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, x: Var) -> Var {
        let cols = *self.shape(x).last().unwrap();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(cols) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            row.iter_mut().for_each(|v| *v /= total);
        }
        let value = self.make(self.shape(x).to_vec(), out);
        let ng = self.ng(x.0);
        self.push(value, Op::Softmax { x: x.0, cols }, ng)
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(shape_err("concat axis out of range"));
        }
        let mut lens = Vec::with_capacity(parts.len());
        for p in parts {
            let s = self.shape(*p);
            if s.len() != first.len()
                || s.iter().enumerate().any(|(i, d)| i != axis && *d != first[i])
            {
                return Err(shape_err(format!("concat of {first:?} and {s:?} on axis {axis}")));
            }
            lens.push(s[axis]);
        }
        let mut shape = first.clone();
        shape[axis] = lens.iter().sum();
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        Ok(self.concat_raw(parts, lens, outer, inner, shape))
    }

    /// Stacks equally shaped tensors along a new axis.
    pub fn stack(&mut self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = self.shape(parts[0]).to_vec();
        if parts.iter().any(|p| self.shape(*p) != first.as_slice()) {
            return Err(shape_err("stack of differently shaped tensors"));
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis..].iter().product();
        let mut shape = first.clone();
        shape.insert(axis, parts.len());
        Ok(self.concat_raw(parts, vec![1; parts.len()], outer, inner, shape))
    }

    fn concat_raw(&mut self, parts: &[Var], lens: Vec<usize>, outer: usize, inner: usize, shape: Vec<usize>) -> Var {
        let total: usize = lens.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, len) in parts.iter().zip(&lens) {
                let chunk = len * inner;
                out.extend_from_slice(&self.value(*p).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let ng = parts.iter().any(|p| self.ng(p.0));
        let value = self.make(shape, out);
        self.push(
            value,
            Op::Concat {
                inputs: parts.iter().map(|p| p.0).collect(),
                lens,
                outer,
                inner,
            },
            ng,
        )
    }

    /// Slice `[start, start+len)` of `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var, TensorError> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start + len > s[axis] || len == 0 {
            return Err(shape_err(format!("narrow {start}+{len} on axis {axis} of {s:?}")));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let len_in = s[axis];
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * len_in + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let ng = self.ng(x.0);
        let value = self.make(shape, out);
        Ok(self.push(value, Op::Narrow { x: x.0, outer, inner, len_in, start, len }, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.value(x).clone().reshape(shape)?;
        let ng = self.ng(x.0);
        Ok(self.push(value, Op::Reshape(x.0), ng))
    }

    /// Same-padded stride-1 convolution. Kernel layout `[C_out, C_in, k, k]`
    /// for standard mode, `[C, 1, 3, 3]` for depthwise.
    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Option<Var>, mode: ConvMode) -> Result<Var, TensorError> {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(kernel).to_vec();
        if xs.len() != 4 || ks.len() != 4 {
            return Err(shape_err(format!("conv2d expects 4-D input/kernel, got {xs:?}, {ks:?}")));
        }
        let (n, c_in, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        match mode {
            ConvMode::Standard => {
                let k = ks[2];
                if ks[1] != c_in || ks[3] != k || !(k == 1 || k == 3) {
                    return Err(shape_err(format!("kernel {ks:?} for input {xs:?}")));
                }
                let c_out = ks[0];
                if let Some(b) = bias {
                    if self.value(b).len() != c_out {
                        return Err(shape_err("conv bias length"));
                    }
                }
                let dims = ConvDims { n, c_in, c_out, h, w, k };
                let out = conv::conv_forward(
                    self.value(x).data(),
                    self.value(kernel).data(),
                    bias.map(|b| self.value(b).data()),
                    &dims,
                );
                let ng = self.ng(x.0) || self.ng(kernel.0) || bias.is_some_and(|b| self.ng(b.0));
                let value = self.make(vec![n, c_out, h, w], out);
                Ok(self.push(
                    value,
                    Op::Conv {
                        x: x.0,
                        kernel: kernel.0,
                        bias: bias.map(|b| b.0),
                        dims,
                    },
                    ng,
                ))
            }
            ConvMode::Depthwise => {
                if ks != [c_in, 1, 3, 3] {
                    return Err(shape_err(format!("depthwise kernel {ks:?} for input {xs:?}")));
                }
                if let Some(b) = bias {
                    if self.value(b).len() != c_in {
                        return Err(shape_err("depthwise bias length"));
                    }
                }
                let out = conv::depthwise_forward(
                    self.value(x).data(),
                    self.value(kernel).data(),
                    bias.map(|b| self.value(b).data()),
                    n,
                    c_in,
                    h,
                    w,
                );
                let ng = self.ng(x.0) || self.ng(kernel.0) || bias.is_some_and(|b| self.ng(b.0));
                let value = self.make(vec![n, c_in, h, w], out);
                Ok(self.push(
                    value,
                    Op::Depthwise {
                        x: x.0,
                        kernel: kernel.0,
                        bias: bias.map(|b| b.0),
                        dims: [n, c_in, h, w],
                    },
                    ng,
                ))
            }
            ConvMode::DepthwiseSeparable => Err(shape_err(
                "depthwise-separable convolution needs two kernels; use conv2d_separable",
            )),
        }
    }

    /// Depthwise 3x3 (no bias) followed by a pointwise 1x1 convolution.
    pub fn conv2d_separable(
        &mut self,
        x: Var,
        depthwise: Var,
        pointwise: Var,
        bias: Option<Var>,
    ) -> Result<Var, TensorError> {
        let d = self.conv2d(x, depthwise, None, ConvMode::Depthwise)?;
        self.conv2d(d, pointwise, bias, ConvMode::Standard)
    }

    /// 3x3 max pooling, padding 1, stride 1 or 2.
    pub fn maxpool3(&mut self, x: Var, stride: usize) -> Result<Var, TensorError> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || s[2] < 1 || s[3] < 1 {
            return Err(shape_err(format!("maxpool3 on {s:?}")));
        }
        if !(stride == 1 || stride == 2) {
            return Err(shape_err(format!("maxpool3 stride {stride}")));
        }
        let (out, argmax) = conv::maxpool_forward(self.value(x).data(), s[0], s[1], s[2], s[3], stride);
        let shape = vec![
            s[0],
            s[1],
            conv::pool_out_dim(s[2], stride),
            conv::pool_out_dim(s[3], stride),
        ];
        let ng = self.ng(x.0);
        let value = self.make(shape, out);
        Ok(self.push(value, Op::MaxPool { x: x.0, argmax }, ng))
    }

    /// Per-channel batch normalization with affine `gamma`/`beta` over
    /// `[N, C]` or `[N, C, H, W]` input.
    pub fn batchnorm(&mut self, x: Var, gamma: Var, beta: Var, mode: BnMode<'_, T>) -> Result<BnOutput<T>, TensorError> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 && s.len() != 4 {
            return Err(shape_err(format!("batchnorm on {s:?}")));
        }
        let (n, c) = (s[0], s[1]);
        let hw: usize = s[2..].iter().product();
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(shape_err(format!("batchnorm params for {c} channels")));
        }
        let eps = T::from_f64_lossy(BN_EPS);
        let xd = self.value(x).data();
        let (mean, var, train) = match mode {
            BnMode::Train => {
                let m = n * hw;
                if m == 0 {
                    return Err(TensorError::InvalidBatch("empty batch".into()));
                }
                let mf = T::from_usize(m).unwrap();
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for s_ in 0..n {
                    for ch in 0..c {
                        let p = &xd[(s_ * c + ch) * hw..(s_ * c + ch + 1) * hw];
                        mean[ch] += p.iter().copied().sum::<T>();
                    }
                }
                mean.iter_mut().for_each(|v| *v /= mf);
                for s_ in 0..n {
                    for ch in 0..c {
                        let p = &xd[(s_ * c + ch) * hw..(s_ * c + ch + 1) * hw];
                        var[ch] += p.iter().map(|v| (*v - mean[ch]) * (*v - mean[ch])).sum::<T>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= mf);
                (mean, var, true)
            }
            BnMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(shape_err("running statistics length"));
                }
                (mean.to_vec(), var.to_vec(), false)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for s_ in 0..n {
            for ch in 0..c {
                let base = (s_ * c + ch) * hw;
                for i in base..base + hw {
                    let xh = (xd[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = xh;
                    out[i] = g[ch] * xh + b[ch];
                }
            }
        }
        let ng = self.ng(x.0) || self.ng(gamma.0) || self.ng(beta.0);
        let value = self.make(s, out);
        let out = self.push(
            value,
            Op::BatchNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                inv_std,
                dims: [n, c, hw],
                train,
            },
            ng,
        );
        Ok(BnOutput {
            out,
            batch_mean: mean,
            batch_var: var,
        })
    }

    /// `[N, C, H, W] -> [N, C]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var, TensorError> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(shape_err(format!("global_avg_pool on {s:?}")));
        }
        let hw = s[2] * s[3];
        let inv = T::one() / T::from_usize(hw).unwrap();
        let out = self
            .value(x)
            .data()
            .chunks(hw)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let ng = self.ng(x.0);
        let value = self.make(vec![s[0], s[1]], out);
        Ok(self.push(value, Op::GlobalAvgPool { x: x.0, hw }, ng))
    }

    /// LSTM cell-state update from pre-activation gates `[B, 4U]` laid out
    /// as (input, forget, candidate, output): `c' = σ(f)·c + σ(i)·tanh(g)`.
    pub fn lstm_cell(&mut self, gates: Var, c_prev: Var) -> Result<Var, TensorError> {
        let gs = self.shape(gates).to_vec();
        let cs = self.shape(c_prev).to_vec();
        if gs.len() != 2 || cs.len() != 2 || gs[0] != cs[0] || gs[1] != 4 * cs[1] {
            return Err(shape_err(format!("lstm_cell gates {gs:?} state {cs:?}")));
        }
        let u = cs[1];
        let gd = self.value(gates).data();
        let cd = self.value(c_prev).data();
        let mut out = vec![T::zero(); cd.len()];
        let mut acts = vec![T::zero(); 3 * cd.len()];
        for b in 0..cs[0] {
            let g = &gd[b * 4 * u..(b + 1) * 4 * u];
            let a = &mut acts[b * 3 * u..(b + 1) * 3 * u];
            for j in 0..u {
                let (si, sf, tg) = (sigmoid(g[j]), sigmoid(g[u + j]), g[2 * u + j].tanh());
                a[j] = si;
                a[u + j] = sf;
                a[2 * u + j] = tg;
                out[b * u + j] = sf * cd[b * u + j] + si * tg;
            }
        }
        let ng = self.ng(gates.0) || self.ng(c_prev.0);
        let value = self.make(cs, out);
        let op = Op::LstmCell {
            gates: gates.0,
            c_prev: c_prev.0,
            units: u,
            acts,
        };
        Ok(self.push(value, op, ng))
    }

    /// LSTM hidden output `h = σ(o)·tanh(c)`.
    pub fn lstm_hidden(&mut self, gates: Var, cell: Var) -> Result<Var, TensorError> {
        let gs = self.shape(gates).to_vec();
        let cs = self.shape(cell).to_vec();
        if gs.len() != 2 || cs.len() != 2 || gs[0] != cs[0] || gs[1] != 4 * cs[1] {
            return Err(shape_err(format!("lstm_hidden gates {gs:?} state {cs:?}")));
        }
        let u = cs[1];
        let gd = self.value(gates).data();
        let cd = self.value(cell).data();
        let mut out = vec![T::zero(); cd.len()];
        let mut acts = vec![T::zero(); 2 * cd.len()];
        for b in 0..cs[0] {
            for j in 0..u {
                let so = sigmoid(gd[b * 4 * u + 3 * u + j]);
                let tc = cd[b * u + j].tanh();
                acts[b * 2 * u + j] = so;
                acts[b * 2 * u + u + j] = tc;
                out[b * u + j] = so * tc;
            }
        }
        let ng = self.ng(gates.0) || self.ng(cell.0);
        let value = self.make(cs, out);
        let op = Op::LstmHidden {
            gates: gates.0,
            cell: cell.0,
            units: u,
            acts,
        };
        Ok(self.push(value, op, ng))
    }

    /// Mean of squared differences against a constant target.
    pub fn mse(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var, TensorError> {
        if self.value(pred).len() != target.len() {
            return Err(shape_err(format!(
                "mse prediction {:?} vs target {:?}",
                self.shape(pred),
                target.shape()
            )));
        }
        let n = T::from_usize(target.len()).unwrap();
        let loss = self
            .value(pred)
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (*p - *t) * (*p - *t))
            .sum::<T>()
            / n;
        let ng = self.ng(pred.0);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Mse {
                pred: pred.0,
                target: target.data().to_vec(),
            },
            ng,
        ))
    }

    /// Mean over rows of `-Σ target·log(clamp(prob, 1e-12, 1))`.
    pub fn cross_entropy(&mut self, probs: Var, target: &Tensor<T>) -> Result<Var, TensorError> {
        if self.shape(probs) != target.shape() {
            return Err(shape_err("cross_entropy prediction/target shapes differ"));
        }
        let cols = *target.shape().last().unwrap();
        let rows = target.len() / cols;
        let lo = T::from_f64_lossy(CE_CLAMP);
        let loss = self
            .value(probs)
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| -*t * p.max(lo).min(T::one()).ln())
            .sum::<T>()
            / T::from_usize(rows).unwrap();
        let ng = self.ng(probs.0);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                probs: probs.0,
                target: target.data().to_vec(),
                rows,
            },
            ng,
        ))
    }

    /// Softmax cross-entropy from logits `[R, K]` against class indices.
    /// Rows with `mask == false` are ignored; `excluded` classes are removed
    /// from the softmax (their logits act as −∞). Averaged over scored rows.
    pub fn masked_softmax_ce(
        &mut self,
        logits: Var,
        targets: &[usize],
        mask: &[bool],
        excluded: &[usize],
    ) -> Result<Var, TensorError> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || targets.len() != s[0] || mask.len() != s[0] {
            return Err(shape_err(format!("masked_softmax_ce logits {s:?}")));
        }
        let (rows, k) = (s[0], s[1]);
        let ld = self.value(logits).data();
        let mut probs = vec![T::zero(); rows * k];
        let mut loss = T::zero();
        let mut count = 0usize;
        for r in 0..rows {
            if !mask[r] {
                continue;
            }
            if targets[r] >= k || excluded.contains(&targets[r]) {
                return Err(shape_err(format!("target class {} not scorable", targets[r])));
            }
            count += 1;
            let row = &ld[r * k..(r + 1) * k];
            let max = (0..k)
                .filter(|c| !excluded.contains(c))
                .map(|c| row[c])
                .fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for c in 0..k {
                if !excluded.contains(&c) {
                    let e = (row[c] - max).exp();
                    probs[r * k + c] = e;
                    total += e;
                }
            }
            for c in 0..k {
                probs[r * k + c] /= total;
            }
            loss -= (row[targets[r]] - max) - total.ln();
        }
        if count > 0 {
            loss /= T::from_usize(count).unwrap();
        }
        let ng = self.ng(logits.0);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::MaskedCe {
                logits: logits.0,
                probs,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                classes: k,
                count,
            },
            ng,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        let ng = self.ng(x.0);
        self.push(Tensor::scalar(s), Op::Sum(x.0), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().copied().sum::<T>() / T::from_usize(v.len()).unwrap();
        let ng = self.ng(x.0);
        self.push(Tensor::scalar(s), Op::Mean(x.0), ng)
    }

    /// Populates gradients of the scalar `target` w.r.t. every node.
    pub fn backward(&mut self, target: Var) -> Result<(), TensorError> {
        if self.value(target).len() != 1 {
            return Err(shape_err("backward target must be a scalar"));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[target.0] = Some(vec![T::one()]);
        for i in (0..=target.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            self.backprop_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, idx: usize, g: Vec<T>) {
        if !self.nodes[idx].needs_grad {
            return;
        }
        match &mut self.grads[idx] {
            Some(existing) => add_into(existing, &g),
            slot @ None => *slot = Some(g),
        }
    }

    fn accumulate_slice(&mut self, idx: usize, g: &[T]) {
        if !self.nodes[idx].needs_grad {
            return;
        }
        match &mut self.grads[idx] {
            Some(existing) => add_into(existing, g),
            slot @ None => *slot = Some(g.to_vec()),
        }
    }

    /// Takes the gradient buffer of `idx` for in-place accumulation; the flag
    /// says whether it already holds a partial sum.
    fn take_grad(&mut self, idx: usize) -> (Vec<T>, bool) {
        match self.grads[idx].take() {
            Some(v) => (v, true),
            None => (vec![T::zero(); self.nodes[idx].value.len()], false),
        }
    }

    fn accumulate_with(&mut self, idx: usize, f: impl FnOnce(&mut Vec<T>)) {
        if !self.nodes[idx].needs_grad {
            return;
        }
        let len = self.nodes[idx].value.len();
        let slot = self.grads[idx].get_or_insert_with(|| vec![T::zero(); len]);
        f(slot);
    }

    fn backprop_node(&mut self, i: usize, g: &[T]) {
        // Temporarily take the op so input values can be borrowed freely.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMul { a, b, m, k, n, trans_b } => {
                let (a, b, m, k, n, tb) = (*a, *b, *m, *k, *n, *trans_b);
                // products accumulate straight into the gradient buffers
                if self.ng(a) {
                    let (mut da, acc) = self.take_grad(a);
                    // dA = G * op(B)^T
                    gemm(m, n, k, g, false, self.nodes[b].value.data(), !tb, &mut da, acc);
                    self.grads[a] = Some(da);
                }
                if self.ng(b) {
                    let (mut db, acc) = self.take_grad(b);
                    if tb {
                        gemm(n, m, k, g, true, self.nodes[a].value.data(), false, &mut db, acc);
                    } else {
                        gemm(k, m, n, self.nodes[a].value.data(), true, g, false, &mut db, acc);
                    }
                    self.grads[b] = Some(db);
                }
            }
            Op::AddRowBias { x, bias, cols } => {
                self.accumulate_slice(*x, g);
                if self.ng(*bias) {
                    let mut db = vec![T::zero(); *cols];
                    for row in g.chunks(*cols) {
                        add_into(&mut db, row);
                    }
                    self.accumulate(*bias, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate_slice(*a, g);
                self.accumulate_slice(*b, g);
            }
            Op::Sub(a, b) => {
                self.accumulate_slice(*a, g);
                self.accumulate(*b, g.iter().map(|v| -*v).collect());
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if self.ng(a) {
                    let d = g.iter().zip(self.nodes[b].value.data()).map(|(g, y)| *g * *y).collect();
                    self.accumulate(a, d);
                }
                if self.ng(b) {
                    let d = g.iter().zip(self.nodes[a].value.data()).map(|(g, x)| *g * *x).collect();
                    self.accumulate(b, d);
                }
            }
            Op::Scale(a, s) => {
                let d = g.iter().map(|v| *v * *s).collect();
                self.accumulate(*a, d);
            }
            Op::Sigmoid(a) => {
                let y = self.nodes[i].value.data();
                let d = g.iter().zip(y).map(|(g, y)| *g * *y * (T::one() - *y)).collect();
                self.accumulate(*a, d);
            }
            Op::Tanh(a) => {
                let y = self.nodes[i].value.data();
                let d = g.iter().zip(y).map(|(g, y)| *g * (T::one() - *y * *y)).collect();
                self.accumulate(*a, d);
            }
            Op::Relu(a) => {
                let y = self.nodes[i].value.data();
                let d = g
                    .iter()
                    .zip(y)
                    .map(|(g, y)| if *y > T::zero() { *g } else { T::zero() })
                    .collect();
                self.accumulate(*a, d);
            }
            Op::Softmax { x, cols } => {
                let y = self.nodes[i].value.data();
                let mut d = vec![T::zero(); y.len()];
                for ((dr, yr), gr) in d.chunks_mut(*cols).zip(y.chunks(*cols)).zip(g.chunks(*cols)) {
                    let dot = yr.iter().zip(gr).map(|(a, b)| *a * *b).sum::<T>();
                    for j in 0..*cols {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(*x, d);
            }
            Op::Concat { inputs, lens, outer, inner } => {
                let total: usize = lens.iter().sum();
                let mut offset = 0;
                for (inp, len) in inputs.iter().zip(lens) {
                    let chunk = len * inner;
                    let off = offset;
                    let (outer, inner_total) = (*outer, total * inner);
                    self.accumulate_with(*inp, |dst| {
                        for o in 0..outer {
                            let src = &g[o * inner_total + off..o * inner_total + off + chunk];
                            add_into(&mut dst[o * chunk..(o + 1) * chunk], src);
                        }
                    });
                    offset += chunk;
                }
            }
            Op::Narrow { x, outer, inner, len_in, start, len } => {
                let (outer, inner, len_in, start, len) = (*outer, *inner, *len_in, *start, *len);
                self.accumulate_with(*x, |dst| {
                    for o in 0..outer {
                        let base = (o * len_in + start) * inner;
                        add_into(&mut dst[base..base + len * inner], &g[o * len * inner..(o + 1) * len * inner]);
                    }
                });
            }
            Op::Reshape(x) => self.accumulate_slice(*x, g),
            Op::Conv { x, kernel, bias, dims } => {
                let need_dx = self.ng(*x);
                let (dx, dk, db) = conv::conv_backward(
                    self.nodes[*x].value.data(),
                    self.nodes[*kernel].value.data(),
                    g,
                    dims,
                    need_dx,
                );
                if let Some(dx) = dx {
                    self.accumulate(*x, dx);
                }
                self.accumulate(*kernel, dk);
                if let Some(b) = bias {
                    self.accumulate(*b, db);
                }
            }
            Op::Depthwise { x, kernel, bias, dims } => {
                let [n, c, h, w] = *dims;
                let (dx, dk, db) = conv::depthwise_backward(
                    self.nodes[*x].value.data(),
                    self.nodes[*kernel].value.data(),
                    g,
                    n,
                    c,
                    h,
                    w,
                    self.ng(*x),
                );
                if let Some(dx) = dx {
                    self.accumulate(*x, dx);
                }
                self.accumulate(*kernel, dk);
                if let Some(b) = bias {
                    self.accumulate(*b, db);
                }
            }
            Op::MaxPool { x, argmax } => {
                self.accumulate_with(*x, |dst| {
                    for (gv, idx) in g.iter().zip(argmax) {
                        dst[*idx] += *gv;
                    }
                });
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, dims, train } => {
                let [n, c, hw] = *dims;
                let gam = self.nodes[*gamma].value.data().to_vec();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for s in 0..n {
                    for ch in 0..c {
                        let base = (s * c + ch) * hw;
                        for j in base..base + hw {
                            dgamma[ch] += g[j] * xhat[j];
                            dbeta[ch] += g[j];
                        }
                    }
                }
                if self.ng(*x) {
                    let mut dx = vec![T::zero(); g.len()];
                    if *train {
                        let m = T::from_usize(n * hw).unwrap();
                        for ch in 0..c {
                            // dxhat = g * gamma; sums of dxhat and dxhat*xhat equal
                            // gamma*dbeta and gamma*dgamma.
                            let sum_d = gam[ch] * dbeta[ch];
                            let sum_dx = gam[ch] * dgamma[ch];
                            for s in 0..n {
                                let base = (s * c + ch) * hw;
                                for j in base..base + hw {
                                    let dxh = g[j] * gam[ch];
                                    dx[j] = inv_std[ch] / m * (m * dxh - sum_d - xhat[j] * sum_dx);
                                }
                            }
                        }
                    } else {
                        for s in 0..n {
                            for ch in 0..c {
                                let base = (s * c + ch) * hw;
                                for j in base..base + hw {
                                    dx[j] = g[j] * gam[ch] * inv_std[ch];
                                }
                            }
                        }
                    }
                    self.accumulate(*x, dx);
                }
                self.accumulate(*gamma, dgamma);
                self.accumulate(*beta, dbeta);
            }
            Op::GlobalAvgPool { x, hw } => {
                let inv = T::one() / T::from_usize(*hw).unwrap();
                let hw = *hw;
                self.accumulate_with(*x, |dst| {
                    for (p, gv) in dst.chunks_mut(hw).zip(g) {
                        p.iter_mut().for_each(|v| *v += *gv * inv);
                    }
                });
            }
            Op::LstmCell {
                gates,
                c_prev,
                units,
                acts,
            } => {
                let u = *units;
                let cd = self.nodes[*c_prev].value.data();
                let batch = cd.len() / u;
                let mut dgates = vec![T::zero(); 4 * cd.len()];
                let mut dc = vec![T::zero(); cd.len()];
                for b in 0..batch {
                    let a = &acts[b * 3 * u..(b + 1) * 3 * u];
                    let dgr = &mut dgates[b * 4 * u..(b + 1) * 4 * u];
                    for j in 0..u {
                        let gv = g[b * u + j];
                        let (si, sf, tg) = (a[j], a[u + j], a[2 * u + j]);
                        let cp = cd[b * u + j];
                        dc[b * u + j] = gv * sf;
                        dgr[j] = gv * tg * si * (T::one() - si);
                        dgr[u + j] = gv * cp * sf * (T::one() - sf);
                        dgr[2 * u + j] = gv * si * (T::one() - tg * tg);
                    }
                }
                self.accumulate(*gates, dgates);
                self.accumulate(*c_prev, dc);
            }
            Op::LstmHidden {
                gates,
                cell,
                units,
                acts,
            } => {
                let u = *units;
                let batch = acts.len() / (2 * u);
                let mut dgates = vec![T::zero(); 4 * batch * u];
                let mut dc = vec![T::zero(); batch * u];
                for b in 0..batch {
                    for j in 0..u {
                        let gv = g[b * u + j];
                        let so = acts[b * 2 * u + j];
                        let tc = acts[b * 2 * u + u + j];
                        dgates[b * 4 * u + 3 * u + j] = gv * tc * so * (T::one() - so);
                        dc[b * u + j] = gv * so * (T::one() - tc * tc);
                    }
                }
                self.accumulate(*gates, dgates);
                self.accumulate(*cell, dc);
            }
            Op::Mse { pred, target } => {
                let p = self.nodes[*pred].value.data();
                let scale = g[0] * T::from_f64_lossy(2.0) / T::from_usize(target.len()).unwrap();
                let d = p.iter().zip(target).map(|(p, t)| (*p - *t) * scale).collect();
                self.accumulate(*pred, d);
            }
            Op::CrossEntropy { probs, target, rows } => {
                let p = self.nodes[*probs].value.data();
                let lo = T::from_f64_lossy(CE_CLAMP);
                let inv = g[0] / T::from_usize(*rows).unwrap();
                let d = p
                    .iter()
                    .zip(target)
                    .map(|(p, t)| {
                        if *p < lo || *p > T::one() {
                            T::zero()
                        } else {
                            -*t / *p * inv
                        }
                    })
                    .collect();
                self.accumulate(*probs, d);
            }
            Op::MaskedCe { logits, probs, targets, mask, classes, count } => {
                if *count > 0 {
                    let k = *classes;
                    let inv = g[0] / T::from_usize(*count).unwrap();
                    let mut d = probs.clone();
                    for r in 0..targets.len() {
                        let row = &mut d[r * k..(r + 1) * k];
                        if !mask[r] {
                            row.iter_mut().for_each(|v| *v = T::zero());
                            continue;
                        }
                        row[targets[r]] -= T::one();
                        row.iter_mut().for_each(|v| *v *= inv);
                    }
                    self.accumulate(*logits, d);
                }
            }
            Op::Sum(x) => {
                let len = self.nodes[*x].value.len();
                self.accumulate(*x, vec![g[0]; len]);
            }
            Op::Mean(x) => {
                let len = self.nodes[*x].value.len();
                let v = g[0] / T::from_usize(len).unwrap();
                self.accumulate(*x, vec![v; len]);
            }
        }
        self.nodes[i].op = op;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn dense_arithmetic() {
        let mut g = Graph::new();
        let x = g.input(t(&[1, 2], &[3.0, 4.0]));
        let w = g.param(t(&[1, 2], &[1.0, 2.0]));
        let b = g.param(t(&[1], &[0.5]));
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[11.5]);
    }

    #[test]
    fn softmax_of_zero_logits_is_uniform() {
        let mut g = Graph::new();
        let x = g.input(Tensor::<f64>::zeros(&[1, 9]));
        let p = g.softmax(x);
        for v in g.value(p).data() {
            assert!((v - 1.0 / 9.0).abs() < 1e-15);
        }
        assert!((g.value(p).data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mse_and_cross_entropy_values() {
        let mut g = Graph::new();
        let p = g.input(t(&[2], &[1.0, 3.0]));
        let l = g.mse(p, &t(&[2], &[0.0, 1.0])).unwrap();
        assert_eq!(g.value(l).data()[0], 2.5);
        let same = g.mse(p, &t(&[2], &[1.0, 3.0])).unwrap();
        assert_eq!(g.value(same).data()[0], 0.0);

        let probs = g.input(Tensor::full(&[1, 9], 1.0 / 9.0));
        let mut onehot = vec![0.0; 9];
        onehot[4] = 1.0;
        let ce = g.cross_entropy(probs, &t(&[1, 9], &onehot)).unwrap();
        assert!((g.value(ce).data()[0] - 9f64.ln()).abs() < 1e-12);
        assert!((9f64.ln() - 2.1972).abs() < 1e-4);
    }

    #[test]
    fn cross_entropy_clamps_zero_probability() {
        let mut g = Graph::new();
        let probs = g.input(t(&[1, 2], &[0.0, 1.0]));
        let ce = g.cross_entropy(probs, &t(&[1, 2], &[1.0, 0.0])).unwrap();
        let v = g.value(ce).data()[0];
        assert!(v.is_finite());
        assert!((v - (-(1e-12f64).ln())).abs() < 1e-9);
    }

    #[test]
    fn masked_ce_excluding_pad_of_uniform_is_ln9() {
        let mut g = Graph::new();
        let logits = g.param(Tensor::<f64>::zeros(&[3, 10]));
        let ce = g
            .masked_softmax_ce(logits, &[2, 8, 9], &[true, true, false], &[9])
            .unwrap();
        assert!((g.value(ce).data()[0] - 9f64.ln()).abs() < 1e-12);
        g.backward(ce).unwrap();
        let grad = g.grad(logits);
        // masked row and excluded class receive nothing
        assert!(grad.data()[20..30].iter().all(|v| *v == 0.0));
        assert_eq!(grad.data()[9], 0.0);
    }

    #[test]
    fn conv_identity_and_window_sums() {
        let mut g = Graph::new();
        // 1x1 identity over 3 channels
        let x = g.input(Tensor::from_f64(&[1, 3, 2, 2], &(0..12).map(|v| v as f64).collect::<Vec<_>>()).unwrap());
        let mut eye = vec![0.0; 9];
        for c in 0..3 {
            eye[c * 3 + c] = 1.0;
        }
        let k = g.input(t(&[3, 3, 1, 1], &eye));
        let y = g.conv2d(x, k, None, ConvMode::Standard).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());

        let ones = g.input(Tensor::full(&[1, 1, 3, 3], 1.0));
        let k3 = g.input(Tensor::full(&[1, 1, 3, 3], 1.0));
        let s = g.conv2d(ones, k3, None, ConvMode::Standard).unwrap();
        let d = g.value(s).data();
        assert_eq!(d[4], 9.0);
        assert_eq!([d[0], d[2], d[6], d[8]], [4.0; 4]);
    }

    #[test]
    fn conv_shape_contract_and_errors() {
        let mut g = Graph::new();
        let x = g.input(Tensor::<f64>::zeros(&[1, 3, 8, 8]));
        let k = g.input(Tensor::zeros(&[5, 3, 3, 3]));
        let y = g.conv2d(x, k, None, ConvMode::Standard).unwrap();
        assert_eq!(g.shape(y), &[1, 5, 8, 8]);
        let bad = g.input(Tensor::zeros(&[5, 2, 3, 3]));
        assert!(matches!(
            g.conv2d(x, bad, None, ConvMode::Standard),
            Err(TensorError::Shape(_))
        ));
    }

    #[test]
    fn maxpool_values_and_shapes() {
        let mut g = Graph::new();
        let c = g.input(Tensor::<f64>::full(&[1, 2, 5, 5], 0.7));
        let y = g.maxpool3(c, 1).unwrap();
        assert!(g.value(y).data().iter().all(|v| *v == 0.7));
        let x = g.input(t(&[1, 1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]));
        let y = g.maxpool3(x, 1).unwrap();
        assert_eq!(g.value(y).data()[4], 9.0);
        let big = g.input(Tensor::zeros(&[1, 4, 8, 8]));
        let y = g.maxpool3(big, 2).unwrap();
        assert_eq!(g.shape(y), &[1, 4, 4, 4]);
    }

    #[test]
    fn maxpool_gradient_routes_to_lowest_index_on_ties() {
        let mut g = Graph::new();
        let x = g.param(Tensor::<f64>::full(&[1, 1, 1, 3], 2.0));
        let y = g.maxpool3(x, 2).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        // outputs at columns 0 and 2; windows {0,1} and {1,2}
        assert_eq!(g.grad(x).data(), &[1.0, 1.0, 0.0]);
    }

    #[test]
    fn batchnorm_normalizes_and_relu_clips() {
        let mut g = Graph::new();
        // per-channel zero mean, unit (biased) variance
        let x = g.input(t(&[2, 1, 1, 2], &[1.0, -1.0, 1.0, -1.0]));
        let gamma = g.param(t(&[1], &[1.0]));
        let beta = g.param(t(&[1], &[0.0]));
        let bn = g.batchnorm(x, gamma, beta, BnMode::Train).unwrap();
        let r = g.relu(bn.out);
        for (o, i) in g.value(r).data().iter().zip([1.0, -1.0, 1.0, -1.0]) {
            assert!((o - f64::max(0.0, i)).abs() < 1e-4);
        }
        assert_eq!(bn.batch_mean, vec![0.0]);
        assert!((bn.batch_var[0] - 1.0).abs() < 1e-12);

        let neg = g.input(t(&[1, 1, 1, 2], &[-3.0, -5.0]));
        let m = [0.0];
        let v = [1.0];
        let bn = g.batchnorm(neg, gamma, beta, BnMode::Eval { mean: &m, var: &v }).unwrap();
        let r = g.relu(bn.out);
        assert!(g.value(r).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn lstm_with_zero_everything_outputs_zero() {
        let mut g = Graph::new();
        let gates = g.input(Tensor::<f64>::zeros(&[1, 8]));
        let c = g.input(Tensor::zeros(&[1, 2]));
        let c2 = g.lstm_cell(gates, c).unwrap();
        let h = g.lstm_hidden(gates, c2).unwrap();
        assert_eq!(g.value(h).data(), &[0.0, 0.0]);
    }

    #[test]
    fn unrelated_parameter_gets_exact_zero() {
        let mut g = Graph::new();
        let a = g.param(t(&[2], &[1.0, 2.0]));
        let b = g.param(t(&[2], &[3.0, 4.0]));
        let l = g.sum(a);
        g.backward(l).unwrap();
        assert_eq!(g.grad(b).data(), &[0.0, 0.0]);
        assert_eq!(g.grad(a).data(), &[1.0, 1.0]);
    }

    #[test]
    fn mse_gradient_is_analytic() {
        let mut g = Graph::new();
        let x = g.param(t(&[3], &[1.0, 2.0, 4.0]));
        let y = t(&[3], &[0.0, 2.5, 1.0]);
        let l = g.mse(x, &y).unwrap();
        g.backward(l).unwrap();
        let want = [2.0 * 1.0 / 3.0, 2.0 * -0.5 / 3.0, 2.0 * 3.0 / 3.0];
        for (a, b) in g.grad(x).data().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn concat_channel_count_is_sum() {
        let mut g = Graph::new();
        let a = g.input(Tensor::<f64>::zeros(&[2, 3, 4, 4]));
        let b = g.input(Tensor::zeros(&[2, 5, 4, 4]));
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.shape(c), &[2, 8, 4, 4]);
    }
}
