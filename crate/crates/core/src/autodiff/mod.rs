//! Reverse-mode automatic differentiation over a fixed operation vocabulary.
//!
//! Operations are recorded on a [`Tape`] as they run. Nodes are appended in
//! evaluation order, so the tape is already a topological order of the
//! graph and [`Tape::backward`] simply walks it in reverse, accumulating
//! gradients into every node reachable from the loss.
//!
//! ```
//! use carn_core::autodiff::Tape;
//! use carn_core::tensor::Tensor;
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, -4.0, 1.0]);
//! ```

mod conv;

pub use conv::Padding;

use conv::ConvGeometry;

use crate::error::TensorError;
use crate::tensor::{gemm, MatRef, Scalar, Tensor};

/// Batch-norm variance floor.
pub const BN_EPS: f64 = 1e-5;
/// Weight of the previous running moment in the exponential average.
pub const BN_MOMENTUM: f64 = 0.9;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Mul,
    Add,
}

/// Per-channel running mean and (biased) variance used in infer mode.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningMoments<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> RunningMoments<T> {
    pub fn new(channels: usize) -> Self {
        Self { mean: vec![T::zero(); channels], var: vec![T::one(); channels] }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    fn update(&mut self, mean: &[T], var: &[T]) {
        let m = T::lit(BN_MOMENTUM);
        let one_minus = T::one() - m;
        for c in 0..self.mean.len() {
            self.mean[c] = m * self.mean[c] + one_minus * mean[c];
            self.var[c] = m * self.var[c] + one_minus * var[c];
        }
    }
}

/// Whether batch norm uses batch statistics (and updates the running ones)
/// or the stored running statistics.
pub enum BatchNormMode<'a, T> {
    Train(&'a mut RunningMoments<T>),
    Infer(&'a RunningMoments<T>),
}

enum Op<T> {
    Leaf,
    Conv2d { input: Var, kernel: Var, bias: Var, geom: ConvGeometry },
    MaxPool2 { input: Var, argmax: Vec<usize> },
    BatchNorm { input: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, batch_stats: bool },
    Relu { input: Var },
    Tanh { input: Var },
    Dense { input: Var, weight: Var, bias: Var },
    GlobalAvgPool { input: Var },
    Concat { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Add { a: Var, b: Var },
    AddScalar { input: Var },
    Scale { input: Var, factor: T },
    Sum { input: Var },
    MeanAbsDiff { input: Var, target: Tensor<T> },
    L2Norm { input: Var },
    SquaredNorm { input: Var },
    Custom { input: Var, derivative: Box<dyn Fn(T) -> T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` when `var` does not influence the loss.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

/// Records a computation graph for one forward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, detail: String) -> TensorError {
    TensorError::ShapeMismatch { op, detail }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Inserts an input or parameter.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: Padding,
    ) -> Result<Var, TensorError> {
        let geom = ConvGeometry::new(self.shape(input), self.shape(kernel), self.shape(bias), stride, padding)?;
        let out = geom.forward(self.value(input).data(), self.value(kernel).data(), self.value(bias).data());
        let value = Tensor::new(geom.output_shape(), out)?;
        Ok(self.push(value, Op::Conv2d { input, kernel, bias, geom }))
    }

    /// 2x2 max pooling with stride 2.
    pub fn maxpool2(&mut self, input: Var) -> Result<Var, TensorError> {
        let (b, c, h, w) = self.value(input).dims4("maxpool2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(TensorError::OddSpatial { op: "maxpool2", h, w });
        }
        let (oh, ow) = (h / 2, w / 2);
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(b * c * oh * ow);
        let mut argmax = Vec::with_capacity(b * c * oh * ow);
        for plane in 0..b * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        // strict comparison keeps the first maximum on ties
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new(vec![b, c, oh, ow], out)?;
        Ok(self.push(value, Op::MaxPool2 { input, argmax }))
    }

    /// Per-channel batch normalization over `[B,C,H,W]` or `[B,C]` input.
    pub fn batchnorm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_, T>,
    ) -> Result<Var, TensorError> {
        let shape = self.shape(input).to_vec();
        let (batch, channels, spatial) = match shape[..] {
            [b, c] => (b, c, 1),
            [b, c, h, w] => (b, c, h * w),
            _ => return Err(mismatch("batchnorm", format!("expected [B,C] or [B,C,H,W], got {shape:?}"))),
        };
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [channels] {
                return Err(mismatch(
                    "batchnorm",
                    format!("{name} must be [{channels}], got {:?}", self.shape(v)),
                ));
            }
        }
        let eps = T::lit(BN_EPS);
        let x = self.value(input).data();
        let (mean, var, batch_stats) = match &mode {
            BatchNormMode::Train(_) => {
                if batch < 2 {
                    return Err(TensorError::BatchTooSmall { op: "batchnorm", batch });
                }
                let count = T::from_usize(batch * spatial).expect("count");
                let mut mean = vec![T::zero(); channels];
                let mut var = vec![T::zero(); channels];
                for c in 0..channels {
                    let mut s = T::zero();
                    for b in 0..batch {
                        let off = (b * channels + c) * spatial;
                        s += x[off..off + spatial].iter().copied().sum::<T>();
                    }
                    let m = s / count;
                    let mut ss = T::zero();
                    for b in 0..batch {
                        let off = (b * channels + c) * spatial;
                        ss += x[off..off + spatial].iter().map(|&v| (v - m) * (v - m)).sum::<T>();
                    }
                    mean[c] = m;
                    var[c] = ss / count;
                }
                (mean, var, true)
            }
            BatchNormMode::Infer(running) => {
                if running.channels() != channels {
                    return Err(mismatch(
                        "batchnorm",
                        format!("running moments have {} channels, input has {channels}", running.channels()),
                    ));
                }
                (running.mean.clone(), running.var.clone(), false)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for b in 0..batch {
            for c in 0..channels {
                let off = (b * channels + c) * spatial;
                for i in off..off + spatial {
                    let xh = (x[i] - mean[c]) * inv_std[c];
                    xhat[i] = xh;
                    out[i] = g[c] * xh + bt[c];
                }
            }
        }
        if let BatchNormMode::Train(running) = mode {
            running.update(&mean, &var);
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::BatchNorm { input, gamma, beta, xhat, inv_std, batch_stats }))
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Var {
        match kind {
            Activation::Relu => {
                let value = self.value(input).map(|v| v.max(T::zero()));
                self.push(value, Op::Relu { input })
            }
            Activation::Tanh => {
                let value = self.value(input).map(T::tanh);
                self.push(value, Op::Tanh { input })
            }
        }
    }

    pub fn relu(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Relu)
    }

    pub fn tanh(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Tanh)
    }

    /// `input [B,n] * weight^T [n,m] + bias` with `weight` stored `[m,n]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var, TensorError> {
        let (xs, ws, bs) = (self.shape(input), self.shape(weight), self.shape(bias));
        let (batch, n, m) = match (xs, ws) {
            ([b, n], [m, n2]) if n == n2 => (*b, *n, *m),
            _ => return Err(mismatch("dense", format!("input {xs:?} incompatible with weight {ws:?}"))),
        };
        if bs != [m] {
            return Err(mismatch("dense", format!("bias must be [{m}], got {bs:?}")));
        }
        let mut out: Vec<T> = (0..batch).flat_map(|_| self.value(bias).data().iter().copied()).collect();
        gemm(
            MatRef::new(self.value(input).data(), batch, n),
            MatRef::transposed(self.value(weight).data(), n, m),
            &mut out,
            true,
        );
        let value = Tensor::new(vec![batch, m], out)?;
        Ok(self.push(value, Op::Dense { input, weight, bias }))
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var, TensorError> {
        let (b, c, h, w) = self.value(input).dims4("global_avg_pool")?;
        let area = T::from_usize(h * w).expect("area");
        let out = self.value(input).data().chunks(h * w).map(|p| p.iter().copied().sum::<T>() / area).collect();
        let value = Tensor::new(vec![b, c], out)?;
        Ok(self.push(value, Op::GlobalAvgPool { input }))
    }

    /// Channel-axis concatenation, `a` first.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ba, ca, ha, wa) = self.value(a).dims4("concat_channels")?;
        let (bb, cb, hb, wb) = self.value(b).dims4("concat_channels")?;
        if (ba, ha, wa) != (bb, hb, wb) {
            return Err(mismatch(
                "concat_channels",
                format!("batch/spatial dims differ: {:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let plane = ha * wa;
        let (xa, xb) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(xa.len() + xb.len());
        for n in 0..ba {
            out.extend_from_slice(&xa[n * ca * plane..(n + 1) * ca * plane]);
            out.extend_from_slice(&xb[n * cb * plane..(n + 1) * cb * plane]);
        }
        let value = Tensor::new(vec![ba, ca + cb, ha, wa], out)?;
        Ok(self.push(value, Op::Concat { a, b }))
    }

    pub fn elementwise(&mut self, a: Var, b: Var, kind: Elementwise) -> Result<Var, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(
                "elementwise",
                format!("shapes differ: {:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let (xa, xb) = (self.value(a).data(), self.value(b).data());
        let out: Vec<T> = match kind {
            Elementwise::Mul => xa.iter().zip(xb).map(|(&p, &q)| p * q).collect(),
            Elementwise::Add => xa.iter().zip(xb).map(|(&p, &q)| p + q).collect(),
        };
        let value = Tensor::new(self.shape(a).to_vec(), out)?;
        let op = match kind {
            Elementwise::Mul => Op::Mul { a, b },
            Elementwise::Add => Op::Add { a, b },
        };
        Ok(self.push(value, op))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.elementwise(a, b, Elementwise::Mul)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.elementwise(a, b, Elementwise::Add)
    }

    /// `input + c` elementwise.
    pub fn add_scalar(&mut self, input: Var, c: T) -> Var {
        let value = self.value(input).map(|v| v + c);
        self.push(value, Op::AddScalar { input })
    }

    /// `input * factor` elementwise.
    pub fn scale(&mut self, input: Var, factor: T) -> Var {
        let value = self.value(input).map(|v| v * factor);
        self.push(value, Op::Scale { input, factor })
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum { input })
    }

    /// `mean(|input - target|)` against a constant target.
    pub fn mean_abs_diff(&mut self, input: Var, target: &Tensor<T>) -> Result<Var, TensorError> {
        if self.shape(input) != target.shape() {
            return Err(mismatch(
                "mean_abs_diff",
                format!("prediction {:?} vs target {:?}", self.shape(input), target.shape()),
            ));
        }
        let x = self.value(input).data();
        let n = T::from_usize(x.len().max(1)).expect("count");
        let s = x.iter().zip(target.data()).map(|(&p, &q)| (p - q).abs()).sum::<T>() / n;
        Ok(self.push(Tensor::scalar(s), Op::MeanAbsDiff { input, target: target.clone() }))
    }

    /// Euclidean norm of the flattened input (not squared).
    pub fn l2_norm(&mut self, input: Var) -> Var {
        let s = self.value(input).norm();
        self.push(Tensor::scalar(s), Op::L2Norm { input })
    }

    /// Sum of squares of the flattened input.
    pub fn squared_norm(&mut self, input: Var) -> Var {
        let s = self.value(input).data().iter().map(|&v| v * v).sum::<T>();
        self.push(Tensor::scalar(s), Op::SquaredNorm { input })
    }

    /// Elementwise `f` with a caller-supplied derivative. Intended for
    /// testing the gradient checker; the engine trusts `df` blindly.
    pub fn custom_unary(
        &mut self,
        input: Var,
        f: impl Fn(T) -> T,
        df: impl Fn(T) -> T + 'static,
    ) -> Var {
        let value = self.value(input).map(f);
        self.push(value, Op::Custom { input, derivative: Box::new(df) })
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        let loss_value = self.value(loss);
        if loss_value.numel() != 1 {
            return Err(TensorError::NonScalar { shape: loss_value.shape().to_vec() });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(loss_value.shape(), T::one()));
        for idx in (0..=loss.0).rev() {
            let Some(grad) = grads[idx].take() else { continue };
            self.propagate(idx, &grad, &mut grads);
            grads[idx] = Some(grad);
        }
        Ok(Gradients { grads })
    }

    fn grad_slot<'g>(&self, grads: &'g mut [Option<Tensor<T>>], var: Var) -> &'g mut [T] {
        grads[var.0]
            .get_or_insert_with(|| Tensor::zeros(self.nodes[var.0].value.shape()))
            .data_mut()
    }

    fn propagate(&self, idx: usize, dy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[idx];
        let dyd = dy.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, kernel, bias, geom } => {
                let x = self.value(*input).data();
                let k = self.value(*kernel).data();
                let mut dk = vec![T::zero(); k.len()];
                let mut db = vec![T::zero(); geom.out_c];
                let mut dx = vec![T::zero(); x.len()];
                geom.backward(x, k, dyd, Some(&mut dx), &mut dk, &mut db);
                add_into(self.grad_slot(grads, *input), &dx);
                add_into(self.grad_slot(grads, *kernel), &dk);
                add_into(self.grad_slot(grads, *bias), &db);
            }
            Op::MaxPool2 { input, argmax } => {
                let dx = self.grad_slot(grads, *input);
                for (&src, &g) in argmax.iter().zip(dyd) {
                    dx[src] += g;
                }
            }
            Op::BatchNorm { input, gamma, beta, xhat, inv_std, batch_stats } => {
                let shape = self.shape(*input);
                let (batch, channels) = (shape[0], shape[1]);
                let spatial: usize = shape[2..].iter().product();
                let g = self.value(*gamma).data();
                let mut dgamma = vec![T::zero(); channels];
                let mut dbeta = vec![T::zero(); channels];
                for b in 0..batch {
                    for c in 0..channels {
                        let off = (b * channels + c) * spatial;
                        for i in off..off + spatial {
                            dgamma[c] += dyd[i] * xhat[i];
                            dbeta[c] += dyd[i];
                        }
                    }
                }
                let mut dx = vec![T::zero(); dyd.len()];
                if *batch_stats {
                    let count = T::from_usize(batch * spatial).expect("count");
                    for c in 0..channels {
                        // dxhat = dy * gamma; sums over the channel reuse dbeta/dgamma
                        let sum_dxhat = dbeta[c] * g[c];
                        let sum_dxhat_xhat = dgamma[c] * g[c];
                        let k = inv_std[c] / count;
                        for b in 0..batch {
                            let off = (b * channels + c) * spatial;
                            for i in off..off + spatial {
                                dx[i] = k * (count * dyd[i] * g[c] - sum_dxhat - xhat[i] * sum_dxhat_xhat);
                            }
                        }
                    }
                } else {
                    for b in 0..batch {
                        for c in 0..channels {
                            let off = (b * channels + c) * spatial;
                            for i in off..off + spatial {
                                dx[i] = dyd[i] * g[c] * inv_std[c];
                            }
                        }
                    }
                }
                add_into(self.grad_slot(grads, *input), &dx);
                add_into(self.grad_slot(grads, *gamma), &dgamma);
                add_into(self.grad_slot(grads, *beta), &dbeta);
            }
            Op::Relu { input } => {
                let x = self.value(*input).data();
                let dx = self.grad_slot(grads, *input);
                for i in 0..dyd.len() {
                    if x[i] > T::zero() {
                        dx[i] += dyd[i];
                    }
                }
            }
            Op::Tanh { input } => {
                let y = node.value.data();
                let dx = self.grad_slot(grads, *input);
                for i in 0..dyd.len() {
                    dx[i] += dyd[i] * (T::one() - y[i] * y[i]);
                }
            }
            Op::Dense { input, weight, bias } => {
                let (batch, n) = (self.shape(*input)[0], self.shape(*input)[1]);
                let m = self.shape(*weight)[0];
                let x = self.value(*input).data();
                let w = self.value(*weight).data();
                gemm(MatRef::new(dyd, batch, m), MatRef::new(w, m, n), self.grad_slot(grads, *input), true);
                gemm(
                    MatRef::transposed(dyd, m, batch),
                    MatRef::new(x, batch, n),
                    self.grad_slot(grads, *weight),
                    true,
                );
                let db = self.grad_slot(grads, *bias);
                for row in dyd.chunks(m) {
                    add_into(db, row);
                }
            }
            Op::GlobalAvgPool { input } => {
                let (_, _, h, w) = self.value(*input).dims4("global_avg_pool").expect("validated");
                let area = T::from_usize(h * w).expect("area");
                let dx = self.grad_slot(grads, *input);
                for (plane, &g) in dx.chunks_mut(h * w).zip(dyd) {
                    let share = g / area;
                    plane.iter_mut().for_each(|v| *v += share);
                }
            }
            Op::Concat { a, b } => {
                let (batch, ca, h, w) = self.value(*a).dims4("concat_channels").expect("validated");
                let cb = self.shape(*b)[1];
                let plane = h * w;
                let (na, nb) = (ca * plane, cb * plane);
                {
                    let da = self.grad_slot(grads, *a);
                    for n in 0..batch {
                        add_into(&mut da[n * na..(n + 1) * na], &dyd[n * (na + nb)..n * (na + nb) + na]);
                    }
                }
                let db = self.grad_slot(grads, *b);
                for n in 0..batch {
                    add_into(&mut db[n * nb..(n + 1) * nb], &dyd[n * (na + nb) + na..(n + 1) * (na + nb)]);
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let da = self.grad_slot(grads, *a);
                for i in 0..dyd.len() {
                    da[i] += dyd[i] * bv[i];
                }
                let db = self.grad_slot(grads, *b);
                for i in 0..dyd.len() {
                    db[i] += dyd[i] * av[i];
                }
            }
            Op::Add { a, b } => {
                add_into(self.grad_slot(grads, *a), dyd);
                add_into(self.grad_slot(grads, *b), dyd);
            }
            Op::AddScalar { input } => add_into(self.grad_slot(grads, *input), dyd),
            Op::Scale { input, factor } => {
                let dx = self.grad_slot(grads, *input);
                for i in 0..dyd.len() {
                    dx[i] += dyd[i] * *factor;
                }
            }
            Op::Sum { input } => {
                let g = dyd[0];
                self.grad_slot(grads, *input).iter_mut().for_each(|v| *v += g);
            }
            Op::MeanAbsDiff { input, target } => {
                let x = self.value(*input).data();
                let share = dyd[0] / T::from_usize(x.len().max(1)).expect("count");
                let dx = self.grad_slot(grads, *input);
                for i in 0..x.len() {
                    dx[i] += share * sign(x[i] - target.data()[i]);
                }
            }
            Op::L2Norm { input } => {
                let norm = node.value.data()[0];
                if norm > T::zero() {
                    let x = self.value(*input).data();
                    let k = dyd[0] / norm;
                    let dx = self.grad_slot(grads, *input);
                    for i in 0..x.len() {
                        dx[i] += k * x[i];
                    }
                }
            }
            Op::SquaredNorm { input } => {
                let x = self.value(*input).data();
                let k = dyd[0] + dyd[0];
                let dx = self.grad_slot(grads, *input);
                for i in 0..x.len() {
                    dx[i] += k * x[i];
                }
            }
            Op::Custom { input, derivative } => {
                let x = self.value(*input).data();
                let dx = self.grad_slot(grads, *input);
                for i in 0..x.len() {
                    dx[i] += dyd[i] * derivative(x[i]);
                }
            }
        }
    }
}

/// Subgradient of `|v|` with the convention `sign(0) = 0`.
fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests;
