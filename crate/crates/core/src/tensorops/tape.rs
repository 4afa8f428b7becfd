//! Recording-based reverse-mode differentiation.
//!
//! A [`Tape`] owns every intermediate value of one forward computation. Each
//! operator appends a node and returns a [`Var`] handle; [`Tape::backward`]
//! walks the nodes in reverse and returns the gradient of a scalar loss with
//! respect to every node that requires one. A tape can be differentiated
//! once; run the forward pass again on a fresh tape for the next step.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensorops::conv::{self, ConvDims, ConvGeometry};
use crate::tensorops::tensor::{Shape, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Normalization behaviour of stateful layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNormConfig {
    pub eps: f64,
    pub momentum: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        BatchNormConfig {
            eps: 1e-5,
            momentum: 0.1,
        }
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        dims: ConvDims,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        dims: ConvDims,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        invstd: Vec<T>,
        batch_stats: bool,
    },
    Relu(Var),
    LeakyRelu(Var, T),
    Sigmoid(Var),
    Softplus(Var),
    Abs(Var),
    Square(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ChannelScale {
        x: Var,
        gate: Var,
    },
    Affine {
        x: Var,
        scale: T,
    },
    GlobalAvgPool(Var),
    DiffX(Var),
    DiffY(Var),
    Mean(Var),
    Sum(Var),
    WeightedSum(Vec<(Var, T)>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Shape>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `v`, or `None` when `v` does not
    /// require gradients or is not reachable from the loss.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient as a tensor, zero-filled when unreachable.
    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let shape = self.shapes[v.0];
        match self.get(v) {
            Some(g) => Tensor::from_vec(shape, g.to_vec()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Input or parameter node. Any gradient slot on `value` is dropped.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        let value = if value.grad().is_some() {
            value.detached()
        } else {
            value
        };
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert!(!self.consumed, "recording onto a differentiated tape");
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn check_recording(&self) -> Result<()> {
        if self.consumed {
            return Err(Error::Autograd(
                "tape was already differentiated; record a new forward pass".into(),
            ));
        }
        Ok(())
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<Shape> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(format!("{what}: {sa} vs {sb}")));
        }
        Ok(sa)
    }

    fn unary(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Result<Var> {
        self.check_recording()?;
        let value = self.value(x).map(f);
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, op, rg))
    }

    fn check_bias(&self, b: Option<Var>, c: usize) -> Result<()> {
        if let Some(b) = b {
            let n = self.value(b).numel();
            if n != c {
                return Err(Error::shape(format!("bias has {n} entries, expected {c}")));
            }
        }
        Ok(())
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, g: ConvGeometry) -> Result<Var> {
        self.check_recording()?;
        let dims = conv::conv_dims(self.shape(x), self.shape(w), &g)?;
        self.check_bias(b, dims.co)?;
        let mut y = conv::forward_raw(self.value(x).data(), self.value(w).data(), &dims);
        if let Some(b) = b {
            conv::add_bias(&mut y, self.value(b).data(), dims.out_shape());
        }
        let value = Tensor::from_vec(dims.out_shape(), y)?;
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.any_grad(&deps);
        Ok(self.push(value, Op::Conv2d { x, w, b, dims }, rg))
    }

    pub fn conv2d_transpose(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        g: ConvGeometry,
    ) -> Result<Var> {
        self.check_recording()?;
        let dims = conv::transpose_dims(self.shape(x), self.shape(w), &g)?;
        self.check_bias(b, dims.ci)?;
        let mut y = conv::backward_data_raw(self.value(x).data(), self.value(w).data(), &dims);
        if let Some(b) = b {
            conv::add_bias(&mut y, self.value(b).data(), dims.in_shape());
        }
        let value = Tensor::from_vec(dims.in_shape(), y)?;
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.any_grad(&deps);
        Ok(self.push(value, Op::ConvTranspose2d { x, w, b, dims }, rg))
    }

    /// Per-channel batch normalization.
    ///
    /// In [`Mode::Train`] statistics come from the batch over `(n, h, w)`
    /// and the running estimates are updated in place (variance unbiased);
    /// in [`Mode::Eval`] the running estimates are used as-is.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &mut [T],
        running_var: &mut [T],
        mode: Mode,
        cfg: BatchNormConfig,
    ) -> Result<Var> {
        self.check_recording()?;
        let s = self.shape(x);
        for (name, len) in [
            ("gamma", self.value(gamma).numel()),
            ("beta", self.value(beta).numel()),
            ("running mean", running_mean.len()),
            ("running variance", running_var.len()),
        ] {
            if len != s.c {
                return Err(Error::shape(format!(
                    "batch_norm {name} has {len} entries for {} channels",
                    s.c
                )));
            }
        }
        let eps = T::lit(cfg.eps);
        let plane = s.plane();
        let xs = self.value(x).data();
        let (mean, var) = match mode {
            Mode::Train => {
                if s.n < 2 {
                    return Err(Error::invalid(format!(
                        "batch_norm in train mode needs a batch of at least 2, got {}",
                        s.n
                    )));
                }
                let m = T::from_usize(s.n * plane).unwrap();
                let mut mean = vec![T::zero(); s.c];
                let mut var = vec![T::zero(); s.c];
                for (i, chunk) in xs.chunks(plane).enumerate() {
                    mean[i % s.c] += chunk.iter().copied().sum::<T>();
                }
                mean.iter_mut().for_each(|v| *v /= m);
                for (i, chunk) in xs.chunks(plane).enumerate() {
                    let mu = mean[i % s.c];
                    var[i % s.c] += chunk.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>();
                }
                var.iter_mut().for_each(|v| *v /= m);
                let mom = T::lit(cfg.momentum);
                let unbias = m / (m - T::one());
                for c in 0..s.c {
                    running_mean[c] = (T::one() - mom) * running_mean[c] + mom * mean[c];
                    running_var[c] = (T::one() - mom) * running_var[c] + mom * var[c] * unbias;
                }
                (mean, var)
            }
            Mode::Eval => (running_mean.to_vec(), running_var.to_vec()),
        };
        let invstd: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = Vec::with_capacity(xs.len());
        let mut y = Vec::with_capacity(xs.len());
        for (i, chunk) in xs.chunks(plane).enumerate() {
            let c = i % s.c;
            for &v in chunk {
                let h = (v - mean[c]) * invstd[c];
                xhat.push(h);
                y.push(g[c] * h + bt[c]);
            }
        }
        let value = Tensor::from_vec(s, y)?;
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                invstd,
                batch_stats: mode == Mode::Train,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Relu(x), |v| v.max(T::zero()))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let a = T::lit(slope);
        self.unary(x, Op::LeakyRelu(x, a), move |v| if v > T::zero() { v } else { a * v })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Softplus(x), softplus)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Abs(x), |v| v.abs())
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        let (a, b) = (T::lit(scale), T::lit(shift));
        self.unary(x, Op::Affine { x, scale: a }, move |v| a * v + b)
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        self.check_recording()?;
        self.same_shape(a, b, what)?;
        self.value(a).zip_map(self.value(b), f)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Multiply each `(n, c)` plane of `x` by `gate[n, c]`, where `gate` is
    /// `(n, c, 1, 1)`.
    pub fn channel_scale(&mut self, x: Var, gate: Var) -> Result<Var> {
        self.check_recording()?;
        let s = self.shape(x);
        let gs = self.shape(gate);
        if gs != Shape::new(s.n, s.c, 1, 1) {
            return Err(Error::shape(format!(
                "channel gate {gs} does not match features {s}"
            )));
        }
        let gv = self.value(gate).data();
        let data = self
            .value(x)
            .data()
            .chunks(s.plane())
            .zip(gv)
            .flat_map(|(chunk, &g)| chunk.iter().map(move |&v| v * g))
            .collect();
        let value = Tensor::from_vec(s, data)?;
        let rg = self.any_grad(&[x, gate]);
        Ok(self.push(value, Op::ChannelScale { x, gate }, rg))
    }

    /// Spatial mean per `(n, c)`, giving `(n, c, 1, 1)`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        self.check_recording()?;
        let s = self.shape(x);
        if s.plane() == 0 {
            return Err(Error::shape(format!("cannot pool empty planes of {s}")));
        }
        let area = T::from_usize(s.plane()).unwrap();
        let data = self
            .value(x)
            .data()
            .chunks(s.plane())
            .map(|chunk| chunk.iter().copied().sum::<T>() / area)
            .collect();
        let value = Tensor::from_vec(Shape::new(s.n, s.c, 1, 1), data)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::GlobalAvgPool(x), rg))
    }

    /// Forward difference along width: `x[.., j+1] - x[.., j]`, shape `(n,c,h,w-1)`.
    pub fn diff_x(&mut self, x: Var) -> Result<Var> {
        self.check_recording()?;
        let s = self.shape(x);
        if s.w < 2 {
            return Err(Error::shape(format!("diff_x needs width >= 2, got {s}")));
        }
        let data = self
            .value(x)
            .data()
            .chunks(s.w)
            .flat_map(|row| row.windows(2).map(|p| p[1] - p[0]))
            .collect();
        let value = Tensor::from_vec(Shape::new(s.n, s.c, s.h, s.w - 1), data)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::DiffX(x), rg))
    }

    /// Forward difference along height, shape `(n,c,h-1,w)`.
    pub fn diff_y(&mut self, x: Var) -> Result<Var> {
        self.check_recording()?;
        let s = self.shape(x);
        if s.h < 2 {
            return Err(Error::shape(format!("diff_y needs height >= 2, got {s}")));
        }
        let xs = self.value(x).data();
        let mut data = Vec::with_capacity(s.n * s.c * (s.h - 1) * s.w);
        for plane in xs.chunks(s.plane()) {
            for r in 0..s.h - 1 {
                let (a, b) = (&plane[r * s.w..(r + 1) * s.w], &plane[(r + 1) * s.w..(r + 2) * s.w]);
                data.extend(a.iter().zip(b).map(|(&u, &v)| v - u));
            }
        }
        let value = Tensor::from_vec(Shape::new(s.n, s.c, s.h - 1, s.w), data)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::DiffY(x), rg))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.check_recording()?;
        let v = self.value(x);
        let m = v.sum() / T::from_usize(v.numel()).unwrap();
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::scalar(m), Op::Mean(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check_recording()?;
        let s = self.value(x).sum();
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::Sum(x), rg))
    }

    /// `Σ weight_k · term_k` over same-shaped terms, accumulated in order.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        self.check_recording()?;
        let first = terms
            .first()
            .ok_or_else(|| Error::invalid("weighted_sum of zero terms"))?
            .0;
        let shape = self.shape(first);
        let mut acc = vec![T::zero(); shape.numel()];
        let mut typed = Vec::with_capacity(terms.len());
        for &(v, w) in terms {
            self.same_shape(first, v, "weighted_sum")?;
            let w = T::lit(w);
            for (a, &x) in acc.iter_mut().zip(self.value(v).data()) {
                *a += w * x;
            }
            typed.push((v, w));
        }
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let rg = self.any_grad(&vars);
        Ok(self.push(Tensor::from_vec(shape, acc)?, Op::WeightedSum(typed), rg))
    }

    /// Gradient of the scalar `loss` with respect to every node that requires
    /// one. Consumes the recording: a second call fails.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::Autograd(
                "backward already ran on this recording; re-run the forward pass".into(),
            ));
        }
        let ls = self.shape(loss);
        if ls.numel() != 1 {
            return Err(Error::Autograd(format!(
                "backward needs a scalar loss, got shape {ls}"
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        let shapes: Vec<Shape> = self.nodes.iter().map(|n| n.value.shape()).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(dy);
                continue;
            }
            self.propagate(i, &dy, &mut grads);
            // Only leaves keep their gradient; interior buffers are freed.
        }
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, g: impl FnOnce() -> Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let g = g();
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }

    fn accumulate_with(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl Fn(usize) -> T) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].value.numel();
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().enumerate().for_each(|(i, a)| *a += f(i)),
            slot @ None => *slot = Some((0..n).map(f).collect()),
        }
    }

    fn propagate(&self, i: usize, dy: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, dims } => {
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                self.accumulate(grads, *x, || conv::backward_data_raw(dy, wv, dims));
                self.accumulate(grads, *w, || conv::backward_weight_raw(xv, dy, dims));
                if let Some(b) = b {
                    self.accumulate(grads, *b, || conv::channel_sum(dy, dims.out_shape()));
                }
            }
            Op::ConvTranspose2d { x, w, b, dims } => {
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                self.accumulate(grads, *x, || conv::forward_raw(dy, wv, dims));
                self.accumulate(grads, *w, || conv::backward_weight_raw(dy, xv, dims));
                if let Some(b) = b {
                    self.accumulate(grads, *b, || conv::channel_sum(dy, dims.in_shape()));
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                invstd,
                batch_stats,
            } => {
                let s = out.shape();
                let plane = s.plane();
                let mut sum_dy = vec![T::zero(); s.c];
                let mut sum_dy_xhat = vec![T::zero(); s.c];
                for (k, (dchunk, hchunk)) in dy.chunks(plane).zip(xhat.chunks(plane)).enumerate() {
                    let c = k % s.c;
                    for (&d, &h) in dchunk.iter().zip(hchunk) {
                        sum_dy[c] += d;
                        sum_dy_xhat[c] += d * h;
                    }
                }
                self.accumulate(grads, *gamma, || sum_dy_xhat.clone());
                self.accumulate(grads, *beta, || sum_dy.clone());
                let g = self.value(*gamma).data();
                let m = T::from_usize(s.n * plane).unwrap();
                let batch_stats = *batch_stats;
                self.accumulate_with(grads, *x, |idx| {
                    let c = (idx / plane) % s.c;
                    let scale = g[c] * invstd[c];
                    if batch_stats {
                        scale * (dy[idx] - sum_dy[c] / m - xhat[idx] * sum_dy_xhat[c] / m)
                    } else {
                        scale * dy[idx]
                    }
                });
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                self.accumulate_with(grads, *x, |k| {
                    if xv[k] > T::zero() {
                        dy[k]
                    } else {
                        T::zero()
                    }
                });
            }
            Op::LeakyRelu(x, a) => {
                let xv = self.value(*x).data();
                self.accumulate_with(grads, *x, |k| {
                    if xv[k] > T::zero() {
                        dy[k]
                    } else {
                        *a * dy[k]
                    }
                });
            }
            Op::Sigmoid(x) => {
                let yv = out.data();
                self.accumulate_with(grads, *x, |k| dy[k] * yv[k] * (T::one() - yv[k]));
            }
            Op::Softplus(x) => {
                let xv = self.value(*x).data();
                self.accumulate_with(grads, *x, |k| dy[k] * sigmoid(xv[k]));
            }
            Op::Abs(x) => {
                let xv = self.value(*x).data();
                self.accumulate_with(grads, *x, |k| {
                    if xv[k] > T::zero() {
                        dy[k]
                    } else if xv[k] < T::zero() {
                        -dy[k]
                    } else {
                        T::zero()
                    }
                });
            }
            Op::Square(x) => {
                let xv = self.value(*x).data();
                let two = T::lit(2.0);
                self.accumulate_with(grads, *x, |k| two * xv[k] * dy[k]);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, || dy.to_vec());
                self.accumulate(grads, *b, || dy.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, || dy.to_vec());
                self.accumulate(grads, *b, || dy.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate_with(grads, *a, |k| dy[k] * bv[k]);
                self.accumulate_with(grads, *b, |k| dy[k] * av[k]);
            }
            Op::ChannelScale { x, gate } => {
                let plane = out.shape().plane();
                let (xv, gv) = (self.value(*x).data(), self.value(*gate).data());
                self.accumulate_with(grads, *x, |k| dy[k] * gv[k / plane]);
                self.accumulate(grads, *gate, || {
                    dy.chunks(plane)
                        .zip(xv.chunks(plane))
                        .map(|(d, v)| d.iter().zip(v).map(|(&a, &b)| a * b).sum())
                        .collect()
                });
            }
            Op::Affine { x, scale } => {
                self.accumulate_with(grads, *x, |k| *scale * dy[k]);
            }
            Op::GlobalAvgPool(x) => {
                let plane = self.shape(*x).plane();
                let area = T::from_usize(plane).unwrap();
                self.accumulate_with(grads, *x, |k| dy[k / plane] / area);
            }
            Op::DiffX(x) => {
                let s = self.shape(*x);
                self.accumulate_with(grads, *x, |k| {
                    let (row, col) = (k / s.w, k % s.w);
                    let base = row * (s.w - 1);
                    let mut g = T::zero();
                    if col > 0 {
                        g += dy[base + col - 1];
                    }
                    if col < s.w - 1 {
                        g -= dy[base + col];
                    }
                    g
                });
            }
            Op::DiffY(x) => {
                let s = self.shape(*x);
                let (plane, oplane) = (s.plane(), (s.h - 1) * s.w);
                self.accumulate_with(grads, *x, |k| {
                    let (p, r, col) = (k / plane, (k % plane) / s.w, k % s.w);
                    let base = p * oplane;
                    let mut g = T::zero();
                    if r > 0 {
                        g += dy[base + (r - 1) * s.w + col];
                    }
                    if r < s.h - 1 {
                        g -= dy[base + r * s.w + col];
                    }
                    g
                });
            }
            Op::Mean(x) => {
                let n = T::from_usize(self.value(*x).numel()).unwrap();
                let g = dy[0] / n;
                self.accumulate_with(grads, *x, |_| g);
            }
            Op::Sum(x) => {
                let g = dy[0];
                self.accumulate_with(grads, *x, |_| g);
            }
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    self.accumulate_with(grads, v, |k| w * dy[k]);
                }
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub(crate) fn softplus<T: Scalar>(v: T) -> T {
    v.max(T::zero()) + (-v.abs()).exp().ln_1p()
}
