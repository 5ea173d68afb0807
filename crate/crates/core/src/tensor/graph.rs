use rand::Rng;

use super::kernels::{self, ConvGeometry};
use super::{ParamId, ParamStore, Real, Tensor};
use crate::error::{Error, Result};

pub const BN_EPSILON: f64 = 1e-5;
/// Weight of the old running statistic in each update.
pub const BN_MOMENTUM: f64 = 0.99;

const BCE_CLAMP: f64 = 1e-7;

/// Handle to a node recorded in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }
}

/// Per-channel running mean/variance of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T: Real = f32> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

enum Op<T> {
    Leaf {
        param: Option<ParamId>,
    },
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeometry,
        c_out: usize,
    },
    Deconv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeometry,
        c_in: usize,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    AvgPool {
        x: Var,
        geom: ConvGeometry,
    },
    Upsample {
        x: Var,
        dims: [usize; 4],
        factor: usize,
    },
    Concat {
        a: Var,
        b: Var,
        ca: usize,
        cb: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Act {
        x: Var,
        kind: Activation,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Bce {
        pred: Var,
        target: Vec<T>,
    },
    Sum {
        x: Var,
    },
    WeightedSum {
        x: Var,
        weights: Vec<T>,
    },
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Tape of executed operations. Nodes are appended in execution order, so
/// the node list is already topologically sorted.
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
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

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool, what: &str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(what.to_string()));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, false)
    }

    /// Free leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn leaf(&mut self, t: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: t.with_requires_grad(requires_grad),
            op: Op::Leaf { param: None },
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a parameter's current value as a leaf tied back to `id`.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let mut value = store.get(id).tensor.clone();
        value.set_grad(None);
        self.nodes.push(Node {
            value,
            op: Op::Leaf { param: Some(id) },
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: Padding) -> Result<Var> {
        let [n, h, wd, c] = self.value(x).nhwc()?;
        let [kh, kw, cin, cout] = kernel_dims(self.value(w))?;
        if cin != c {
            return Err(Error::shape(format!("conv2d: input has {c} channels, kernel expects {cin}")));
        }
        self.check_bias(b, cout)?;
        let geom = match padding {
            Padding::Same => ConvGeometry::same(n, h, wd, c, kh, kw, stride)?,
            Padding::Valid => ConvGeometry::valid(n, h, wd, c, kh, kw, stride)?,
        };
        let out = kernels::conv_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geom,
            cout,
        );
        let value = Tensor::new(vec![n, geom.out_h, geom.out_w, cout], out)?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(value, Op::Conv { x, w, b, geom, c_out: cout }, rg, "conv2d")
    }

    /// Transposed convolution producing `H·stride × W·stride` outputs; the
    /// exact adjoint of a same-padded [`Graph::conv2d`] with the same kernel.
    pub fn deconv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        if stride < 1 {
            return Err(Error::config("deconv2d: stride must be at least 1"));
        }
        let [n, h, wd, c] = self.value(x).nhwc()?;
        let [kh, kw, cin, cout] = kernel_dims(self.value(w))?;
        if cin != c {
            return Err(Error::shape(format!("deconv2d: input has {c} channels, kernel expects {cin}")));
        }
        self.check_bias(b, cout)?;
        let geom = ConvGeometry::same(n, h * stride, wd * stride, cout, kh, kw, stride)?;
        debug_assert_eq!((geom.out_h, geom.out_w), (h, wd));
        let out = kernels::deconv_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geom,
            cin,
        );
        let value = Tensor::new(vec![n, h * stride, wd * stride, cout], out)?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(value, Op::Deconv { x, w, b, geom, c_in: cin }, rg, "deconv2d")
    }

    fn check_bias(&self, b: Option<Var>, cout: usize) -> Result<()> {
        if let Some(b) = b {
            if self.value(b).len() != cout {
                return Err(Error::shape(format!(
                    "bias has {} entries for {cout} output channels",
                    self.value(b).len()
                )));
            }
        }
        Ok(())
    }

    fn pool_geometry(&self, x: Var, window: usize, stride: usize, padding: Padding) -> Result<ConvGeometry> {
        let [n, h, w, c] = self.value(x).nhwc()?;
        if window < 1 {
            return Err(Error::config("pool window must be at least 1"));
        }
        if window > h || window > w {
            return Err(Error::shape(format!("{window}×{window} pool window exceeds {h}×{w} input")));
        }
        match padding {
            Padding::Same => ConvGeometry::same(n, h, w, c, window, window, stride),
            Padding::Valid => ConvGeometry::valid(n, h, w, c, window, window, stride),
        }
    }

    pub fn maxpool2d(&mut self, x: Var, window: usize, stride: usize, padding: Padding) -> Result<Var> {
        let geom = self.pool_geometry(x, window, stride, padding)?;
        let (out, argmax) = kernels::maxpool_forward(self.value(x).data(), &geom);
        let value = Tensor::new(vec![geom.batch, geom.out_h, geom.out_w, geom.channels], out)?;
        let rg = self.rg(x);
        self.push(value, Op::MaxPool { x, argmax }, rg, "maxpool2d")
    }

    pub fn avgpool2d(&mut self, x: Var, window: usize, stride: usize, padding: Padding) -> Result<Var> {
        let geom = self.pool_geometry(x, window, stride, padding)?;
        let out = kernels::avgpool_forward(self.value(x).data(), &geom);
        let value = Tensor::new(vec![geom.batch, geom.out_h, geom.out_w, geom.channels], out)?;
        let rg = self.rg(x);
        self.push(value, Op::AvgPool { x, geom }, rg, "avgpool2d")
    }

    pub fn upsample2d_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor < 1 {
            return Err(Error::config("upsample factor must be at least 1"));
        }
        let dims = self.value(x).nhwc()?;
        let [n, h, w, c] = dims;
        let out = kernels::upsample_forward(self.value(x).data(), dims, factor);
        let value = Tensor::new(vec![n, h * factor, w * factor, c], out)?;
        let rg = self.rg(x);
        self.push(value, Op::Upsample { x, dims, factor }, rg, "upsample2d")
    }

    /// Channel concatenation, `a`'s channels first.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let [n, h, w, ca] = self.value(a).nhwc()?;
        let [nb, hb, wb, cb] = self.value(b).nhwc()?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(Error::shape(format!(
                "concat: {n}×{h}×{w} does not match {nb}×{hb}×{wb}"
            )));
        }
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(da.len() + db.len());
        for px in 0..n * h * w {
            out.extend_from_slice(&da[px * ca..(px + 1) * ca]);
            out.extend_from_slice(&db[px * cb..(px + 1) * cb]);
        }
        let value = Tensor::new(vec![n, h, w, ca + cb], out)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Concat { a, b, ca, cb }, rg, "concat")
    }

    /// Batch normalization over N·H·W per channel. In train mode the batch
    /// statistics are used and folded into `stats`; in eval mode `stats` is
    /// used as-is.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats<T>,
        mode: Mode,
        epsilon: f64,
    ) -> Result<Var> {
        let [n, h, w, c] = self.value(x).nhwc()?;
        if self.value(gamma).len() != c || self.value(beta).len() != c || stats.mean.len() != c {
            return Err(Error::shape(format!("batchnorm: parameters do not match {c} channels")));
        }
        let count = n * h * w;
        if count == 0 {
            return Err(Error::config("batchnorm on an empty batch"));
        }
        let data = self.value(x).data();
        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0f64; c];
                for px in data.chunks_exact(c) {
                    for (m, v) in mean.iter_mut().zip(px) {
                        *m += v.as_f64();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count as f64);
                let mut var = vec![0.0f64; c];
                for px in data.chunks_exact(c) {
                    for ((s, v), m) in var.iter_mut().zip(px).zip(&mean) {
                        let d = v.as_f64() - m;
                        *s += d * d;
                    }
                }
                var.iter_mut().for_each(|s| *s /= count as f64);
                for ch in 0..c {
                    stats.mean[ch] = T::from_f64(BN_MOMENTUM * stats.mean[ch].as_f64() + (1.0 - BN_MOMENTUM) * mean[ch]);
                    stats.var[ch] = T::from_f64(BN_MOMENTUM * stats.var[ch].as_f64() + (1.0 - BN_MOMENTUM) * var[ch]);
                }
                (mean, var)
            }
            Mode::Eval => (
                stats.mean.iter().map(|v| v.as_f64()).collect(),
                stats.var.iter().map(|v| v.as_f64()).collect::<Vec<_>>(),
            ),
        };
        let inv_std: Vec<T> = var.iter().map(|v| T::from_f64(1.0 / (v + epsilon).sqrt())).collect();
        let mean: Vec<T> = mean.into_iter().map(T::from_f64).collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = Vec::with_capacity(data.len());
        let mut out = Vec::with_capacity(data.len());
        for px in data.chunks_exact(c) {
            for ch in 0..c {
                let xh = (px[ch] - mean[ch]) * inv_std[ch];
                xhat.push(xh);
                out.push(g[ch] * xh + b[ch]);
            }
        }
        let value = Tensor::new(vec![n, h, w, c], out)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            batch_stats: mode == Mode::Train,
        };
        self.push(value, op, rg, "batchnorm")
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let src = self.value(x);
        let out = src.data().iter().map(|v| T::from_f64(kind.apply(v.as_f64()))).collect();
        let value = Tensor::new(src.shape().to_vec(), out)?;
        let rg = self.rg(x);
        self.push(value, Op::Act { x, kind }, rg, "activation")
    }

    /// Inverted dropout: survivors are scaled by `1/(1-rate)` in train mode;
    /// eval mode is the identity.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::from_f64(1.0 / (1.0 - rate));
        let src = self.value(x);
        let mask: Vec<T> = (0..src.len())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let out = src.data().iter().zip(&mask).map(|(v, m)| *v * *m).collect();
        let value = Tensor::new(src.shape().to_vec(), out)?;
        let rg = self.rg(x);
        self.push(value, Op::Dropout { x, mask }, rg, "dropout")
    }

    /// Mean binary cross-entropy between probabilities and {0,1} targets.
    pub fn bce_loss(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(Error::shape(format!(
                "bce_loss: prediction {:?} vs target {:?}",
                p.shape(),
                target.shape()
            )));
        }
        let n = p.len().max(1) as f64;
        let total: f64 = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| {
                let p = p.as_f64().clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                let t = t.as_f64();
                -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
            })
            .sum();
        let value = Tensor::scalar(T::from_f64(total / n));
        let rg = self.rg(pred);
        let op = Op::Bce {
            pred,
            target: target.data().to_vec(),
        };
        self.push(value, op, rg, "bce_loss")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total: f64 = self.value(x).data().iter().map(|v| v.as_f64()).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(T::from_f64(total)), Op::Sum { x }, rg, "sum")
    }

    /// `Σ xᵢ·wᵢ` against constant weights.
    pub fn weighted_sum(&mut self, x: Var, weights: &Tensor<T>) -> Result<Var> {
        let src = self.value(x);
        if src.len() != weights.len() {
            return Err(Error::shape(format!(
                "weighted_sum: {} values vs {} weights",
                src.len(),
                weights.len()
            )));
        }
        let total: f64 = src
            .data()
            .iter()
            .zip(weights.data())
            .map(|(a, b)| a.as_f64() * b.as_f64())
            .sum();
        let rg = self.rg(x);
        let op = Op::WeightedSum {
            x,
            weights: weights.data().to_vec(),
        };
        self.push(Tensor::scalar(T::from_f64(total)), op, rg, "weighted_sum")
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &gy, &mut grads);
            grads[idx] = Some(gy);
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient of node {i}")));
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Runs [`Graph::backward`] and adds parameter gradients into `store`.
    /// Parameters recorded in the graph but not reachable from `loss` get an
    /// explicit zero gradient.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        let grads = self.backward(loss)?;
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(id) } = node.op {
                let zeros;
                let g = match grads.grads[idx].as_deref() {
                    Some(g) => g,
                    None => {
                        zeros = vec![T::zero(); node.value.len()];
                        &zeros
                    }
                };
                store.get_mut(id).tensor.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    fn propagate(&self, node: &Node<T>, gy: &[T], grads: &mut [Option<Vec<T>>]) {
        let mut add = |v: Var, delta: Vec<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(g) => g.iter_mut().zip(&delta).for_each(|(a, b)| *a = *a + *b),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf { .. } => {}
            Op::Conv { x, w, b, geom, c_out } => {
                let need = (self.rg(*x), self.rg(*w), b.is_some_and(|b| self.rg(b)));
                let g = kernels::conv_backward(self.value(*x).data(), self.value(*w).data(), gy, geom, *c_out, need);
                if let Some(d) = g.input {
                    add(*x, d);
                }
                if let Some(d) = g.weight {
                    add(*w, d);
                }
                if let (Some(b), Some(d)) = (b, g.bias) {
                    add(*b, d);
                }
            }
            Op::Deconv { x, w, b, geom, c_in } => {
                let need = (self.rg(*x), self.rg(*w), b.is_some_and(|b| self.rg(b)));
                let g = kernels::deconv_backward(self.value(*x).data(), self.value(*w).data(), gy, geom, *c_in, need);
                if let Some(d) = g.input {
                    add(*x, d);
                }
                if let Some(d) = g.weight {
                    add(*w, d);
                }
                if let (Some(b), Some(d)) = (b, g.bias) {
                    add(*b, d);
                }
            }
            Op::MaxPool { x, argmax } => {
                let mut dx = vec![T::zero(); self.value(*x).len()];
                for (g, &i) in gy.iter().zip(argmax) {
                    dx[i] = dx[i] + *g;
                }
                add(*x, dx);
            }
            Op::AvgPool { x, geom } => add(*x, kernels::avgpool_backward(gy, geom)),
            Op::Upsample { x, dims, factor } => add(*x, kernels::upsample_backward(gy, *dims, *factor)),
            Op::Concat { a, b, ca, cb } => {
                let c = ca + cb;
                let mut da = Vec::with_capacity(gy.len() / c.max(1) * ca);
                let mut db = Vec::with_capacity(gy.len() / c.max(1) * cb);
                if c > 0 {
                    for px in gy.chunks_exact(c) {
                        da.extend_from_slice(&px[..*ca]);
                        db.extend_from_slice(&px[*ca..]);
                    }
                }
                add(*a, da);
                add(*b, db);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let c = inv_std.len();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for (gp, xp) in gy.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                    for ch in 0..c {
                        dgamma[ch] = dgamma[ch] + gp[ch] * xp[ch];
                        dbeta[ch] = dbeta[ch] + gp[ch];
                    }
                }
                if self.rg(*x) {
                    let g = self.value(*gamma).data();
                    let count = T::from_usize(gy.len() / c);
                    let mut dx = Vec::with_capacity(gy.len());
                    for (gp, xp) in gy.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                        for ch in 0..c {
                            let v = if *batch_stats {
                                g[ch] * inv_std[ch] * (count * gp[ch] - dbeta[ch] - xp[ch] * dgamma[ch]) / count
                            } else {
                                g[ch] * inv_std[ch] * gp[ch]
                            };
                            dx.push(v);
                        }
                    }
                    add(*x, dx);
                }
                add(*gamma, dgamma);
                add(*beta, dbeta);
            }
            Op::Act { x, kind } => {
                let xs = self.value(*x).data();
                let ys = node.value.data();
                let dx = gy
                    .iter()
                    .zip(xs.iter().zip(ys))
                    .map(|(g, (x, y))| {
                        let d = match kind {
                            Activation::Elu => {
                                if *x > T::zero() {
                                    T::one()
                                } else {
                                    *y + T::one()
                                }
                            }
                            Activation::Relu => {
                                if *x > T::zero() {
                                    T::one()
                                } else {
                                    T::zero()
                                }
                            }
                            Activation::Sigmoid => *y * (T::one() - *y),
                        };
                        *g * d
                    })
                    .collect();
                add(*x, dx);
            }
            Op::Dropout { x, mask } => add(*x, gy.iter().zip(mask).map(|(g, m)| *g * *m).collect()),
            Op::Bce { pred, target } => {
                let p = self.value(*pred).data();
                let n = T::from_usize(p.len().max(1));
                let lo = T::from_f64(BCE_CLAMP);
                let hi = T::from_f64(1.0 - BCE_CLAMP);
                let dx = p
                    .iter()
                    .zip(target)
                    .map(|(p, t)| {
                        if *p < lo || *p > hi {
                            T::zero()
                        } else {
                            gy[0] * (*p - *t) / (*p * (T::one() - *p)) / n
                        }
                    })
                    .collect();
                add(*pred, dx);
            }
            Op::Sum { x } => add(*x, vec![gy[0]; self.value(*x).len()]),
            Op::WeightedSum { x, weights } => add(*x, weights.iter().map(|w| *w * gy[0]).collect()),
        }
    }
}

fn kernel_dims<T: Real>(w: &Tensor<T>) -> Result<[usize; 4]> {
    match w.shape()[..] {
        [kh, kw, ci, co] => Ok([kh, kw, ci, co]),
        _ => Err(Error::shape(format!("kernel must be Kh×Kw×Cin×Cout, got {:?}", w.shape()))),
    }
}

/// Result of a reverse pass: one optional gradient per graph node.
pub struct Gradients<T: Real> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}
