//! Wengert-list autodiff tape.
//!
//! Every operator records its output on the tape and returns a [`Var`]
//! handle. [`Tape::backward`] walks the list in reverse once; afterwards the
//! tape is consumed and must be [`reset`](Tape::reset) before reuse.

use serde::{Deserialize, Serialize};

use super::kernels::{self, ConvGeom, NormCache};
use super::{arg_err, check_dims4, shape_err, shuffle_permutation, Real, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Gelu,
    Sigmoid,
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044715;

impl Activation {
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => {
                if x < T::zero() {
                    T::zero()
                } else {
                    x
                }
            }
            Activation::Gelu => {
                let u = T::of(GELU_K) * (x + T::of(GELU_C) * x * x * x);
                T::of(0.5) * x * (T::one() + u.tanh())
            }
            Activation::Sigmoid => {
                if x >= T::zero() {
                    (T::one() + (-x).exp()).recip()
                } else {
                    let e = x.exp();
                    e / (T::one() + e)
                }
            }
        }
    }

    /// Derivative given the input `x` and the forward output `y`.
    fn derivative<T: Real>(self, x: T, y: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Gelu => {
                let k = T::of(GELU_K);
                let c = T::of(GELU_C);
                let t = (k * (x + c * x * x * x)).tanh();
                let half = T::of(0.5);
                half * (T::one() + t)
                    + half * x * (T::one() - t * t) * k * (T::one() + T::of(3.0) * c * x * x)
            }
            Activation::Sigmoid => y * (T::one() - y),
        }
    }
}

/// Lower clamp applied to probabilities inside the BCE loss.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        dilation: usize,
    },
    Depthwise {
        x: Var,
        w: Var,
        b: Var,
        dilation: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        cache: NormCache<T>,
    },
    Activation {
        x: Var,
        kind: Activation,
    },
    ChannelSlice {
        x: Var,
        start: usize,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    Add {
        a: Var,
        b: Var,
    },
    WeightedSum {
        x: Var,
        weights: Vec<T>,
    },
    Bce {
        p: Var,
        targets: Vec<T>,
        mask: Vec<bool>,
        count: usize,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    tracked: bool,
}

#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn reset(&mut self) {
        self.nodes.clear();
        self.consumed = false;
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

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            tracked: requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var, TensorError> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        self.nodes.push(Node { value, op, tracked });
        Ok(Var(self.nodes.len() - 1))
    }

    fn conv_geom(
        &self,
        op: &'static str,
        x: Var,
        kernel: usize,
        dilation: usize,
    ) -> Result<ConvGeom, TensorError> {
        let [batch, height, width, c_in] = check_dims4(op, self.value(x))?;
        if dilation == 0 {
            return Err(arg_err(op, "dilation must be at least 1"));
        }
        if kernel % 2 == 0 {
            return Err(arg_err(op, format!("kernel size {kernel} must be odd")));
        }
        Ok(ConvGeom {
            batch,
            height,
            width,
            c_in,
            kernel,
            dilation,
        })
    }

    /// Dense "same" convolution with weights `[K, K, C_in, C_out]` and bias `[C_out]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, dilation: usize) -> Result<Var, TensorError> {
        let ws = self.value(w).shape().to_vec();
        let [k, k2, c_in, c_out] = ws[..] else {
            return Err(shape_err(
                "conv2d",
                format!("weight must be [K,K,C_in,C_out], got {ws:?}"),
            ));
        };
        if k != k2 {
            return Err(shape_err(
                "conv2d",
                format!("kernel must be square, got {k}x{k2}"),
            ));
        }
        let g = self.conv_geom("conv2d", x, k, dilation)?;
        if g.c_in != c_in {
            return Err(shape_err(
                "conv2d",
                format!("input has {} channels, weight expects {c_in}", g.c_in),
            ));
        }
        if self.value(b).shape() != [c_out] {
            return Err(shape_err(
                "conv2d",
                format!("bias must be [{c_out}], got {:?}", self.value(b).shape()),
            ));
        }
        let out = kernels::conv2d_forward(
            g,
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            c_out,
        );
        let value = Tensor::from_vec(&[g.batch, g.height, g.width, c_out], out)?;
        self.push(value, Op::Conv2d { x, w, b, dilation }, &[x, w, b])
    }

    /// Depthwise "same" convolution with weights `[K, K, C_in, D_m]` and bias `[C_in * D_m]`.
    pub fn depthwise_conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        dilation: usize,
    ) -> Result<Var, TensorError> {
        let ws = self.value(w).shape().to_vec();
        let [k, k2, c_in, mult] = ws[..] else {
            return Err(shape_err(
                "depthwise_conv2d",
                format!("weight must be [K,K,C_in,D_m], got {ws:?}"),
            ));
        };
        if k != k2 || mult == 0 {
            return Err(shape_err(
                "depthwise_conv2d",
                format!("bad weight shape {ws:?}"),
            ));
        }
        let g = self.conv_geom("depthwise_conv2d", x, k, dilation)?;
        if g.c_in != c_in {
            return Err(shape_err(
                "depthwise_conv2d",
                format!("input has {} channels, weight expects {c_in}", g.c_in),
            ));
        }
        if self.value(b).shape() != [c_in * mult] {
            return Err(shape_err(
                "depthwise_conv2d",
                format!(
                    "bias must be [{}], got {:?}",
                    c_in * mult,
                    self.value(b).shape()
                ),
            ));
        }
        let out = kernels::depthwise_forward(
            g,
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            mult,
        );
        let value = Tensor::from_vec(&[g.batch, g.height, g.width, c_in * mult], out)?;
        self.push(value, Op::Depthwise { x, w, b, dilation }, &[x, w, b])
    }

    /// Depthwise spatial filtering followed by a 1x1 pointwise convolution.
    pub fn depthwise_separable_conv2d(
        &mut self,
        x: Var,
        dw: Var,
        dw_bias: Var,
        pw: Var,
        pw_bias: Var,
        dilation: usize,
    ) -> Result<Var, TensorError> {
        let pws = self.value(pw).shape();
        if pws.len() != 4 || pws[0] != 1 || pws[1] != 1 {
            return Err(shape_err(
                "depthwise_separable_conv2d",
                format!("pointwise weight must be [1,1,C,C_out], got {pws:?}"),
            ));
        }
        let mid = self.depthwise_conv2d(x, dw, dw_bias, dilation)?;
        self.conv2d(mid, pw, pw_bias, 1)
    }

    /// Normalizes each position over the channel axis, then applies `gamma`/`beta`.
    pub fn layer_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<Var, TensorError> {
        if eps.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(arg_err("layer_norm", "eps must be positive"));
        }
        let c = check_dims4("layer_norm", self.value(x))?[3];
        for p in [gamma, beta] {
            if self.value(p).shape() != [c] {
                return Err(shape_err(
                    "layer_norm",
                    format!(
                        "affine parameters must be [{c}], got {:?}",
                        self.value(p).shape()
                    ),
                ));
            }
        }
        let (out, cache) = kernels::layer_norm_forward(
            self.value(x).data(),
            c,
            self.value(gamma).data(),
            self.value(beta).data(),
            T::of(eps),
        );
        let value = Tensor::from_vec(self.value(x).shape(), out)?;
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                cache,
            },
            &[x, gamma, beta],
        )
    }

    pub fn activation(&mut self, kind: Activation, x: Var) -> Result<Var, TensorError> {
        let value = self.value(x).map(|v| kind.apply(v));
        self.push(value, Op::Activation { x, kind }, &[x])
    }

    /// Channels `[start, end)` of a feature map.
    pub fn channel_slice(&mut self, x: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let [b, h, w, c] = check_dims4("channel_slice", self.value(x))?;
        if start > end || end > c {
            return Err(arg_err(
                "channel_slice",
                format!("range {start}..{end} outside 0..{c}"),
            ));
        }
        let width = end - start;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(b * h * w * width);
        for px in src.chunks_exact(c.max(1)).take(b * h * w) {
            out.extend_from_slice(&px[start..end]);
        }
        let value = Tensor::from_vec(&[b, h, w, width], out)?;
        self.push(value, Op::ChannelSlice { x, start }, &[x])
    }

    /// Splits channels into `[0, c_prime)` and `[c_prime, C)`.
    pub fn channel_split(&mut self, x: Var, c_prime: usize) -> Result<(Var, Var), TensorError> {
        let c = check_dims4("channel_split", self.value(x))?[3];
        if c_prime == 0 || c_prime >= c {
            return Err(arg_err(
                "channel_split",
                format!("split point {c_prime} must lie strictly inside 0..{c}"),
            ));
        }
        let first = self.channel_slice(x, 0, c_prime)?;
        let second = self.channel_slice(x, c_prime, c)?;
        Ok((first, second))
    }

    /// Stacks the channels of `a` followed by those of `b`.
    pub fn channel_concat(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let [n, h, w, ca] = check_dims4("channel_concat", self.value(a))?;
        let [n2, h2, w2, cb] = check_dims4("channel_concat", self.value(b))?;
        if (n, h, w) != (n2, h2, w2) {
            return Err(shape_err(
                "channel_concat",
                format!(
                    "extents differ: {:?} vs {:?}",
                    self.value(a).shape(),
                    self.value(b).shape()
                ),
            ));
        }
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(n * h * w * (ca + cb));
        for p in 0..n * h * w {
            out.extend_from_slice(&da[p * ca..(p + 1) * ca]);
            out.extend_from_slice(&db[p * cb..(p + 1) * cb]);
        }
        let value = Tensor::from_vec(&[n, h, w, ca + cb], out)?;
        self.push(value, Op::Concat { a, b }, &[a, b])
    }

    /// Output channel `i` takes input channel `perm[i]`.
    pub fn channel_permute(&mut self, x: Var, perm: Vec<usize>) -> Result<Var, TensorError> {
        let [_, _, _, c] = check_dims4("channel_permute", self.value(x))?;
        let mut seen = vec![false; c];
        if perm.len() != c
            || perm
                .iter()
                .any(|&p| p >= c || std::mem::replace(&mut seen[p], true))
        {
            return Err(arg_err(
                "channel_permute",
                format!("not a permutation of {c} channels"),
            ));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(src.len());
        for px in src.chunks_exact(c.max(1)) {
            out.extend(perm.iter().map(|&p| px[p]));
        }
        let value = Tensor::from_vec(self.value(x).shape(), out)?;
        self.push(value, Op::Permute { x, perm }, &[x])
    }

    pub fn channel_shuffle(&mut self, x: Var, groups: usize) -> Result<Var, TensorError> {
        let c = check_dims4("channel_shuffle", self.value(x))?[3];
        let perm = shuffle_permutation(c, groups)?;
        self.channel_permute(x, perm)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(shape_err(
                "add",
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        self.push(value, Op::Add { a, b }, &[a, b])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let weights = vec![T::one(); self.value(x).len()];
        self.weighted_sum(x, weights)
    }

    /// Scalar `sum_i x_i * weights_i` for constant weights.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<T>) -> Result<Var, TensorError> {
        if weights.len() != self.value(x).len() {
            return Err(shape_err(
                "weighted_sum",
                format!(
                    "{} weights for {} elements",
                    weights.len(),
                    self.value(x).len()
                ),
            ));
        }
        let s = self
            .value(x)
            .data()
            .iter()
            .zip(&weights)
            .map(|(&a, &w)| a * w)
            .sum();
        self.push(Tensor::scalar(s), Op::WeightedSum { x, weights }, &[x])
    }

    /// Mean binary cross-entropy over masked elements.
    ///
    /// Probabilities are clamped to `[1e-7, 1 - 1e-7]`; clamped elements
    /// contribute no gradient.
    pub fn bce_loss(&mut self, p: Var, targets: &[T], mask: &[bool]) -> Result<Var, TensorError> {
        let n = self.value(p).len();
        if targets.len() != n || mask.len() != n {
            return Err(shape_err(
                "bce_loss",
                format!(
                    "{n} probabilities, {} targets, {} mask entries",
                    targets.len(),
                    mask.len()
                ),
            ));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(TensorError::EmptyMask);
        }
        let lo = T::of(BCE_CLAMP);
        let hi = T::one() - lo;
        let mut total = T::zero();
        for ((&pv, &t), &m) in self.value(p).data().iter().zip(targets).zip(mask) {
            if m {
                let q = if pv.is_nan() { pv } else { pv.max(lo).min(hi) };
                total -= t * q.ln() + (T::one() - t) * (T::one() - q).ln();
            }
        }
        let loss = total / T::of(count as f64);
        self.push(
            Tensor::scalar(loss),
            Op::Bce {
                p,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                count,
            },
            &[p],
        )
    }

    /// Reverse pass from a scalar `loss`; consumes the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>, TensorError> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        let shape = self.value(loss).shape().to_vec();
        if self.value(loss).len() != 1 {
            return Err(TensorError::NonScalarLoss(shape));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(&shape, T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(
        &self,
        op: &Op<T>,
        out: &Tensor<T>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let nodes = &self.nodes;
        let tracked = |v: Var| nodes[v.0].tracked;
        let val = |v: Var| &nodes[v.0].value;
        match op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, dilation } => {
                let [batch, height, width, c_in] = val(*x).dims4().expect("checked in forward");
                let ws = val(*w).shape();
                let geom = ConvGeom {
                    batch,
                    height,
                    width,
                    c_in,
                    kernel: ws[0],
                    dilation: *dilation,
                };
                let r = kernels::conv2d_backward(
                    geom,
                    val(*x).data(),
                    val(*w).data(),
                    ws[3],
                    g.data(),
                    [tracked(*x), tracked(*w), tracked(*b)],
                );
                accumulate_raw(grads, nodes, *x, r.input);
                accumulate_raw(grads, nodes, *w, r.weight);
                accumulate_raw(grads, nodes, *b, r.bias);
            }
            Op::Depthwise { x, w, b, dilation } => {
                let [batch, height, width, c_in] = val(*x).dims4().expect("checked in forward");
                let ws = val(*w).shape();
                let geom = ConvGeom {
                    batch,
                    height,
                    width,
                    c_in,
                    kernel: ws[0],
                    dilation: *dilation,
                };
                let r = kernels::depthwise_backward(
                    geom,
                    val(*x).data(),
                    val(*w).data(),
                    ws[3],
                    g.data(),
                    [tracked(*x), tracked(*w), tracked(*b)],
                );
                accumulate_raw(grads, nodes, *x, r.input);
                accumulate_raw(grads, nodes, *w, r.weight);
                accumulate_raw(grads, nodes, *b, r.bias);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                cache,
            } => {
                let c = val(*gamma).len();
                let (dx, dg, db) =
                    kernels::layer_norm_backward(cache, c, val(*gamma).data(), g.data());
                accumulate_raw(grads, nodes, *x, Some(dx));
                accumulate_raw(grads, nodes, *gamma, Some(dg));
                accumulate_raw(grads, nodes, *beta, Some(db));
            }
            Op::Activation { x, kind } => {
                let dx = val(*x)
                    .data()
                    .iter()
                    .zip(out.data())
                    .zip(g.data())
                    .map(|((&xv, &yv), &gv)| gv * kind.derivative(xv, yv))
                    .collect();
                accumulate_raw(grads, nodes, *x, Some(dx));
            }
            Op::ChannelSlice { x, start } => {
                let c = val(*x).channels();
                let width = g.channels();
                let mut dx = vec![T::zero(); val(*x).len()];
                if width > 0 {
                    for (p, gp) in g.data().chunks_exact(width).enumerate() {
                        dx[p * c + start..p * c + start + width].copy_from_slice(gp);
                    }
                }
                accumulate_raw(grads, nodes, *x, Some(dx));
            }
            Op::Concat { a, b } => {
                let (ca, cb) = (val(*a).channels(), val(*b).channels());
                let mut da = Vec::with_capacity(val(*a).len());
                let mut db = Vec::with_capacity(val(*b).len());
                for gp in g.data().chunks_exact((ca + cb).max(1)) {
                    da.extend_from_slice(&gp[..ca]);
                    db.extend_from_slice(&gp[ca..]);
                }
                accumulate_raw(grads, nodes, *a, Some(da));
                accumulate_raw(grads, nodes, *b, Some(db));
            }
            Op::Permute { x, perm } => {
                let c = perm.len();
                let mut dx = vec![T::zero(); g.len()];
                for (gp, dp) in g.data().chunks_exact(c).zip(dx.chunks_exact_mut(c)) {
                    for (i, &p) in perm.iter().enumerate() {
                        dp[p] = gp[i];
                    }
                }
                accumulate_raw(grads, nodes, *x, Some(dx));
            }
            Op::Add { a, b } => {
                accumulate_raw(grads, nodes, *a, Some(g.data().to_vec()));
                accumulate_raw(grads, nodes, *b, Some(g.data().to_vec()));
            }
            Op::WeightedSum { x, weights } => {
                let s = g.data()[0];
                accumulate_raw(
                    grads,
                    nodes,
                    *x,
                    Some(weights.iter().map(|&w| w * s).collect()),
                );
            }
            Op::Bce {
                p,
                targets,
                mask,
                count,
            } => {
                let s = g.data()[0] / T::of(*count as f64);
                let lo = T::of(BCE_CLAMP);
                let hi = T::one() - lo;
                let dp = val(*p)
                    .data()
                    .iter()
                    .zip(targets)
                    .zip(mask)
                    .map(|((&pv, &t), &m)| {
                        if !m || pv < lo || pv > hi {
                            T::zero()
                        } else {
                            s * ((T::one() - t) / (T::one() - pv) - t / pv)
                        }
                    })
                    .collect();
                accumulate_raw(grads, nodes, *p, Some(dp));
            }
        }
    }
}

fn accumulate_raw<T: Real>(
    grads: &mut [Option<Tensor<T>>],
    nodes: &[Node<T>],
    v: Var,
    delta: Option<Vec<T>>,
) {
    let Some(delta) = delta else { return };
    if !nodes[v.0].tracked {
        return;
    }
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, d) in existing.data_mut().iter_mut().zip(delta) {
                *a += d;
            }
        }
        slot @ None => {
            *slot = Some(
                Tensor::from_vec(nodes[v.0].value.shape(), delta)
                    .expect("gradient matches value shape"),
            );
        }
    }
}
