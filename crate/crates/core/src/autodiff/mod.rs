//! Reverse-mode automatic differentiation over a Wengert tape.
//!
//! Every forward op appends a node holding its output value and the ids of
//! its inputs. [`Tape::backward`] walks the tape in reverse and returns the
//! gradient of a scalar loss with respect to every node that requires one.
//! A tape is single-use: build it, run backward once (or more), drop it.

mod conv;

pub use conv::ConvGeom;

use crate::error::{Error, ShapeError};
use crate::tensor::{gemm, MatRef, Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Offset(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Relu(Var),
    LeakyRelu(Var, T),
    Sigmoid(Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    Conv2d { x: Var, k: Var, g: ConvGeom },
    ConvTranspose2d { x: Var, k: Var, g: ConvGeom },
    ChannelBias { x: Var, b: Var },
    Reshape(Var),
    ConcatChannels(Vec<Var>),
    Columns { x: Var, start: usize },
    SumAll(Var),
    MeanAll(Var),
    MeanRows(Var),
    PNorm { x: Var, n: T },
    SmoothL1 { a: Var, b: Var },
    Huber { a: Var, b: Var, delta: T },
    Bce { p: Var, t: Var, per_row_sum: bool },
    CrossEntropy { logits: Var, targets: Vec<usize> },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Probability clamp for the binary cross-entropy losses.
const BCE_EPS: f64 = 1e-6;

/// Recorded computation.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn same_shape(a: &[usize], b: &[usize], what: &str) -> Result<(), ShapeError> {
    if a != b {
        return Err(ShapeError::new(format!("{what}: {a:?} vs {b:?}")));
    }
    Ok(())
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

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn unary(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let value = self.value(x).map(f);
        self.push(value, op, &[x])
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        op: Op<T>,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var, ShapeError> {
        same_shape(self.shape(a), self.shape(b), "elementwise operands")?;
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(va.shape(), data)?;
        Ok(self.push(value, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        self.unary(x, Op::Scale(x, s), |v| v * s)
    }

    pub fn offset(&mut self, x: Var, c: T) -> Var {
        self.unary(x, Op::Offset(x), |v| v + c)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), |v| v.exp())
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Op::Log(x), |v| v.ln())
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    /// Rectifier; the subgradient at 0 is taken from the negative side (0).
    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(
            x,
            Op::Relu(x),
            |v| if v > T::zero() { v } else { T::zero() },
        )
    }

    /// Leaky rectifier; the subgradient at 0 is `slope`.
    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        self.unary(x, Op::LeakyRelu(x, slope), |v| {
            if v > T::zero() {
                v
            } else {
                v * slope
            }
        })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    /// `x[N,I] * w[O,I]^T + b[O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, ShapeError> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(ShapeError::new(format!(
                "linear: input {xs:?} vs weight {ws:?}"
            )));
        }
        let (n, o) = (xs[0], ws[0]);
        let mut out = vec![T::zero(); n * o];
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.shape() != [o] {
                return Err(ShapeError::new(format!(
                    "linear: bias {:?} vs {o} outputs",
                    bv.shape()
                )));
            }
            for row in out.chunks_mut(o) {
                row.copy_from_slice(bv.data());
            }
        }
        gemm(
            MatRef::new(self.value(x).data(), n, xs[1]),
            MatRef::t(self.value(w).data(), xs[1], o),
            if b.is_some() { T::one() } else { T::zero() },
            &mut out,
        );
        let value = Tensor::new(&[n, o], out)?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(value, Op::Linear { x, w, b }, &inputs))
    }

    /// Convolution of `x[N,C,H,W]` with `k[F,C,kh,kw]` (square kernels).
    pub fn conv2d(
        &mut self,
        x: Var,
        k: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var, ShapeError> {
        let (xs, ks) = (self.shape(x).to_vec(), self.shape(k).to_vec());
        if xs.len() != 4 || ks.len() != 4 || ks[2] != ks[3] {
            return Err(ShapeError::new(format!(
                "conv2d: input {xs:?}, kernel {ks:?}"
            )));
        }
        if xs[1] != ks[1] {
            return Err(ShapeError::new(format!(
                "conv2d: input has {} channels, kernel expects {}",
                xs[1], ks[1]
            )));
        }
        let g = ConvGeom::new(ks[2], stride, padding);
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let f = ks[0];
        let (oh, ow) = (g.conv_out(h)?, g.conv_out(w)?);
        let (ckk, p) = (c * g.kernel * g.kernel, oh * ow);
        let mut out = vec![T::zero(); n * f * p];
        let mut cols = if g.is_pointwise() {
            Vec::new()
        } else {
            vec![T::zero(); ckk * p]
        };
        {
            let xd = self.value(x).data();
            let kd = self.value(k).data();
            for i in 0..n {
                let xi = &xd[i * c * h * w..(i + 1) * c * h * w];
                let cols: &[T] = if g.is_pointwise() {
                    xi
                } else {
                    conv::im2col(xi, c, h, w, g, oh, ow, &mut cols);
                    &cols
                };
                gemm(
                    MatRef::new(kd, f, ckk),
                    MatRef::new(cols, ckk, p),
                    T::zero(),
                    &mut out[i * f * p..(i + 1) * f * p],
                );
            }
        }
        let value = Tensor::new(&[n, f, oh, ow], out)?;
        Ok(self.push(value, Op::Conv2d { x, k, g }, &[x, k]))
    }

    /// Transposed convolution of `x[N,Cin,H,W]` with `k[Cin,Cout,kh,kw]`:
    /// the adjoint of [`Tape::conv2d`] with the same kernel and geometry.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        k: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var, ShapeError> {
        let (xs, ks) = (self.shape(x).to_vec(), self.shape(k).to_vec());
        if xs.len() != 4 || ks.len() != 4 || ks[2] != ks[3] {
            return Err(ShapeError::new(format!(
                "conv_transpose2d: input {xs:?}, kernel {ks:?}"
            )));
        }
        if xs[1] != ks[0] {
            return Err(ShapeError::new(format!(
                "conv_transpose2d: input has {} channels, kernel expects {}",
                xs[1], ks[0]
            )));
        }
        let g = ConvGeom::new(ks[2], stride, padding);
        let (n, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let cout = ks[1];
        let (oh, ow) = (g.transpose_out(h)?, g.transpose_out(w)?);
        let (ckk, p) = (cout * g.kernel * g.kernel, h * w);
        let mut out = vec![T::zero(); n * cout * oh * ow];
        let mut cols = vec![T::zero(); ckk * p];
        {
            let xd = self.value(x).data();
            let kd = self.value(k).data();
            for i in 0..n {
                gemm(
                    MatRef::t(kd, ckk, cin),
                    MatRef::new(&xd[i * cin * p..(i + 1) * cin * p], cin, p),
                    T::zero(),
                    &mut cols,
                );
                let dst = &mut out[i * cout * oh * ow..(i + 1) * cout * oh * ow];
                conv::col2im(&cols, cout, oh, ow, g, h, w, dst);
            }
        }
        let value = Tensor::new(&[n, cout, oh, ow], out)?;
        Ok(self.push(value, Op::ConvTranspose2d { x, k, g }, &[x, k]))
    }

    /// Adds `b[C]` to every pixel of channel `c` of `x[N,C,H,W]`.
    pub fn channel_bias(&mut self, x: Var, b: Var) -> Result<Var, ShapeError> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 || self.shape(b) != [xs[1]] {
            return Err(ShapeError::new(format!(
                "channel_bias: {xs:?} vs {:?}",
                self.shape(b)
            )));
        }
        let plane = xs[2] * xs[3];
        let mut out = self.value(x).clone();
        let bd = self.value(b).data().to_vec();
        for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let bias = bd[i % xs[1]];
            chunk.iter_mut().for_each(|v| *v += bias);
        }
        Ok(self.push(out, Op::ChannelBias { x, b }, &[x, b]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, ShapeError> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// Concatenate `[N,C_i,H,W]` tensors along the channel axis.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var, ShapeError> {
        let first = self
            .shape(
                *xs.first()
                    .ok_or_else(|| ShapeError::new("concat of nothing"))?,
            )
            .to_vec();
        if first.len() != 4 {
            return Err(ShapeError::new(format!(
                "concat_channels needs NCHW, got {first:?}"
            )));
        }
        let mut total_c = 0;
        for &v in xs {
            let s = self.shape(v);
            if s.len() != 4 || s[0] != first[0] || s[2] != first[2] || s[3] != first[3] {
                return Err(ShapeError::new(format!(
                    "concat_channels: {first:?} vs {s:?}"
                )));
            }
            total_c += s[1];
        }
        let (n, plane) = (first[0], first[2] * first[3]);
        let mut out = Vec::with_capacity(n * total_c * plane);
        for i in 0..n {
            for &v in xs {
                let c = self.shape(v)[1];
                out.extend_from_slice(&self.value(v).data()[i * c * plane..(i + 1) * c * plane]);
            }
        }
        let value = Tensor::new(&[n, total_c, first[2], first[3]], out)?;
        Ok(self.push(value, Op::ConcatChannels(xs.to_vec()), xs))
    }

    /// Columns `start..start+len` of a 2-D tensor.
    pub fn columns(&mut self, x: Var, start: usize, len: usize) -> Result<Var, ShapeError> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || start + len > s[1] || len == 0 {
            return Err(ShapeError::new(format!(
                "columns {start}..{} of {s:?}",
                start + len
            )));
        }
        let out: Vec<T> = self
            .value(x)
            .data()
            .chunks(s[1])
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let value = Tensor::new(&[s[0], len], out)?;
        Ok(self.push(value, Op::Columns { x, start }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::SumAll(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s: T = v.data().iter().copied().sum::<T>() / T::cast(v.len() as f64);
        self.push(Tensor::scalar(s), Op::MeanAll(x), &[x])
    }

    /// Mean over the leading (batch) axis of a 2-D tensor: `[N,D] -> [D]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var, ShapeError> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(ShapeError::new(format!("mean_rows needs 2-D, got {s:?}")));
        }
        let inv = T::one() / T::cast(s[0] as f64);
        let mut out = vec![T::zero(); s[1]];
        for row in self.value(x).data().chunks(s[1]) {
            out.iter_mut().zip(row).for_each(|(o, &v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o *= inv);
        let value = Tensor::new(&[s[1]], out)?;
        Ok(self.push(value, Op::MeanRows(x), &[x]))
    }

    /// `(sum |x_i|^n)^(1/n)`; the gradient at the zero vector is taken as 0.
    pub fn pnorm(&mut self, x: Var, n: T) -> Var {
        let s: T = self.value(x).data().iter().map(|v| v.abs().powf(n)).sum();
        self.push(Tensor::scalar(s.powf(n.recip())), Op::PNorm { x, n }, &[x])
    }

    /// Mean elementwise smooth-L1 (Huber with threshold 1) between `a` and `b`.
    pub fn smooth_l1(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        self.huber_impl(a, b, T::one(), true)
    }

    /// Mean elementwise Huber loss with threshold `delta`.
    pub fn huber(&mut self, a: Var, b: Var, delta: T) -> Result<Var, ShapeError> {
        self.huber_impl(a, b, delta, false)
    }

    fn huber_impl(&mut self, a: Var, b: Var, delta: T, smooth: bool) -> Result<Var, ShapeError> {
        same_shape(self.shape(a), self.shape(b), "huber operands")?;
        let half = T::cast(0.5);
        let va = self.value(a).data();
        let vb = self.value(b).data();
        let total: T = va
            .iter()
            .zip(vb)
            .map(|(&x, &y)| {
                let e = (x - y).abs();
                if e < delta {
                    half * e * e
                } else {
                    delta * (e - half * delta)
                }
            })
            .sum();
        let value = Tensor::scalar(total / T::cast(va.len() as f64));
        let op = if smooth {
            Op::SmoothL1 { a, b }
        } else {
            Op::Huber { a, b, delta }
        };
        Ok(self.push(value, op, &[a, b]))
    }

    /// Binary cross-entropy of probabilities `p` against targets `t`.
    /// With `per_row_sum`, sums over each row (first axis item) and averages
    /// over rows; otherwise averages over all elements.
    pub fn bce(&mut self, p: Var, t: Var, per_row_sum: bool) -> Result<Var, ShapeError> {
        same_shape(self.shape(p), self.shape(t), "bce operands")?;
        let eps = T::cast(BCE_EPS);
        let pv = self.value(p).data();
        let tv = self.value(t).data();
        let total: T = pv
            .iter()
            .zip(tv)
            .map(|(&q, &y)| {
                let q = q.max(eps).min(T::one() - eps);
                -(y * q.ln() + (T::one() - y) * (T::one() - q).ln())
            })
            .sum();
        let denom = if per_row_sum {
            self.shape(p)[0]
        } else {
            pv.len()
        };
        let value = Tensor::scalar(total / T::cast(denom as f64));
        Ok(self.push(value, Op::Bce { p, t, per_row_sum }, &[p, t]))
    }

    /// Mean softmax cross-entropy of `logits[N,C]` against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, ShapeError> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != targets.len() || targets.iter().any(|&t| t >= s[1]) {
            return Err(ShapeError::new(format!(
                "cross_entropy: logits {s:?}, {} targets",
                targets.len()
            )));
        }
        let total: T = self
            .value(logits)
            .data()
            .chunks(s[1])
            .zip(targets)
            .map(|(row, &t)| log_sum_exp(row) - row[t])
            .sum();
        let value = Tensor::scalar(total / T::cast(s[0] as f64));
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
            &[logits],
        ))
    }

    /// Gradients of the scalar `loss` with respect to every node that
    /// requires one.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, Error> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for id in (0..=loss.0).rev() {
            let Some(gy) = grads[id].take() else { continue };
            self.propagate(id, &gy, &mut grads)?;
            grads[id] = Some(gy);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, id: usize, gy: &[T], grads: &mut [Option<Vec<T>>]) -> Result<(), Error> {
        let node = &self.nodes[id];
        let zero = T::zero();
        // Lazily allocated gradient slot for an input.
        macro_rules! slot {
            ($v:expr) => {{
                let v: Var = $v;
                let len = self.nodes[v.0].value.len();
                grads[v.0].get_or_insert_with(|| vec![zero; len])
            }};
        }
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if needs(v) {
                        slot!(v).iter_mut().zip(gy).for_each(|(g, &d)| *g += d);
                    }
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    slot!(*a).iter_mut().zip(gy).for_each(|(g, &d)| *g += d);
                }
                if needs(*b) {
                    slot!(*b).iter_mut().zip(gy).for_each(|(g, &d)| *g -= d);
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    let other = self.value(*b).data();
                    for ((g, &d), &o) in slot!(*a).iter_mut().zip(gy).zip(other) {
                        *g += d * o;
                    }
                }
                if needs(*b) {
                    let other = self.value(*a).data();
                    for ((g, &d), &o) in slot!(*b).iter_mut().zip(gy).zip(other) {
                        *g += d * o;
                    }
                }
            }
            Op::Scale(x, s) => {
                if needs(*x) {
                    slot!(*x)
                        .iter_mut()
                        .zip(gy)
                        .for_each(|(g, &d)| *g += d * *s);
                }
            }
            Op::Offset(x) | Op::Reshape(x) => {
                if needs(*x) {
                    slot!(*x).iter_mut().zip(gy).for_each(|(g, &d)| *g += d);
                }
            }
            Op::Exp(x) => {
                if needs(*x) {
                    let y = node.value.data();
                    for ((g, &d), &yv) in slot!(*x).iter_mut().zip(gy).zip(y) {
                        *g += d * yv;
                    }
                }
            }
            Op::Log(x) => {
                if needs(*x) {
                    let xv = self.value(*x).data();
                    for ((g, &d), &v) in slot!(*x).iter_mut().zip(gy).zip(xv) {
                        *g += d / v;
                    }
                }
            }
            Op::Square(x) => {
                if needs(*x) {
                    let xv = self.value(*x).data();
                    let two = T::cast(2.0);
                    for ((g, &d), &v) in slot!(*x).iter_mut().zip(gy).zip(xv) {
                        *g += d * two * v;
                    }
                }
            }
            Op::Relu(x) => {
                if needs(*x) {
                    let xv = self.value(*x).data();
                    for ((g, &d), &v) in slot!(*x).iter_mut().zip(gy).zip(xv) {
                        if v > zero {
                            *g += d;
                        }
                    }
                }
            }
            Op::LeakyRelu(x, slope) => {
                if needs(*x) {
                    let xv = self.value(*x).data();
                    for ((g, &d), &v) in slot!(*x).iter_mut().zip(gy).zip(xv) {
                        *g += if v > zero { d } else { d * *slope };
                    }
                }
            }
            Op::Sigmoid(x) => {
                if needs(*x) {
                    let y = node.value.data();
                    for ((g, &d), &s) in slot!(*x).iter_mut().zip(gy).zip(y) {
                        *g += d * s * (T::one() - s);
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let (n, i) = (self.shape(*x)[0], self.shape(*x)[1]);
                let o = self.shape(*w)[0];
                if needs(*x) {
                    let wd = self.value(*w).data();
                    gemm(
                        MatRef::new(gy, n, o),
                        MatRef::new(wd, o, i),
                        T::one(),
                        slot!(*x),
                    );
                }
                if needs(*w) {
                    let xd = self.value(*x).data();
                    gemm(
                        MatRef::t(gy, o, n),
                        MatRef::new(xd, n, i),
                        T::one(),
                        slot!(*w),
                    );
                }
                if let Some(b) = b {
                    if needs(*b) {
                        let gb = slot!(*b);
                        for row in gy.chunks(o) {
                            gb.iter_mut().zip(row).for_each(|(g, &d)| *g += d);
                        }
                    }
                }
            }
            Op::Conv2d { x, k, g } => self.conv2d_backward(*x, *k, *g, gy, grads),
            Op::ConvTranspose2d { x, k, g } => {
                self.conv_transpose2d_backward(*x, *k, *g, gy, grads)
            }
            Op::ChannelBias { x, b } => {
                if needs(*x) {
                    slot!(*x).iter_mut().zip(gy).for_each(|(g, &d)| *g += d);
                }
                if needs(*b) {
                    let s = self.shape(*x);
                    let (c, plane) = (s[1], s[2] * s[3]);
                    let gb = slot!(*b);
                    for (i, chunk) in gy.chunks(plane).enumerate() {
                        gb[i % c] += chunk.iter().copied().sum::<T>();
                    }
                }
            }
            Op::ConcatChannels(xs) => {
                let s = node.value.shape();
                let (n, total_c, plane) = (s[0], s[1], s[2] * s[3]);
                let mut offset = 0;
                for &v in xs {
                    let c = self.shape(v)[1];
                    if needs(v) {
                        let gx = slot!(v);
                        for i in 0..n {
                            let src = &gy[(i * total_c + offset) * plane
                                ..(i * total_c + offset + c) * plane];
                            gx[i * c * plane..(i + 1) * c * plane]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(g, &d)| *g += d);
                        }
                    }
                    offset += c;
                }
            }
            Op::Columns { x, start } => {
                if needs(*x) {
                    let width = self.shape(*x)[1];
                    let len = node.value.shape()[1];
                    let gx = slot!(*x);
                    for (row, grow) in gx.chunks_mut(width).zip(gy.chunks(len)) {
                        row[*start..*start + len]
                            .iter_mut()
                            .zip(grow)
                            .for_each(|(g, &d)| *g += d);
                    }
                }
            }
            Op::SumAll(x) => {
                if needs(*x) {
                    slot!(*x).iter_mut().for_each(|g| *g += gy[0]);
                }
            }
            Op::MeanAll(x) => {
                if needs(*x) {
                    let d = gy[0] / T::cast(self.value(*x).len() as f64);
                    slot!(*x).iter_mut().for_each(|g| *g += d);
                }
            }
            Op::MeanRows(x) => {
                if needs(*x) {
                    let s = self.shape(*x);
                    let inv = T::one() / T::cast(s[0] as f64);
                    let width = s[1];
                    for row in slot!(*x).chunks_mut(width) {
                        row.iter_mut().zip(gy).for_each(|(g, &d)| *g += d * inv);
                    }
                }
            }
            Op::PNorm { x, n } => {
                if needs(*x) {
                    let norm = node.value.item();
                    let gx = slot!(*x);
                    if norm > zero {
                        let xv = self.value(*x).data();
                        let e = *n - T::one();
                        for (g, &v) in gx.iter_mut().zip(xv) {
                            if v != zero {
                                *g += gy[0] * (v.abs() / norm).powf(e) * v.signum();
                            }
                        }
                    }
                }
            }
            Op::SmoothL1 { a, b } => self.huber_backward(*a, *b, T::one(), gy[0], grads),
            Op::Huber { a, b, delta } => self.huber_backward(*a, *b, *delta, gy[0], grads),
            Op::Bce { p, t, per_row_sum } => {
                let pv = self.value(*p).data();
                let tv = self.value(*t).data();
                let denom = if *per_row_sum {
                    self.shape(*p)[0]
                } else {
                    pv.len()
                };
                let scale = gy[0] / T::cast(denom as f64);
                let eps = T::cast(BCE_EPS);
                let one = T::one();
                if needs(*p) {
                    for ((g, &q), &y) in slot!(*p).iter_mut().zip(pv).zip(tv) {
                        // Zero gradient where the clamp is active.
                        if q > eps && q < one - eps {
                            *g += scale * ((one - y) / (one - q) - y / q);
                        }
                    }
                }
                if needs(*t) {
                    for ((g, &q), _) in slot!(*t).iter_mut().zip(pv).zip(tv) {
                        let q = q.max(eps).min(one - eps);
                        *g += scale * ((one - q).ln() - q.ln());
                    }
                }
            }
            Op::CrossEntropy { logits, targets } => {
                if needs(*logits) {
                    let s = self.shape(*logits);
                    let c = s[1];
                    let scale = gy[0] / T::cast(s[0] as f64);
                    let lv = self.value(*logits).data().to_vec();
                    let gl = slot!(*logits);
                    for ((grow, row), &t) in gl.chunks_mut(c).zip(lv.chunks(c)).zip(targets) {
                        let lse = log_sum_exp(row);
                        for (j, (g, &l)) in grow.iter_mut().zip(row).enumerate() {
                            let p = (l - lse).exp();
                            let onehot = if j == t { T::one() } else { zero };
                            *g += scale * (p - onehot);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn huber_backward(&self, a: Var, b: Var, delta: T, gy: T, grads: &mut [Option<Vec<T>>]) {
        let va = self.value(a).data();
        let vb = self.value(b).data();
        let scale = gy / T::cast(va.len() as f64);
        let de: Vec<T> = va
            .iter()
            .zip(vb)
            .map(|(&x, &y)| {
                let e = x - y;
                scale
                    * if e.abs() < delta {
                        e
                    } else {
                        delta * e.signum()
                    }
            })
            .collect();
        for (v, sign) in [(a, T::one()), (b, -T::one())] {
            if self.nodes[v.0].requires_grad {
                let len = va.len();
                let g = grads[v.0].get_or_insert_with(|| vec![T::zero(); len]);
                g.iter_mut().zip(&de).for_each(|(g, &d)| *g += sign * d);
            }
        }
    }

    fn conv2d_backward(&self, x: Var, k: Var, g: ConvGeom, gy: &[T], grads: &mut [Option<Vec<T>>]) {
        let xs = self.shape(x);
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let f = self.shape(k)[0];
        let (oh, ow) = (g.conv_out(h).unwrap(), g.conv_out(w).unwrap());
        let (ckk, p) = (c * g.kernel * g.kernel, oh * ow);
        let xd = self.value(x).data();
        let kd = self.value(k).data();
        let need_x = self.nodes[x.0].requires_grad;
        let need_k = self.nodes[k.0].requires_grad;
        let mut cols = vec![T::zero(); ckk * p];
        let mut gk = need_k.then(|| {
            grads[k.0]
                .take()
                .unwrap_or_else(|| vec![T::zero(); kd.len()])
        });
        let mut gx = need_x.then(|| {
            grads[x.0]
                .take()
                .unwrap_or_else(|| vec![T::zero(); xd.len()])
        });
        for i in 0..n {
            let gy_i = &gy[i * f * p..(i + 1) * f * p];
            let xi = &xd[i * c * h * w..(i + 1) * c * h * w];
            if g.is_pointwise() {
                if let Some(gk) = gk.as_mut() {
                    gemm(MatRef::new(gy_i, f, p), MatRef::t(xi, p, ckk), T::one(), gk);
                }
                if let Some(gx) = gx.as_mut() {
                    gemm(
                        MatRef::t(kd, ckk, f),
                        MatRef::new(gy_i, f, p),
                        T::one(),
                        &mut gx[i * c * h * w..(i + 1) * c * h * w],
                    );
                }
                continue;
            }
            if let Some(gk) = gk.as_mut() {
                conv::im2col(xi, c, h, w, g, oh, ow, &mut cols);
                gemm(
                    MatRef::new(gy_i, f, p),
                    MatRef::t(&cols, p, ckk),
                    T::one(),
                    gk,
                );
            }
            if let Some(gx) = gx.as_mut() {
                gemm(
                    MatRef::t(kd, ckk, f),
                    MatRef::new(gy_i, f, p),
                    T::zero(),
                    &mut cols,
                );
                conv::col2im(
                    &cols,
                    c,
                    h,
                    w,
                    g,
                    oh,
                    ow,
                    &mut gx[i * c * h * w..(i + 1) * c * h * w],
                );
            }
        }
        if let Some(gk) = gk {
            grads[k.0] = Some(gk);
        }
        if let Some(gx) = gx {
            grads[x.0] = Some(gx);
        }
    }

    fn conv_transpose2d_backward(
        &self,
        x: Var,
        k: Var,
        g: ConvGeom,
        gy: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let xs = self.shape(x);
        let (n, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let cout = self.shape(k)[1];
        let (oh, ow) = (g.transpose_out(h).unwrap(), g.transpose_out(w).unwrap());
        let (ckk, p) = (cout * g.kernel * g.kernel, h * w);
        let xd = self.value(x).data();
        let kd = self.value(k).data();
        let need_x = self.nodes[x.0].requires_grad;
        let need_k = self.nodes[k.0].requires_grad;
        let mut cols = vec![T::zero(); ckk * p];
        let mut gk = need_k.then(|| {
            grads[k.0]
                .take()
                .unwrap_or_else(|| vec![T::zero(); kd.len()])
        });
        let mut gx = need_x.then(|| {
            grads[x.0]
                .take()
                .unwrap_or_else(|| vec![T::zero(); xd.len()])
        });
        for i in 0..n {
            let gy_i = &gy[i * cout * oh * ow..(i + 1) * cout * oh * ow];
            conv::im2col(gy_i, cout, oh, ow, g, h, w, &mut cols);
            if let Some(gx) = gx.as_mut() {
                gemm(
                    MatRef::new(kd, cin, ckk),
                    MatRef::new(&cols, ckk, p),
                    T::one(),
                    &mut gx[i * cin * p..(i + 1) * cin * p],
                );
            }
            if let Some(gk) = gk.as_mut() {
                gemm(
                    MatRef::new(&xd[i * cin * p..(i + 1) * cin * p], cin, p),
                    MatRef::t(&cols, p, ckk),
                    T::one(),
                    gk,
                );
            }
        }
        if let Some(gk) = gk {
            grads[k.0] = Some(gk);
        }
        if let Some(gx) = gx {
            grads[x.0] = Some(gx);
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

pub(crate) fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln()
}
