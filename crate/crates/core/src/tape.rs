//! Tensor-level reverse-mode differentiation.
//!
//! Every primitive application is appended to a [`Tape`] together with the
//! handles of its inputs. Node values are kept, so the backward pass walks the
//! nodes in reverse insertion order (a reverse topological order, since a node
//! can only reference earlier nodes) and reads whatever intermediates it needs.
//!
//! ```
//! use devae_core::tape::Tape;
//! use devae_core::Tensor;
//!
//! let mut tape = Tape::new();
//! let p = tape.param(Tensor::vector(&[1.0, 2.0]));
//! let sq = tape.mul(p, p).unwrap();
//! let loss = tape.sum(sq).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(p).unwrap().data(), &[2.0, 4.0]);
//! ```

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent methods whenever std is in the graph
use num_traits::Float;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Affine { x: Var, w: Var, b: Var },
    MatMulT { x: Var, m: Var },
    Conv2d { x: Var, k: Var, b: Var, geom: ConvGeom },
    Deconv2d { x: Var, k: Var, b: Var, geom: ConvGeom },
    Relu(Var),
    Reshape(Var, Vec<usize>),
    Exp(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulRow(Var, Var),
    AddRow(Var, Var),
    SliceCols { x: Var, start: usize, len: usize },
    ConcatCols(Var, Var),
    Sum(Var),
    KlStandard { mean: Var, logvar: Var },
    BceWithLogits { logits: Var, targets: Var },
    SquaredError { recon: Var, target: Var },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Affine { .. } => "affine",
            Op::MatMulT { .. } => "matmul",
            Op::Conv2d { .. } => "conv2d",
            Op::Deconv2d { .. } => "deconv2d",
            Op::Relu(_) => "relu",
            Op::Reshape(..) => "reshape",
            Op::Exp(_) => "exp",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::MulRow(..) => "mul_row",
            Op::AddRow(..) => "add_row",
            Op::SliceCols { .. } => "slice_cols",
            Op::ConcatCols(..) => "concat_cols",
            Op::Sum(_) => "sum",
            Op::KlStandard { .. } => "kl_standard",
            Op::BceWithLogits { .. } => "bce_with_logits",
            Op::SquaredError { .. } => "squared_error",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::Affine { x, w, b } => vec![x, w, b],
            Op::MatMulT { x, m } => vec![x, m],
            Op::Conv2d { x, k, b, .. } | Op::Deconv2d { x, k, b, .. } => vec![x, k, b],
            Op::Relu(x) | Op::Reshape(x, _) | Op::Exp(x) | Op::Scale(x, _) | Op::Sum(x) => vec![x],
            Op::SliceCols { x, .. } => vec![x],
            Op::Add(a, b) | Op::Mul(a, b) | Op::MulRow(a, b) | Op::AddRow(a, b) | Op::ConcatCols(a, b) => {
                vec![a, b]
            }
            Op::KlStandard { mean, logvar } => vec![mean, logvar],
            Op::BceWithLogits { logits, targets } => vec![logits, targets],
            Op::SquaredError { recon, target } => vec![recon, target],
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of primitive applications.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `like`'s shape when `v` was unreachable.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

fn rows_cols(t: &Tensor) -> (usize, usize) {
    match t.shape() {
        [] => (1, 1),
        [n] => (1, *n),
        s => (s[0], s[1..].iter().product()),
    }
}

/// Leading extent used as the batch size of the reduction losses; 1-D tensors are one sample.
fn batch_of(t: &Tensor) -> usize {
    if t.ndim() >= 2 {
        t.shape()[0]
    } else {
        1
    }
}

fn same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::config(format!("{op}: shape mismatch {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn sigmoid(l: f64) -> f64 {
    if l >= 0.0 {
        1.0 / (1.0 + (-l).exp())
    } else {
        let e = l.exp();
        e / (1.0 + e)
    }
}

/// Stable `max(l,0) − l·t + ln(1+e^(−|l|))`.
pub fn bce_term(l: f64, t: f64) -> f64 {
    l.max(0.0) - l * t + (-l.abs()).exp().ln_1p()
}

fn conv_geom(x: &Tensor, k: &Tensor, stride: usize, pad: usize) -> Result<ConvGeom> {
    let (&[b, c, h, w], &[oc, kc, kh, kw]) = (x.shape(), k.shape()) else {
        return Err(Error::config("conv2d expects [batch×c×h×w] input and [oc×c×kh×kw] kernel"));
    };
    if kc != c {
        return Err(Error::config(format!("conv2d: kernel expects {kc} channels, input has {c}")));
    }
    if stride == 2 && (h % 2 != 0 || w % 2 != 0 || h < 4 || w < 4) {
        return Err(Error::config(format!("conv2d: spatial extent {h}×{w} must be even and ≥ 4")));
    }
    let (Some(oh), Some(ow)) = (ConvGeom::conv_extent(h, kh, stride, pad), ConvGeom::conv_extent(w, kw, stride, pad))
    else {
        return Err(Error::config(format!("conv2d: {h}×{w} does not tile with kernel {kh}×{kw}")));
    };
    Ok(ConvGeom { batch: b, in_c: c, in_h: h, in_w: w, out_c: oc, out_h: oh, out_w: ow, kh, kw, stride, pad })
}

/// Geometry of the convolution whose adjoint is the requested deconvolution.
fn deconv_geom(x: &Tensor, k: &Tensor, stride: usize, pad: usize) -> Result<ConvGeom> {
    let (&[b, c, h, w], &[kc, oc, kh, kw]) = (x.shape(), k.shape()) else {
        return Err(Error::config("deconv2d expects [batch×c×h×w] input and [c×oc×kh×kw] kernel"));
    };
    if kc != c {
        return Err(Error::config(format!("deconv2d: kernel expects {kc} channels, input has {c}")));
    }
    let full_h = (h - 1) * stride + kh;
    let full_w = (w - 1) * stride + kw;
    if full_h < 2 * pad + 1 || full_w < 2 * pad + 1 {
        return Err(Error::config("deconv2d: padding exceeds output"));
    }
    let (oh, ow) = (full_h - 2 * pad, full_w - 2 * pad);
    let g = ConvGeom { batch: b, in_c: oc, in_h: oh, in_w: ow, out_c: c, out_h: h, out_w: w, kh, kw, stride, pad };
    if ConvGeom::conv_extent(oh, kh, stride, pad) != Some(h) || ConvGeom::conv_extent(ow, kw, stride, pad) != Some(w) {
        return Err(Error::config("deconv2d: geometry is not the adjoint of a valid conv2d"));
    }
    Ok(g)
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// A trainable leaf; gradients flow into it.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t, true)
    }

    /// A non-trainable leaf (data, noise, indicators).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let value = self.eval(&op, |v| &self.nodes[v.0].value)?;
        if !value.is_finite() {
            return Err(Error::numerical(op.name()));
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Shape checks and the forward computation of one primitive.
    fn eval<'a>(&'a self, op: &Op, val: impl Fn(Var) -> &'a Tensor) -> Result<Tensor> {
        Ok(match *op {
            Op::Leaf => unreachable!("leaves are not evaluated"),
            Op::Affine { x, w, b } => {
                let (x, w, b) = (val(x), val(w), val(b));
                let (batch, inp) = rows_cols(x);
                let (&[wi, wo], &[bo]) = (w.shape(), b.shape()) else {
                    return Err(Error::config("affine: weights must be [in×out] and bias [out]"));
                };
                if x.ndim() != 2 || wi != inp || bo != wo {
                    return Err(Error::config(format!(
                        "affine: x {:?}, W {:?}, b {:?} do not conform",
                        x.shape(),
                        w.shape(),
                        b.shape()
                    )));
                }
                Tensor::new(vec![batch, wo], kernels::affine(x.data(), w.data(), b.data(), batch, inp, wo))?
            }
            Op::MatMulT { x, m } => {
                let (x, m) = (val(x), val(m));
                let (batch, inp) = rows_cols(x);
                let &[mo, mi] = m.shape() else {
                    return Err(Error::config("matmul: matrix must be 2-D"));
                };
                if x.ndim() != 2 || mi != inp {
                    return Err(Error::config(format!("matmul: x {:?} vs M {:?}", x.shape(), m.shape())));
                }
                Tensor::new(vec![batch, mo], kernels::matmul_nt(x.data(), m.data(), inp, mo))?
            }
            Op::Conv2d { x, k, b, geom } => {
                let y = kernels::conv2d(&geom, val(x).data(), val(k).data(), Some(val(b).data()));
                Tensor::new(vec![geom.batch, geom.out_c, geom.out_h, geom.out_w], y)?
            }
            Op::Deconv2d { x, k, b, geom } => {
                let y = kernels::deconv2d(&geom, val(x).data(), val(k).data(), Some(val(b).data()));
                Tensor::new(vec![geom.batch, geom.in_c, geom.in_h, geom.in_w], y)?
            }
            Op::Relu(x) => {
                let x = val(x);
                Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| v.max(0.0)).collect())?
            }
            Op::Reshape(x, ref shape) => val(x).clone().reshaped(shape)?,
            Op::Exp(x) => {
                let x = val(x);
                Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v.exp()).collect())?
            }
            Op::Add(a, b) | Op::Mul(a, b) => {
                let (a_t, b_t) = (val(a), val(b));
                same_shape(a_t, b_t, op.name())?;
                let f: fn(f64, f64) -> f64 = if matches!(op, Op::Add(..)) { |p, q| p + q } else { |p, q| p * q };
                Tensor::new(a_t.shape().to_vec(), a_t.data().iter().zip(b_t.data()).map(|(&p, &q)| f(p, q)).collect())?
            }
            Op::Scale(x, c) => {
                let x = val(x);
                Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v * c).collect())?
            }
            Op::MulRow(x, v) | Op::AddRow(x, v) => {
                let (x_t, v_t) = (val(x), val(v));
                let (_, cols) = rows_cols(x_t);
                if x_t.ndim() != 2 || v_t.len() != cols {
                    return Err(Error::config(format!(
                        "{}: row vector of {} against {:?}",
                        op.name(),
                        v_t.len(),
                        x_t.shape()
                    )));
                }
                let mul = matches!(op, Op::MulRow(..));
                let mut out = x_t.data().to_vec();
                for row in out.chunks_exact_mut(cols) {
                    for (o, &s) in row.iter_mut().zip(v_t.data()) {
                        if mul {
                            *o *= s
                        } else {
                            *o += s
                        }
                    }
                }
                Tensor::new(x_t.shape().to_vec(), out)?
            }
            Op::SliceCols { x, start, len } => {
                let x = val(x);
                let (rows, cols) = rows_cols(x);
                if x.ndim() != 2 || start + len > cols {
                    return Err(Error::config(format!("slice_cols: {start}+{len} out of {cols}")));
                }
                let data = x.rows().flat_map(|r| r[start..start + len].iter().copied()).collect();
                Tensor::new(vec![rows, len], data)?
            }
            Op::ConcatCols(a, b) => {
                let (a, b) = (val(a), val(b));
                let ((ra, ca), (rb, cb)) = (rows_cols(a), rows_cols(b));
                if a.ndim() != 2 || b.ndim() != 2 || ra != rb {
                    return Err(Error::config(format!("concat_cols: {:?} vs {:?}", a.shape(), b.shape())));
                }
                let mut data = Vec::with_capacity(ra * (ca + cb));
                for (x, y) in a.rows().zip(b.rows()) {
                    data.extend_from_slice(x);
                    data.extend_from_slice(y);
                }
                Tensor::new(vec![ra, ca + cb], data)?
            }
            Op::Sum(x) => Tensor::scalar(val(x).sum()),
            Op::KlStandard { mean, logvar } => {
                let (m, lv) = (val(mean), val(logvar));
                same_shape(m, lv, "kl_standard")?;
                let s: f64 = m.data().iter().zip(lv.data()).map(|(&mu, &l)| 0.5 * (mu * mu + l.exp() - 1.0 - l)).sum();
                Tensor::scalar(s / batch_of(m) as f64)
            }
            Op::BceWithLogits { logits, targets } => {
                let (l, t) = (val(logits), val(targets));
                same_shape(l, t, "bce_with_logits")?;
                if let Some(bad) = t.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
                    return Err(Error::data(format!("bce target {bad} outside [0,1]")));
                }
                let s: f64 = l.data().iter().zip(t.data()).map(|(&l, &t)| bce_term(l, t)).sum();
                Tensor::scalar(s / batch_of(l) as f64)
            }
            Op::SquaredError { recon, target } => {
                let (r, t) = (val(recon), val(target));
                same_shape(r, t, "squared_error")?;
                let s: f64 = r.data().iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)).sum();
                Tensor::scalar(s / batch_of(r) as f64)
            }
        })
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.push(Op::Affine { x, w, b })
    }

    /// `x · mᵀ` for `x` `[batch×d]` and `m` `[out×d]`: applies `m` to every row.
    pub fn matmul_t(&mut self, x: Var, m: Var) -> Result<Var> {
        self.push(Op::MatMulT { x, m })
    }

    pub fn conv2d(&mut self, x: Var, k: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let geom = conv_geom(self.value(x), self.value(k), stride, pad)?;
        if self.value(b).len() != geom.out_c {
            return Err(Error::config("conv2d: bias length must equal output channels"));
        }
        self.push(Op::Conv2d { x, k, b, geom })
    }

    /// Transposed convolution; kernel layout `[in_c × out_c × kh × kw]`.
    pub fn deconv2d(&mut self, x: Var, k: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let geom = deconv_geom(self.value(x), self.value(k), stride, pad)?;
        if self.value(b).len() != geom.in_c {
            return Err(Error::config("deconv2d: bias length must equal output channels"));
        }
        self.push(Op::Deconv2d { x, k, b, geom })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Relu(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.push(Op::Reshape(x, shape.to_vec()))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Exp(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.push(Op::Scale(x, c))
    }

    /// Multiply every row of `x` elementwise by the vector `v`.
    pub fn mul_row(&mut self, x: Var, v: Var) -> Result<Var> {
        self.push(Op::MulRow(x, v))
    }

    /// Add the vector `v` to every row of `x`.
    pub fn add_row(&mut self, x: Var, v: Var) -> Result<Var> {
        self.push(Op::AddRow(x, v))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.push(Op::SliceCols { x, start, len })
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::ConcatCols(a, b))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Sum(x))
    }

    /// KL of `N(mean, exp(logvar))` against `N(0, I)`: summed over dimensions, averaged over the batch.
    pub fn kl_standard(&mut self, mean: Var, logvar: Var) -> Result<Var> {
        self.push(Op::KlStandard { mean, logvar })
    }

    /// Binary cross-entropy on logits, summed over elements and averaged over the batch.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Var) -> Result<Var> {
        self.push(Op::BceWithLogits { logits, targets })
    }

    /// Squared error summed over elements and averaged over the batch.
    pub fn squared_error(&mut self, recon: Var, target: Var) -> Result<Var> {
        self.push(Op::SquaredError { recon, target })
    }

    /// Recompute every non-leaf node from the recorded ops.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.op {
                Op::Leaf => node.value.clone(),
                ref op => {
                    let vals = &values;
                    self.eval(op, |v| &vals[v.0])?
                }
            };
            values.push(v);
        }
        Ok(values)
    }

    /// True when [`Tape::replay`] reproduces every recorded value bitwise.
    pub fn replay_matches(&self) -> Result<bool> {
        Ok(self.replay()?.iter().zip(&self.nodes).all(|(r, n)| r.bitwise_eq(&n.value)))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(self.nodes[loss.0].value.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                for (input, contrib) in self.input_grads(node, &g)? {
                    if !self.nodes[input.0].requires_grad {
                        continue;
                    }
                    match &mut grads[input.0] {
                        Some(acc) => {
                            for (a, c) in acc.data_mut().iter_mut().zip(contrib.data()) {
                                *a += c;
                            }
                        }
                        slot @ None => *slot = Some(contrib),
                    }
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Contribution of `g = dL/d(node)` to each input of `node`.
    fn input_grads(&self, node: &Node, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let val = |v: Var| &self.nodes[v.0].value;
        let like = |v: Var, data: Vec<f64>| Tensor::new(val(v).shape().to_vec(), data);
        Ok(match node.op {
            Op::Leaf => vec![],
            Op::Affine { x, w, b } => {
                let (_, inp) = rows_cols(val(x));
                let out = val(b).len();
                let (dx, dw, db) = kernels::affine_backward(val(x).data(), val(w).data(), g.data(), inp, out);
                vec![(x, like(x, dx)?), (w, like(w, dw)?), (b, like(b, db)?)]
            }
            Op::MatMulT { x, m } => {
                let (_, inp) = rows_cols(val(x));
                let out = val(m).shape()[0];
                let (dx, dm) = kernels::matmul_nt_backward(val(x).data(), val(m).data(), g.data(), inp, out);
                vec![(x, like(x, dx)?), (m, like(m, dm)?)]
            }
            Op::Conv2d { x, k, b, geom } => {
                let dx = kernels::conv2d_adjoint(&geom, g.data(), val(k).data());
                let dk = kernels::conv2d_kernel_grad(&geom, val(x).data(), g.data(), val(k).len());
                let db = kernels::conv_bias_grad(&geom, g.data());
                vec![(x, like(x, dx)?), (k, like(k, dk)?), (b, like(b, db)?)]
            }
            Op::Deconv2d { x, k, b, geom } => {
                let dx = kernels::conv2d(&geom, g.data(), val(k).data(), None);
                let dk = kernels::conv2d_kernel_grad(&geom, g.data(), val(x).data(), val(k).len());
                let db = kernels::deconv_bias_grad(&geom, g.data());
                vec![(x, like(x, dx)?), (k, like(k, dk)?), (b, like(b, db)?)]
            }
            Op::Relu(x) => {
                let d = val(x).data().iter().zip(g.data()).map(|(&v, &gi)| if v > 0.0 { gi } else { 0.0 });
                vec![(x, like(x, d.collect())?)]
            }
            Op::Reshape(x, _) => vec![(x, like(x, g.data().to_vec())?)],
            Op::Exp(x) => {
                let d = node.value.data().iter().zip(g.data()).map(|(y, gi)| y * gi);
                vec![(x, like(x, d.collect())?)]
            }
            Op::Add(a, b) => vec![(a, g.clone()), (b, g.clone())],
            Op::Mul(a, b) => {
                let da = val(b).data().iter().zip(g.data()).map(|(p, q)| p * q).collect();
                let db = val(a).data().iter().zip(g.data()).map(|(p, q)| p * q).collect();
                vec![(a, like(a, da)?), (b, like(b, db)?)]
            }
            Op::Scale(x, c) => vec![(x, like(x, g.data().iter().map(|v| v * c).collect())?)],
            Op::MulRow(x, v) => {
                let cols = val(v).len();
                let mut dx = g.data().to_vec();
                let mut dv = vec![0.0; cols];
                for ((dxr, xr), gr) in
                    dx.chunks_exact_mut(cols).zip(val(x).data().chunks_exact(cols)).zip(g.data().chunks_exact(cols))
                {
                    for j in 0..cols {
                        dxr[j] *= val(v).data()[j];
                        dv[j] += xr[j] * gr[j];
                    }
                }
                vec![(x, like(x, dx)?), (v, like(v, dv)?)]
            }
            Op::AddRow(x, v) => {
                let cols = val(v).len();
                let mut dv = vec![0.0; cols];
                for gr in g.data().chunks_exact(cols) {
                    for (d, gi) in dv.iter_mut().zip(gr) {
                        *d += gi;
                    }
                }
                vec![(x, g.clone()), (v, like(v, dv)?)]
            }
            Op::SliceCols { x, start, len } => {
                let (_, cols) = rows_cols(val(x));
                let mut dx = vec![0.0; val(x).len()];
                for (dr, gr) in dx.chunks_exact_mut(cols).zip(g.data().chunks_exact(len)) {
                    dr[start..start + len].copy_from_slice(gr);
                }
                vec![(x, like(x, dx)?)]
            }
            Op::ConcatCols(a, b) => {
                let ((_, ca), (_, cb)) = (rows_cols(val(a)), rows_cols(val(b)));
                let mut da = Vec::with_capacity(val(a).len());
                let mut db = Vec::with_capacity(val(b).len());
                for gr in g.data().chunks_exact(ca + cb) {
                    da.extend_from_slice(&gr[..ca]);
                    db.extend_from_slice(&gr[ca..]);
                }
                vec![(a, like(a, da)?), (b, like(b, db)?)]
            }
            Op::Sum(x) => vec![(x, Tensor::filled(val(x).shape(), g.item()))],
            Op::KlStandard { mean, logvar } => {
                let s = g.item() / batch_of(val(mean)) as f64;
                let dm = val(mean).data().iter().map(|m| m * s).collect();
                let dl = val(logvar).data().iter().map(|l| 0.5 * (l.exp() - 1.0) * s).collect();
                vec![(mean, like(mean, dm)?), (logvar, like(logvar, dl)?)]
            }
            Op::BceWithLogits { logits, targets } => {
                let s = g.item() / batch_of(val(logits)) as f64;
                let dl =
                    val(logits).data().iter().zip(val(targets).data()).map(|(&l, &t)| (sigmoid(l) - t) * s).collect();
                vec![(logits, like(logits, dl)?)]
            }
            Op::SquaredError { recon, target } => {
                let s = g.item() / batch_of(val(recon)) as f64;
                let d: Vec<f64> =
                    val(recon).data().iter().zip(val(target).data()).map(|(r, t)| 2.0 * (r - t) * s).collect();
                let neg = d.iter().map(|v| -v).collect();
                vec![(recon, like(recon, d)?), (target, like(target, neg)?)]
            }
        })
    }
}

impl core::fmt::Display for Var {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "%{}", self.0)
    }
}
