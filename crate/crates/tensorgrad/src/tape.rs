//! Tape-based reverse-mode differentiation.
//!
//! A [`Tape`] owns every value produced during a forward pass. Operations are
//! recorded in execution order; [`Tape::backward`] walks that record once in
//! reverse and accumulates gradients into the leaves created with
//! [`Tape::leaf`]. Intermediate adjoints are dropped as soon as they have been
//! propagated.

use crate::error::{Result, TensorError};
use crate::kernels::{self, ConvGeom};
use crate::scalar::Real;
use crate::tensor::{numel, strides, Tensor};

/// Minimum vector norm accepted by [`Tape::l2_normalize`].
pub const NORM_EPS: f64 = 1e-8;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
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
    Div(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Relu(Var),
    Matmul(Var, Var),
    Transpose(Var),
    Conv2d { input: Var, kernel: Var, geom: ConvGeom },
    AddBias { input: Var, bias: Var },
    MaxPool2 { input: Var, argmax: Vec<usize> },
    Upsample2(Var),
    Softmax(Var),
    LogSoftmax(Var),
    L2Normalize { input: Var, axis: usize },
    SumAxes { input: Var, axes: Vec<usize> },
    Reshape(Var),
    MaskedSelect { input: Var, indices: Vec<usize> },
    Concat { inputs: Vec<Var>, axis: usize },
    SliceBatch { input: Var, start: usize },
    Broadcast(Var),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of executed operations together with their values.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    leaf_grads: Vec<Option<Tensor<T>>>,
    last_trace: Vec<Var>,
}

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::shape(
            op,
            format!("left {:?} vs right {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn nchw(op: &'static str, t: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *t {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(TensorError::shape(op, format!("expected NCHW rank-4 tensor, got {t:?}"))),
    }
}

fn matrix(op: &'static str, t: &[usize]) -> Result<(usize, usize)> {
    match *t {
        [r, c] => Ok((r, c)),
        _ => Err(TensorError::shape(op, format!("expected rank-2 tensor, got {t:?}"))),
    }
}

/// Splits `shape` around `axis` into (outer, len, inner).
fn around_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}

/// For every input element, the flat output index after reducing `axes`.
fn reduce_index_map(shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let out_shape: Vec<usize> = shape
        .iter()
        .enumerate()
        .filter(|(i, _)| !axes.contains(i))
        .map(|(_, &d)| d)
        .collect();
    let out_strides = strides(&out_shape);
    let mut dim_stride = Vec::with_capacity(shape.len());
    let mut k = 0;
    for i in 0..shape.len() {
        if axes.contains(&i) {
            dim_stride.push(0);
        } else {
            dim_stride.push(out_strides[k]);
            k += 1;
        }
    }
    let total = numel(shape);
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; shape.len()];
    let mut flat_out = 0usize;
    for _ in 0..total {
        map.push(flat_out);
        for d in (0..shape.len()).rev() {
            idx[d] += 1;
            flat_out += dim_stride[d];
            if idx[d] < shape[d] {
                break;
            }
            flat_out -= dim_stride[d] * idx[d];
            idx[d] = 0;
        }
    }
    (out_shape, map)
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            leaf_grads: Vec::new(),
            last_trace: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable input; its gradient accumulator starts at zero.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        let zeros = Tensor::zeros(value.shape().to_vec());
        let v = self.push(value, Op::Leaf, true);
        self.leaf_grads[v.0] = Some(zeros);
        v
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Copies the current value of `v` into a new constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Accumulated gradient of a leaf. `None` for constants and intermediate values.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaf_grads[v.0].as_ref()
    }

    pub fn zero_grad(&mut self) {
        for g in self.leaf_grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|x| *x = T::zero());
        }
    }

    /// Smallest |input| over every recorded relu, i.e. the distance of the
    /// current point from the nearest kink. `None` when no relu was recorded.
    pub fn relu_margin(&self) -> Option<T> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) => Some(self.value(x).min_abs()),
                _ => None,
            })
            .reduce(|a, b| a.min(b))
    }

    /// Operations visited by the most recent [`Tape::backward`], in visit order.
    pub fn last_backward_trace(&self) -> &[Var] {
        &self.last_trace
    }

    fn unary(&mut self, x: Var, value: Tensor<T>, op: Op<T>) -> Var {
        let rg = self.rg(x);
        self.push(value, op, rg)
    }

    fn binary(&mut self, a: Var, b: Var, value: Tensor<T>, op: Op<T>) -> Var {
        let rg = self.rg(a) || self.rg(b);
        self.push(value, op, rg)
    }

    fn zip(&self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(op, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip("add", a, b, |x, y| x + y)?;
        Ok(self.binary(a, b, v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip("sub", a, b, |x, y| x - y)?;
        Ok(self.binary(a, b, v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip("mul", a, b, |x, y| x * y)?;
        Ok(self.binary(a, b, v, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip("div", a, b, |x, y| x / y)?;
        Ok(self.binary(a, b, v, Op::Div(a, b)))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let v = self.value(x).map(|a| a * s);
        self.unary(x, v, Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: Var, s: T) -> Var {
        let v = self.value(x).map(|a| a + s);
        self.unary(x, v, Op::AddScalar(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a.exp());
        self.unary(x, v, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a.ln());
        self.unary(x, v, Op::Log(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| if a > T::zero() { a } else { T::zero() });
        self.unary(x, v, Op::Relu(x))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix("matmul", self.shape(a))?;
        let (k2, n) = matrix("matmul", self.shape(b))?;
        if k != k2 {
            return Err(TensorError::shape(
                "matmul",
                format!("inner dimensions differ: left {m}x{k}, right {k2}x{n}"),
            ));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.value(a).data(),
            k as isize,
            1,
            self.value(b).data(),
            n as isize,
            1,
            T::zero(),
            &mut out,
            n as isize,
            1,
        );
        let v = Tensor::new(vec![m, n], out)?;
        Ok(self.binary(a, b, v, Op::Matmul(a, b)))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = matrix("transpose", self.shape(x))?;
        let src = self.value(x).data();
        let v = Tensor::from_fn(vec![c, r], |i| src[(i % r) * c + i / r]);
        Ok(self.unary(x, v, Op::Transpose(x)))
    }

    /// 2-D cross-correlation of an NCHW input with an OIKhKw kernel.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let (n, c, h, w) = nchw("conv2d", self.shape(input))?;
        let (o, ci, kh, kw) = nchw("conv2d", self.shape(kernel))?;
        if stride == 0 {
            return Err(TensorError::invalid("conv2d", "stride must be positive"));
        }
        if c != ci {
            return Err(TensorError::shape(
                "conv2d",
                format!("input has {c} channels but kernel expects {ci}"),
            ));
        }
        let (hp, wp) = (h + 2 * padding, w + 2 * padding);
        if hp < kh || wp < kw {
            return Err(TensorError::shape(
                "conv2d",
                format!("padded input {hp}x{wp} smaller than kernel {kh}x{kw}"),
            ));
        }
        if (hp - kh) % stride != 0 || (wp - kw) % stride != 0 {
            return Err(TensorError::shape(
                "conv2d",
                format!("padded input {hp}x{wp} with kernel {kh}x{kw} is not divisible by stride {stride}"),
            ));
        }
        let geom = ConvGeom {
            n,
            c,
            h,
            w,
            o,
            kh,
            kw,
            stride,
            pad: padding,
            ho: (hp - kh) / stride + 1,
            wo: (wp - kw) / stride + 1,
        };
        let out = kernels::conv2d_forward(&geom, self.value(input).data(), self.value(kernel).data());
        let v = Tensor::new(vec![n, o, geom.ho, geom.wo], out)?;
        Ok(self.binary(input, kernel, v, Op::Conv2d { input, kernel, geom }))
    }

    /// Adds a per-channel bias along axis 1 (works for `N×C` and `N×C×H×W`).
    pub fn add_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if shape.len() < 2 || self.shape(bias) != [shape[1]] {
            return Err(TensorError::shape(
                "add_bias",
                format!("bias {:?} does not match axis 1 of {:?}", self.shape(bias), shape),
            ));
        }
        let (_, c, inner) = around_axis(&shape, 1);
        let b = self.value(bias).data();
        let x = self.value(input).data();
        let v = Tensor::from_fn(shape.clone(), |i| x[i] + b[(i / inner) % c]);
        Ok(self.binary(input, bias, v, Op::AddBias { input, bias }))
    }

    pub fn max_pool2(&mut self, input: Var) -> Result<Var> {
        let (n, c, h, w) = nchw("max_pool2", self.shape(input))?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(TensorError::shape(
                "max_pool2",
                format!("spatial dims {h}x{w} must be even"),
            ));
        }
        let (out, argmax) = kernels::maxpool2_forward(self.value(input).data(), n * c, h, w);
        let v = Tensor::new(vec![n, c, h / 2, w / 2], out)?;
        Ok(self.unary(input, v, Op::MaxPool2 { input, argmax }))
    }

    /// Nearest-neighbour 2× spatial upsampling.
    pub fn upsample2(&mut self, input: Var) -> Result<Var> {
        let (n, c, h, w) = nchw("upsample2", self.shape(input))?;
        let out = kernels::upsample2_forward(self.value(input).data(), n * c, h, w);
        let v = Tensor::new(vec![n, c, 2 * h, 2 * w], out)?;
        Ok(self.unary(input, v, Op::Upsample2(input)))
    }

    fn softmax_common(&mut self, logits: Var, log: bool) -> Result<Var> {
        let op = if log { "log_softmax_channels" } else { "softmax_channels" };
        let shape = self.shape(logits).to_vec();
        let (n, c, _, _) = nchw(op, &shape)?;
        if c == 0 {
            return Err(TensorError::shape(op, "channel count must be at least 1"));
        }
        let x = self.value(logits);
        if !x.all_finite() {
            return Err(TensorError::NonFinite { op });
        }
        let inner = numel(&shape[2..]);
        let out = kernels::softmax_axis1(x.data(), n, c, inner, log);
        let v = Tensor::new(shape, out)?;
        let node = if log {
            Op::LogSoftmax(logits)
        } else {
            Op::Softmax(logits)
        };
        Ok(self.unary(logits, v, node))
    }

    /// Per-pixel softmax over the channel axis of an NCHW tensor.
    pub fn softmax_channels(&mut self, logits: Var) -> Result<Var> {
        self.softmax_common(logits, false)
    }

    /// Per-pixel log-softmax over the channel axis of an NCHW tensor.
    pub fn log_softmax_channels(&mut self, logits: Var) -> Result<Var> {
        self.softmax_common(logits, true)
    }

    /// Scales every vector along `axis` to unit L2 norm.
    pub fn l2_normalize(&mut self, input: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::shape(
                "l2_normalize",
                format!("axis {axis} out of range for {shape:?}"),
            ));
        }
        let (outer, len, inner) = around_axis(&shape, axis);
        let x = self.value(input).data();
        let mut out = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * len + k) * inner + i;
                let norm = (0..len).map(|k| x[at(k)] * x[at(k)]).sum::<T>().sqrt();
                if !(norm.as_f64() > NORM_EPS) {
                    return Err(TensorError::DegenerateNorm { norm: norm.as_f64() });
                }
                for k in 0..len {
                    out[at(k)] = x[at(k)] / norm;
                }
            }
        }
        let v = Tensor::new(shape, out)?;
        Ok(self.unary(input, v, Op::L2Normalize { input, axis }))
    }

    /// Sums over `axes`, dropping them from the shape.
    pub fn sum_axes(&mut self, input: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let mut axes = axes.to_vec();
        axes.sort_unstable();
        axes.dedup();
        if axes.iter().any(|&a| a >= shape.len()) {
            return Err(TensorError::shape(
                "sum_axes",
                format!("axes {axes:?} out of range for {shape:?}"),
            ));
        }
        let (out_shape, map) = reduce_index_map(&shape, &axes);
        let mut out = vec![T::zero(); numel(&out_shape)];
        for (&o, &x) in map.iter().zip(self.value(input).data()) {
            out[o] += x;
        }
        let v = Tensor::new(out_shape, out)?;
        Ok(self.unary(input, v, Op::SumAxes { input, axes }))
    }

    pub fn mean_axes(&mut self, input: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let count: usize = axes.iter().filter_map(|&a| shape.get(a)).product();
        let s = self.sum_axes(input, axes)?;
        Ok(self.scale(s, T::one() / T::of(count as f64)))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let axes: Vec<usize> = (0..self.shape(input).len()).collect();
        self.sum_axes(input, &axes).expect("all axes are in range")
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let n = self.value(input).numel();
        let s = self.sum(input);
        self.scale(s, T::one() / T::of(n as f64))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(input).reshape(shape.to_vec())?;
        Ok(self.unary(input, v, Op::Reshape(input)))
    }

    /// Flattened elements where `mask` is true, in row-major order.
    pub fn masked_select(&mut self, input: Var, mask: &[bool]) -> Result<Var> {
        let x = self.value(input);
        if mask.len() != x.numel() {
            return Err(TensorError::shape(
                "masked_select",
                format!("mask has {} entries, tensor has {}", mask.len(), x.numel()),
            ));
        }
        let indices: Vec<usize> = mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect();
        let data = indices.iter().map(|&i| x.data()[i]).collect::<Vec<_>>();
        let v = Tensor::new(vec![indices.len()], data)?;
        Ok(self.unary(input, v, Op::MaskedSelect { input, indices }))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| TensorError::invalid("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::shape("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::shape(
                    "concat",
                    format!("{s:?} incompatible with {base:?} along axis {axis}"),
                ));
            }
            total += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = around_axis(&out_shape, axis);
        let mut out = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for &v in inputs {
                let block = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v).data()[o * block..(o + 1) * block]);
            }
        }
        let value = Tensor::new(out_shape, out)?;
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        self.concat(inputs, 1)
    }

    /// Rows `start..start + len` along axis 0.
    pub fn slice_batch(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if shape.is_empty() || start + len > shape[0] {
            return Err(TensorError::shape(
                "slice_batch",
                format!("range {start}..{} out of bounds for {shape:?}", start + len),
            ));
        }
        let row = numel(&shape[1..]);
        let mut out_shape = shape;
        out_shape[0] = len;
        let data = self.value(input).data()[start * row..(start + len) * row].to_vec();
        let v = Tensor::new(out_shape, data)?;
        Ok(self.unary(input, v, Op::SliceBatch { input, start }))
    }

    /// Repeats a single-element tensor into `shape`.
    pub fn broadcast(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let x = self.value(input);
        if x.numel() != 1 {
            return Err(TensorError::shape(
                "broadcast",
                format!("only single-element tensors broadcast, got {:?}", x.shape()),
            ));
        }
        let v = Tensor::full(shape.to_vec(), x.data()[0]);
        Ok(self.unary(input, v, Op::Broadcast(input)))
    }

    /// Accumulates `d loss / d leaf` into every reachable leaf gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        self.last_trace.clear();
        if !self.rg(loss) {
            return Ok(());
        }
        let mut adj: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::ones(lv.shape().to_vec()));
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.last_trace.push(Var(i));
            if let Op::Leaf = self.nodes[i].op {
                if let Some(acc) = self.leaf_grads[i].as_mut() {
                    acc.add_assign(&g);
                }
                continue;
            }
            self.propagate(i, &g, &mut adj);
        }
        Ok(())
    }

    fn accumulate(&self, adj: &mut [Option<Tensor<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.rg(v) {
            return;
        }
        let slot = &mut adj[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.shape(v).to_vec()));
        }
        f(slot.as_mut().unwrap().data_mut());
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, adj: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        let gd = g.data();
        let val = |v: Var| self.value(v).data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(adj, *a, |d| d.iter_mut().zip(gd).for_each(|(d, &g)| *d += g));
                self.accumulate(adj, *b, |d| d.iter_mut().zip(gd).for_each(|(d, &g)| *d += g));
            }
            Op::Sub(a, b) => {
                self.accumulate(adj, *a, |d| d.iter_mut().zip(gd).for_each(|(d, &g)| *d += g));
                self.accumulate(adj, *b, |d| d.iter_mut().zip(gd).for_each(|(d, &g)| *d -= g));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                self.accumulate(adj, *a, |d| {
                    for ((d, &g), &x) in d.iter_mut().zip(gd).zip(vb) {
                        *d += g * x;
                    }
                });
                self.accumulate(adj, *b, |d| {
                    for ((d, &g), &x) in d.iter_mut().zip(gd).zip(va) {
                        *d += g * x;
                    }
                });
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                self.accumulate(adj, *a, |d| {
                    for ((d, &g), &x) in d.iter_mut().zip(gd).zip(vb) {
                        *d += g / x;
                    }
                });
                self.accumulate(adj, *b, |d| {
                    for (k, d) in d.iter_mut().enumerate() {
                        *d -= gd[k] * va[k] / (vb[k] * vb[k]);
                    }
                });
            }
            Op::Scale(x, s) => {
                self.accumulate(adj, *x, |d| d.iter_mut().zip(gd).for_each(|(d, &g)| *d += g * *s));
            }
            Op::AddScalar(x) | Op::Reshape(x) => {
                self.accumulate(adj, *x, |d| d.iter_mut().zip(gd).for_each(|(d, &g)| *d += g));
            }
            Op::Exp(x) => {
                self.accumulate(adj, *x, |d| {
                    for ((d, &g), &e) in d.iter_mut().zip(gd).zip(y) {
                        *d += g * e;
                    }
                });
            }
            Op::Log(x) => {
                let vx = val(*x);
                self.accumulate(adj, *x, |d| {
                    for ((d, &g), &a) in d.iter_mut().zip(gd).zip(vx) {
                        *d += g / a;
                    }
                });
            }
            Op::Relu(x) => {
                let vx = val(*x);
                self.accumulate(adj, *x, |d| {
                    for ((d, &g), &a) in d.iter_mut().zip(gd).zip(vx) {
                        if a > T::zero() {
                            *d += g;
                        }
                    }
                });
            }
            Op::Matmul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let (va, vb) = (val(*a), val(*b));
                // dA = G @ B^T
                self.accumulate(adj, *a, |d| {
                    T::gemm(m, n, k, T::one(), gd, n as isize, 1, vb, 1, n as isize, T::one(), d, k as isize, 1)
                });
                // dB = A^T @ G
                self.accumulate(adj, *b, |d| {
                    T::gemm(k, m, n, T::one(), va, 1, k as isize, gd, n as isize, 1, T::one(), d, n as isize, 1)
                });
            }
            Op::Transpose(x) => {
                let (r, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                self.accumulate(adj, *x, |d| {
                    for ri in 0..r {
                        for ci in 0..c {
                            d[ri * c + ci] += gd[ci * r + ri];
                        }
                    }
                });
            }
            Op::Conv2d { input, kernel, geom } => {
                let mut gi = self.rg(*input).then(|| vec![T::zero(); self.value(*input).numel()]);
                let mut gk = self.rg(*kernel).then(|| vec![T::zero(); self.value(*kernel).numel()]);
                kernels::conv2d_backward(
                    geom,
                    val(*input),
                    val(*kernel),
                    gd,
                    gi.as_deref_mut(),
                    gk.as_deref_mut(),
                );
                if let Some(gi) = gi {
                    self.accumulate(adj, *input, |d| d.iter_mut().zip(&gi).for_each(|(d, &g)| *d += g));
                }
                if let Some(gk) = gk {
                    self.accumulate(adj, *kernel, |d| d.iter_mut().zip(&gk).for_each(|(d, &g)| *d += g));
                }
            }
            Op::AddBias { input, bias } => {
                let shape = self.shape(*input);
                let (_, c, inner) = around_axis(shape, 1);
                self.accumulate(adj, *input, |d| d.iter_mut().zip(gd).for_each(|(d, &g)| *d += g));
                self.accumulate(adj, *bias, |d| {
                    for (k, &g) in gd.iter().enumerate() {
                        d[(k / inner) % c] += g;
                    }
                });
            }
            Op::MaxPool2 { input, argmax } => {
                self.accumulate(adj, *input, |d| {
                    for (&src, &g) in argmax.iter().zip(gd) {
                        d[src] += g;
                    }
                });
            }
            Op::Upsample2(x) => {
                let s = self.shape(*x);
                let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
                self.accumulate(adj, *x, |d| kernels::upsample2_backward(gd, d, planes, h, w));
            }
            Op::Softmax(x) | Op::LogSoftmax(x) => {
                let log = matches!(node.op, Op::LogSoftmax(_));
                let s = self.shape(*x);
                let (n, c, inner) = (s[0], s[1], numel(&s[2..]));
                self.accumulate(adj, *x, |d| {
                    for b in 0..n {
                        for p in 0..inner {
                            let at = |ch: usize| (b * c + ch) * inner + p;
                            if log {
                                let gsum: T = (0..c).map(|ch| gd[at(ch)]).sum();
                                for ch in 0..c {
                                    d[at(ch)] += gd[at(ch)] - y[at(ch)].exp() * gsum;
                                }
                            } else {
                                let dot: T = (0..c).map(|ch| gd[at(ch)] * y[at(ch)]).sum();
                                for ch in 0..c {
                                    d[at(ch)] += y[at(ch)] * (gd[at(ch)] - dot);
                                }
                            }
                        }
                    }
                });
            }
            Op::L2Normalize { input, axis } => {
                let x = val(*input);
                let (outer, len, inner) = around_axis(self.shape(*input), *axis);
                self.accumulate(adj, *input, |d| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |k: usize| (o * len + k) * inner + i;
                            let norm = (0..len).map(|k| x[at(k)] * x[at(k)]).sum::<T>().sqrt();
                            let dot: T = (0..len).map(|k| y[at(k)] * gd[at(k)]).sum();
                            for k in 0..len {
                                d[at(k)] += (gd[at(k)] - y[at(k)] * dot) / norm;
                            }
                        }
                    }
                });
            }
            Op::SumAxes { input, axes } => {
                let (_, map) = reduce_index_map(self.shape(*input), axes);
                self.accumulate(adj, *input, |d| {
                    for (d, &o) in d.iter_mut().zip(&map) {
                        *d += gd[o];
                    }
                });
            }
            Op::MaskedSelect { input, indices } => {
                self.accumulate(adj, *input, |d| {
                    for (&src, &g) in indices.iter().zip(gd) {
                        d[src] += g;
                    }
                });
            }
            Op::Concat { inputs, axis } => {
                let (outer, _, inner) = around_axis(g.shape(), *axis);
                let mut offset = 0;
                for &v in inputs {
                    let block = self.shape(v)[*axis] * inner;
                    let total = g.shape()[*axis] * inner;
                    self.accumulate(adj, v, |d| {
                        for o in 0..outer {
                            let src = &gd[o * total + offset..o * total + offset + block];
                            for (d, &g) in d[o * block..(o + 1) * block].iter_mut().zip(src) {
                                *d += g;
                            }
                        }
                    });
                    offset += block;
                }
            }
            Op::SliceBatch { input, start } => {
                let row = numel(&self.shape(*input)[1..]);
                self.accumulate(adj, *input, |d| {
                    for (d, &g) in d[start * row..start * row + gd.len()].iter_mut().zip(gd) {
                        *d += g;
                    }
                });
            }
            Op::Broadcast(x) => {
                let total: T = gd.iter().copied().sum();
                self.accumulate(adj, *x, |d| d[0] += total);
            }
        }
    }
}
