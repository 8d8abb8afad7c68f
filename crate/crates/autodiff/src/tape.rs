//! Tape-based reverse-mode differentiation.
//!
//! Every primitive appends one node holding its forward value. Inputs always
//! precede outputs on the tape, so a single reverse sweep is a valid
//! topological order for [`Tape::backward`].

use rand::Rng;

use crate::error::{shape_err, AutodiffError, Result};
use crate::params::{BoundParams, Gradients, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    Binary(BinaryKind, Var, Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Stack(Vec<Var>),
    Unary(UnaryKind, Var),
    Softmax { x: Var, axis: usize },
    Conv1d { p: Var, kernel: Var },
    L2Normalize { x: Var, axis: usize, norms: Vec<f64>, clamped: Vec<bool> },
    ReduceSum { x: Var, axis: Option<usize> },
    ReduceMean { x: Var, axis: Option<usize> },
    ReduceMax { x: Var, argmax: Vec<usize> },
    Gather { x: Var, idx: Vec<usize> },
    Rows { x: Var, idx: Vec<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum UnaryKind {
    Tanh,
    Sigmoid,
    Relu,
    Exp,
    Log,
}

const EXP_CLAMP: f64 = 700.0;

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Record of primitive applications for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    n_params: usize,
}

/// Iteration plan for a reduction or normalisation along one axis.
#[derive(Debug, Clone, Copy)]
struct Lanes {
    count: usize,
    len: usize,
    stride: usize,
    /// Distance between starts of consecutive lanes.
    step: usize,
}

impl Lanes {
    fn new(shape: &[usize], axis: usize, op: &'static str) -> Result<Self> {
        match (shape, axis) {
            ([n], 0) => Ok(Self { count: 1, len: *n, stride: 1, step: 0 }),
            ([r, c], 1) => Ok(Self { count: *r, len: *c, stride: 1, step: *c }),
            ([r, c], 0) => Ok(Self { count: *c, len: *r, stride: *c, step: 1 }),
            _ => Err(AutodiffError::InvalidArgument {
                op,
                msg: format!("axis {axis} out of range for shape {shape:?}"),
            }),
        }
    }

    fn all(len: usize) -> Self {
        Self { count: 1, len, stride: 1, step: 0 }
    }

    #[inline]
    fn index(&self, lane: usize, k: usize) -> usize {
        lane * self.step + k * self.stride
    }

    fn out_shape(&self) -> Vec<usize> {
        vec![self.count]
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; receives no gradient that anyone reads.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    /// Registers every parameter of `store` as a differentiable leaf.
    pub fn bind(&mut self, store: &ParamStore) -> BoundParams {
        let vars = store
            .iter()
            .map(|(id, p)| self.push(p.tensor.clone(), Op::Param(id.index())))
            .collect();
        self.n_params = self.n_params.max(store.len());
        BoundParams { vars }
    }

    // ---- linear algebra -------------------------------------------------

    /// Matrix product. A rank-1 left operand is a row vector, a rank-1 right
    /// operand a column vector; the corresponding output axis is dropped.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = ta.dims2();
        let (k2, n) = match tb.shape() {
            [k2] => (*k2, 1),
            [k2, n] => (*k2, *n),
            _ => unreachable!(),
        };
        if k != k2 {
            return shape_err("matmul", ta.shape(), tb.shape());
        }
        let mut out = vec![0.0; m * n];
        let (ad, bd) = (ta.data(), tb.data());
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = ad[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (o, bv) in row.iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        }
        let shape = match (ta.rank(), tb.rank()) {
            (1, 1) => vec![1],
            (1, 2) => vec![n],
            (2, 1) => vec![m],
            _ => vec![m, n],
        };
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul(a, b)))
    }

    // ---- elementwise binary ---------------------------------------------

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let name = match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        };
        let (la, lb) = (ta.len(), tb.len());
        let shape = if ta.shape() == tb.shape() || broadcasts(tb.shape(), ta.shape()) {
            ta.shape().to_vec()
        } else if broadcasts(ta.shape(), tb.shape()) {
            tb.shape().to_vec()
        } else {
            return shape_err(name, ta.shape(), tb.shape());
        };
        let n = la.max(lb);
        let (ad, bd) = (ta.data(), tb.data());
        let out: Vec<f64> = (0..n)
            .map(|i| {
                let (x, y) = (ad[i % la], bd[i % lb]);
                match kind {
                    BinaryKind::Add => x + y,
                    BinaryKind::Sub => x - y,
                    BinaryKind::Mul => x * y,
                    BinaryKind::Div => x / y,
                }
            })
            .collect();
        Ok(self.push(Tensor::new(shape, out)?, Op::Binary(kind, a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    /// Multiplies by a constant scalar.
    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let c = self.scalar(s);
        self.mul(x, c)
    }

    /// `s - x` for a constant scalar `s`.
    pub fn rsub_scalar(&mut self, s: f64, x: Var) -> Result<Var> {
        let c = self.scalar(s);
        self.sub(c, x)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Result<Var> {
        let c = self.scalar(s);
        self.add(x, c)
    }

    // ---- structure --------------------------------------------------------

    /// Concatenation along `axis`. Rank-1 inputs only support axis 0.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        if inputs.is_empty() {
            return Err(AutodiffError::EmptyInput("concat"));
        }
        let first = self.value(inputs[0]).shape().to_vec();
        let value = match (first.len(), axis) {
            (1, 0) => {
                let mut data = Vec::new();
                for &v in inputs {
                    let t = self.value(v);
                    if t.rank() != 1 {
                        return shape_err("concat", &first, t.shape());
                    }
                    data.extend_from_slice(t.data());
                }
                Tensor::vector(data)
            }
            (2, 0) => {
                let cols = first[1];
                let mut data = Vec::new();
                let mut rows = 0;
                for &v in inputs {
                    let t = self.value(v);
                    if t.rank() != 2 || t.shape()[1] != cols {
                        return shape_err("concat", &first, t.shape());
                    }
                    rows += t.shape()[0];
                    data.extend_from_slice(t.data());
                }
                Tensor::matrix(rows, cols, data)?
            }
            (2, 1) => {
                let rows = first[0];
                let mut cols = 0;
                for &v in inputs {
                    let t = self.value(v);
                    if t.rank() != 2 || t.shape()[0] != rows {
                        return shape_err("concat", &first, t.shape());
                    }
                    cols += t.shape()[1];
                }
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for &v in inputs {
                        data.extend_from_slice(self.value(v).row(r));
                    }
                }
                Tensor::matrix(rows, cols, data)?
            }
            _ => {
                return Err(AutodiffError::InvalidArgument {
                    op: "concat",
                    msg: format!("axis {axis} out of range for shape {first:?}"),
                })
            }
        };
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        ))
    }

    /// Stacks equal-length vectors into the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        if rows.is_empty() {
            return Err(AutodiffError::EmptyInput("stack"));
        }
        let d = self.value(rows[0]).len();
        let mut data = Vec::with_capacity(d * rows.len());
        for &r in rows {
            let t = self.value(r);
            if t.rank() != 1 || t.len() != d {
                return shape_err("stack", &[d], t.shape());
            }
            data.extend_from_slice(t.data());
        }
        let value = Tensor::matrix(rows.len(), d, data)?;
        Ok(self.push(value, Op::Stack(rows.to_vec())))
    }

    /// Selects flat elements of `x` into a vector.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if idx.is_empty() {
            return Err(AutodiffError::EmptyInput("gather"));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= t.len()) {
            return shape_err("gather", t.shape(), &[bad]);
        }
        let data = idx.iter().map(|&i| t.data()[i]).collect();
        Ok(self.push(
            Tensor::vector(data),
            Op::Gather {
                x,
                idx: idx.to_vec(),
            },
        ))
    }

    /// Contiguous range `[start, end)` of a vector.
    pub fn slice(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 1 || start >= end || end > t.len() {
            return shape_err("slice", t.shape(), &[start, end]);
        }
        let idx: Vec<usize> = (start..end).collect();
        self.gather(x, &idx)
    }

    /// Selects rows of a matrix, producing `[idx.len(), cols]`.
    pub fn rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 2 || idx.is_empty() {
            return shape_err("rows", t.shape(), &[idx.len()]);
        }
        let (r, c) = t.dims2();
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return shape_err("rows", t.shape(), &[bad]);
        }
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(t.row(i));
        }
        let value = Tensor::matrix(idx.len(), c, data)?;
        Ok(self.push(
            value,
            Op::Rows {
                x,
                idx: idx.to_vec(),
            },
        ))
    }

    /// One row of a matrix as a vector.
    pub fn row(&mut self, x: Var, i: usize) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 2 || i >= t.shape()[0] {
            return shape_err("row", t.shape(), &[i]);
        }
        let c = t.shape()[1];
        let idx: Vec<usize> = (i * c..(i + 1) * c).collect();
        self.gather(x, &idx)
    }

    // ---- elementwise unary ------------------------------------------------

    fn unary(&mut self, kind: UnaryKind, x: Var) -> Var {
        let t = self.value(x);
        let data = t
            .data()
            .iter()
            .map(|&v| match kind {
                UnaryKind::Tanh => v.tanh(),
                UnaryKind::Sigmoid => sigmoid(v),
                UnaryKind::Relu => v.max(0.0),
                UnaryKind::Exp => v.min(EXP_CLAMP).exp(),
                UnaryKind::Log => v.max(f64::MIN_POSITIVE).ln(),
            })
            .collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Unary(kind, x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Sigmoid, x)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Relu, x)
    }

    /// `exp`, with the argument clamped to avoid overflow.
    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Exp, x)
    }

    /// Natural log; non-positive arguments are clamped to the smallest
    /// positive normal value.
    pub fn log(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Log, x)
    }

    // ---- normalisations ---------------------------------------------------

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.softmax_masked(x, axis, None)
    }

    /// Softmax along `axis`. Positions whose mask entry is `false` get
    /// exactly zero probability.
    pub fn softmax_masked(&mut self, x: Var, axis: usize, mask: Option<&[bool]>) -> Result<Var> {
        let t = self.value(x);
        let lanes = Lanes::new(t.shape(), axis, "softmax")?;
        if let Some(m) = mask {
            if m.len() != t.len() {
                return shape_err("softmax", t.shape(), &[m.len()]);
            }
        }
        let live = |i: usize| mask.is_none_or(|m| m[i]);
        let xd = t.data();
        let mut out = vec![0.0; t.len()];
        for lane in 0..lanes.count {
            let mut max = f64::NEG_INFINITY;
            for k in 0..lanes.len {
                let i = lanes.index(lane, k);
                if live(i) {
                    max = max.max(xd[i]);
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(AutodiffError::EmptyInput("softmax (all positions masked)"));
            }
            let mut sum = 0.0;
            for k in 0..lanes.len {
                let i = lanes.index(lane, k);
                if live(i) {
                    out[i] = (xd[i] - max).exp();
                    sum += out[i];
                }
            }
            for k in 0..lanes.len {
                out[lanes.index(lane, k)] /= sum;
            }
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(value, Op::Softmax { x, axis }))
    }

    /// `x / sqrt(max(sum(x^2), eps))` along `axis`.
    pub fn l2_normalize(&mut self, x: Var, axis: usize, eps: f64) -> Result<Var> {
        let t = self.value(x);
        let lanes = Lanes::new(t.shape(), axis, "l2_normalize")?;
        let xd = t.data();
        let mut out = vec![0.0; t.len()];
        let mut norms = Vec::with_capacity(lanes.count);
        let mut clamped = Vec::with_capacity(lanes.count);
        for lane in 0..lanes.count {
            let ss: f64 = (0..lanes.len)
                .map(|k| xd[lanes.index(lane, k)].powi(2))
                .sum();
            let is_clamped = ss < eps;
            let norm = ss.max(eps).sqrt();
            for k in 0..lanes.len {
                let i = lanes.index(lane, k);
                out[i] = xd[i] / norm;
            }
            norms.push(norm);
            clamped.push(is_clamped);
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(
            value,
            Op::L2Normalize {
                x,
                axis,
                norms,
                clamped,
            },
        ))
    }

    /// Cosine similarity between vector `a` and either a vector `b` (scalar
    /// result) or every row of matrix `b` (vector result).
    pub fn cosine_similarity(&mut self, a: Var, b: Var, eps: f64) -> Result<Var> {
        if self.value(a).rank() != 1 {
            return shape_err("cosine_similarity", self.shape(a), self.shape(b));
        }
        let an = self.l2_normalize(a, 0, eps)?;
        let b_axis = if self.value(b).rank() == 2 { 1 } else { 0 };
        let bn = self.l2_normalize(b, b_axis, eps)?;
        self.matmul(bn, an)
    }

    // ---- location shift -----------------------------------------------------

    /// Same-length 1-D convolution with a three-tap kernel indexed by shift
    /// `[-1, 0, +1]` and zero padding: `out[j] = sum_s kernel[s] * p[j - s]`.
    pub fn conv1d(&mut self, p: Var, kernel: Var) -> Result<Var> {
        let (tp, tk) = (self.value(p), self.value(kernel));
        if tp.rank() != 1 || tk.shape() != [3] {
            return shape_err("conv1d", tp.shape(), tk.shape());
        }
        let (pd, kd) = (tp.data(), tk.data());
        let m = pd.len();
        let out = (0..m)
            .map(|j| {
                let mut acc = kd[1] * pd[j];
                if j + 1 < m {
                    acc += kd[0] * pd[j + 1];
                }
                if j >= 1 {
                    acc += kd[2] * pd[j - 1];
                }
                acc
            })
            .collect();
        Ok(self.push(Tensor::vector(out), Op::Conv1d { p, kernel }))
    }

    // ---- reductions -------------------------------------------------------

    fn reduce_lanes(&self, x: Var, axis: Option<usize>, op: &'static str) -> Result<Lanes> {
        let t = self.value(x);
        match axis {
            None => Ok(Lanes::all(t.len())),
            Some(a) => Lanes::new(t.shape(), a, op),
        }
    }

    pub fn reduce_sum(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        let lanes = self.reduce_lanes(x, axis, "reduce_sum")?;
        let xd = self.value(x).data();
        let out = (0..lanes.count)
            .map(|l| (0..lanes.len).map(|k| xd[lanes.index(l, k)]).sum())
            .collect();
        let value = Tensor::new(lanes.out_shape(), out)?;
        Ok(self.push(value, Op::ReduceSum { x, axis }))
    }

    pub fn reduce_mean(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        let lanes = self.reduce_lanes(x, axis, "reduce_mean")?;
        if lanes.len == 0 {
            return Err(AutodiffError::EmptyInput("reduce_mean"));
        }
        let xd = self.value(x).data();
        let out = (0..lanes.count)
            .map(|l| (0..lanes.len).map(|k| xd[lanes.index(l, k)]).sum::<f64>() / lanes.len as f64)
            .collect();
        let value = Tensor::new(lanes.out_shape(), out)?;
        Ok(self.push(value, Op::ReduceMean { x, axis }))
    }

    /// Maximum along `axis`; the gradient flows to the first maximiser.
    pub fn reduce_max(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        let lanes = self.reduce_lanes(x, axis, "reduce_max")?;
        if lanes.len == 0 {
            return Err(AutodiffError::EmptyInput("reduce_max"));
        }
        let xd = self.value(x).data();
        let mut argmax = Vec::with_capacity(lanes.count);
        let mut out = Vec::with_capacity(lanes.count);
        for l in 0..lanes.count {
            let mut best = lanes.index(l, 0);
            for k in 1..lanes.len {
                let i = lanes.index(l, k);
                if xd[i] > xd[best] {
                    best = i;
                }
            }
            argmax.push(best);
            out.push(xd[best]);
        }
        let value = Tensor::new(lanes.out_shape(), out)?;
        Ok(self.push(value, Op::ReduceMax { x, argmax }))
    }

    // ---- stochastic -------------------------------------------------------

    /// Inverted dropout. Identity when `train` is false or `rate` is zero.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        train: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(AutodiffError::InvalidArgument {
                op: "dropout",
                msg: format!("rate {rate} outside [0, 1)"),
            });
        }
        if !train || rate == 0.0 {
            return Ok(x);
        }
        let mask = dropout_mask(self.value(x).shape(), rate, rng);
        let m = self.constant(mask);
        self.mul(x, m)
    }

    // ---- backward ---------------------------------------------------------

    /// Reverse sweep from a scalar `loss`. Parameters that the loss does not
    /// reach receive zero gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(AutodiffError::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut param_grads: Vec<Option<Tensor>> = vec![None; self.n_params];

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(pid) => {
                    let t = Tensor::new(node.value.shape().to_vec(), g).expect("grad shape");
                    match &mut param_grads[*pid] {
                        Some(acc) => acc.add_assign(&t),
                        slot => *slot = Some(t),
                    }
                }
                Op::MatMul(a, b) => self.back_matmul(&mut grads, *a, *b, &g),
                Op::Binary(kind, a, b) => self.back_binary(&mut grads, *kind, *a, *b, &node.value, &g),
                Op::Concat { inputs, axis } => self.back_concat(&mut grads, inputs, *axis, &g),
                Op::Stack(rows) => {
                    let d = self.value(rows[0]).len();
                    for (r, v) in rows.iter().enumerate() {
                        let acc = slot(&mut grads, *v, d);
                        for (a, gv) in acc.iter_mut().zip(&g[r * d..(r + 1) * d]) {
                            *a += gv;
                        }
                    }
                }
                Op::Unary(kind, x) => {
                    let xd = self.value(*x).data();
                    let yd = node.value.data();
                    let acc = slot(&mut grads, *x, xd.len());
                    for i in 0..xd.len() {
                        let d = match kind {
                            UnaryKind::Tanh => 1.0 - yd[i] * yd[i],
                            UnaryKind::Sigmoid => yd[i] * (1.0 - yd[i]),
                            UnaryKind::Relu => {
                                if xd[i] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            UnaryKind::Exp => {
                                if xd[i] > EXP_CLAMP {
                                    0.0
                                } else {
                                    yd[i]
                                }
                            }
                            UnaryKind::Log => 1.0 / xd[i].max(f64::MIN_POSITIVE),
                        };
                        acc[i] += g[i] * d;
                    }
                }
                Op::Softmax { x, axis } => {
                    let lanes = Lanes::new(node.value.shape(), *axis, "softmax")?;
                    let yd = node.value.data();
                    let acc = slot(&mut grads, *x, yd.len());
                    for l in 0..lanes.count {
                        let dot: f64 = (0..lanes.len)
                            .map(|k| {
                                let i = lanes.index(l, k);
                                yd[i] * g[i]
                            })
                            .sum();
                        for k in 0..lanes.len {
                            let i = lanes.index(l, k);
                            acc[i] += yd[i] * (g[i] - dot);
                        }
                    }
                }
                Op::Conv1d { p, kernel } => {
                    let pd = self.value(*p).data();
                    let kd = self.value(*kernel).data();
                    let m = pd.len();
                    {
                        let gp = slot(&mut grads, *p, m);
                        for j in 0..m {
                            gp[j] += kd[1] * g[j];
                            if j + 1 < m {
                                gp[j + 1] += kd[0] * g[j];
                            }
                            if j >= 1 {
                                gp[j - 1] += kd[2] * g[j];
                            }
                        }
                    }
                    let gk = slot(&mut grads, *kernel, 3);
                    for j in 0..m {
                        gk[1] += pd[j] * g[j];
                        if j + 1 < m {
                            gk[0] += pd[j + 1] * g[j];
                        }
                        if j >= 1 {
                            gk[2] += pd[j - 1] * g[j];
                        }
                    }
                }
                Op::L2Normalize {
                    x,
                    axis,
                    norms,
                    clamped,
                } => {
                    let lanes = Lanes::new(node.value.shape(), *axis, "l2_normalize")?;
                    let yd = node.value.data();
                    let acc = slot(&mut grads, *x, yd.len());
                    for l in 0..lanes.count {
                        let n = norms[l];
                        if clamped[l] {
                            for k in 0..lanes.len {
                                let i = lanes.index(l, k);
                                acc[i] += g[i] / n;
                            }
                        } else {
                            let dot: f64 = (0..lanes.len)
                                .map(|k| {
                                    let i = lanes.index(l, k);
                                    yd[i] * g[i]
                                })
                                .sum();
                            for k in 0..lanes.len {
                                let i = lanes.index(l, k);
                                acc[i] += (g[i] - yd[i] * dot) / n;
                            }
                        }
                    }
                }
                Op::ReduceSum { x, axis } | Op::ReduceMean { x, axis } => {
                    let lanes = self.reduce_lanes(*x, *axis, "reduce")?;
                    let scale = if matches!(node.op, Op::ReduceMean { .. }) {
                        1.0 / lanes.len as f64
                    } else {
                        1.0
                    };
                    let n = self.value(*x).len();
                    let acc = slot(&mut grads, *x, n);
                    for l in 0..lanes.count {
                        for k in 0..lanes.len {
                            acc[lanes.index(l, k)] += g[l] * scale;
                        }
                    }
                }
                Op::ReduceMax { x, argmax } => {
                    let n = self.value(*x).len();
                    let acc = slot(&mut grads, *x, n);
                    for (l, &i) in argmax.iter().enumerate() {
                        acc[i] += g[l];
                    }
                }
                Op::Gather { x, idx } => {
                    let n = self.value(*x).len();
                    let acc = slot(&mut grads, *x, n);
                    for (k, &i) in idx.iter().enumerate() {
                        acc[i] += g[k];
                    }
                }
                Op::Rows { x, idx } => {
                    let (_, c) = self.value(*x).dims2();
                    let n = self.value(*x).len();
                    let acc = slot(&mut grads, *x, n);
                    for (k, &r) in idx.iter().enumerate() {
                        for j in 0..c {
                            acc[r * c + j] += g[k * c + j];
                        }
                    }
                }
            }
        }

        let tensors = param_grads
            .into_iter()
            .enumerate()
            .map(|(pid, g)| {
                g.unwrap_or_else(|| {
                    let shape = self
                        .nodes
                        .iter()
                        .find(|n| matches!(n.op, Op::Param(p) if p == pid))
                        .map(|n| n.value.shape().to_vec())
                        .unwrap_or_else(|| vec![1]);
                    Tensor::zeros(&shape)
                })
            })
            .collect();
        Ok(Gradients { tensors })
    }

    fn back_matmul(&self, grads: &mut [Option<Vec<f64>>], a: Var, b: Var, g: &[f64]) {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = ta.dims2();
        let n = match tb.shape() {
            [_] => 1,
            [_, n] => *n,
            _ => unreachable!(),
        };
        let (ad, bd) = (ta.data(), tb.data());
        {
            // dA[i,p] = sum_j g[i,j] * B[p,j]
            let ga = slot(grads, a, m * k);
            for i in 0..m {
                let grow = &g[i * n..(i + 1) * n];
                for p in 0..k {
                    let brow = &bd[p * n..(p + 1) * n];
                    ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                }
            }
        }
        // dB[p,j] = sum_i A[i,p] * g[i,j]
        let gb = slot(grads, b, k * n);
        for i in 0..m {
            let grow = &g[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = ad[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                for (o, gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                    *o += aip * gv;
                }
            }
        }
    }

    fn back_binary(
        &self,
        grads: &mut [Option<Vec<f64>>],
        kind: BinaryKind,
        a: Var,
        b: Var,
        out: &Tensor,
        g: &[f64],
    ) {
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let (la, lb) = (ad.len(), bd.len());
        let yd = out.data();
        {
            let ga = slot(grads, a, la);
            for i in 0..g.len() {
                let d = match kind {
                    BinaryKind::Add | BinaryKind::Sub => 1.0,
                    BinaryKind::Mul => bd[i % lb],
                    BinaryKind::Div => 1.0 / bd[i % lb],
                };
                ga[i % la] += g[i] * d;
            }
        }
        let gb = slot(grads, b, lb);
        for i in 0..g.len() {
            let d = match kind {
                BinaryKind::Add => 1.0,
                BinaryKind::Sub => -1.0,
                BinaryKind::Mul => ad[i % la],
                BinaryKind::Div => -yd[i] / bd[i % lb],
            };
            gb[i % lb] += g[i] * d;
        }
    }

    fn back_concat(&self, grads: &mut [Option<Vec<f64>>], inputs: &[Var], axis: usize, g: &[f64]) {
        let rank = self.value(inputs[0]).rank();
        if rank == 1 || axis == 0 {
            let mut off = 0;
            for &v in inputs {
                let n = self.value(v).len();
                let acc = slot(grads, v, n);
                for (a, gv) in acc.iter_mut().zip(&g[off..off + n]) {
                    *a += gv;
                }
                off += n;
            }
        } else {
            let rows = self.value(inputs[0]).shape()[0];
            let total: usize = inputs.iter().map(|&v| self.value(v).shape()[1]).sum();
            let mut col_off = 0;
            for &v in inputs {
                let c = self.value(v).shape()[1];
                let acc = slot(grads, v, rows * c);
                for r in 0..rows {
                    for j in 0..c {
                        acc[r * c + j] += g[r * total + col_off + j];
                    }
                }
                col_off += c;
            }
        }
    }
}

#[inline]
fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

/// True when `small` broadcasts into `big`: a scalar, or equal to the
/// trailing dimensions of `big`.
fn broadcasts(small: &[usize], big: &[usize]) -> bool {
    let n: usize = small.iter().product();
    n == 1 || (small.len() < big.len() && big.ends_with(small))
}

#[inline]
pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Inverted-dropout keep mask: each entry is `1/(1-rate)` with probability
/// `1-rate`, else zero.
pub fn dropout_mask<R: Rng + ?Sized>(shape: &[usize], rate: f64, rng: &mut R) -> Tensor {
    let keep = 1.0 - rate;
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("mask shape")
}
