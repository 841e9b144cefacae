//! Reverse-mode automatic differentiation over dense tensors.
//!
//! Define-by-run tape: every op method evaluates eagerly, records the
//! operation, and returns a [`Var`] handle. [`Graph::backward`] replays the
//! tape in reverse, visiting each node exactly once. The op set is closed —
//! exactly what the decomposition pipeline needs — so the gradient-check
//! suite can cover every op exhaustively.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::svd3::{svd3, svd3_backward, Svd3Result};
use crate::tensor::Tensor;

/// Evaluation precision. `Single` rounds every op result through `f32`,
/// mimicking 32-bit training arithmetic; `Double` is used for all
/// verification work.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    Double,
    Single,
}

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn id(&self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddScalar(usize),
    MulScalar(usize, f64),
    Neg(usize),
    Matmul(usize, usize),
    Transpose(usize),
    Sum(usize),
    Mean(usize),
    SumAxis(usize, usize),
    MinAxis {
        a: usize,
        axis: usize,
        arg: Vec<usize>,
    },
    MaxAxis {
        a: usize,
        axis: usize,
        arg: Vec<usize>,
    },
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Abs(usize),
    Tanh(usize),
    Recip(usize),
    Clamp {
        a: usize,
        lo: f64,
        hi: f64,
    },
    Softmax(usize),
    AddRow(usize, usize),
    SubRow(usize, usize),
    MulRow(usize, usize),
    DivRow(usize, usize),
    AddCol(usize, usize),
    ScaleRows(usize, usize),
    RepeatRow(usize),
    ConcatCols(usize, usize),
    SelectCol(usize, usize),
    GatherPerRow {
        a: usize,
        idx: Vec<usize>,
    },
    Reshape(usize),
    Detach(usize),
    Svd3 {
        m: usize,
        res: Svd3Result,
    },
    SvdS(usize),
    SvdV(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients of a scalar root with respect to every tape node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient w.r.t. `v`, or `None` when `v` does not influence the root.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient w.r.t. `v`, with exact zeros for unused parameters.
    pub fn wrt_or_zeros(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shapes[v.0].clone()),
        }
    }
}

/// The gradient tape.
pub struct Graph {
    nodes: Vec<Node>,
    precision: Precision,
    debug_checks: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            precision: Precision::Double,
            debug_checks: false,
        }
    }

    pub fn with_precision(precision: Precision) -> Self {
        Graph {
            nodes: Vec::new(),
            precision,
            debug_checks: false,
        }
    }

    /// Enables NaN/Inf detection on every forward value and backward
    /// gradient.
    pub fn set_debug_checks(&mut self, on: bool) {
        self.debug_checks = on;
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Current value of a node.
    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Differentiable input node.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push_raw(t, Op::Leaf, true)
    }

    /// Non-differentiable constant node.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_raw(t, Op::Leaf, false)
    }

    pub fn constant_scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    fn push_raw(&mut self, mut value: Tensor, op: Op, needs_grad: bool) -> Var {
        if self.precision == Precision::Single {
            value.round_f32();
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var, CoreError> {
        if self.debug_checks && !value.all_finite() {
            return Err(CoreError::non_finite("forward intermediate"));
        }
        let needs = match &op {
            Op::Leaf => false,
            Op::Detach(_) => false,
            op => self.op_inputs(op).iter().any(|&i| self.nodes[i].needs_grad),
        };
        Ok(self.push_raw(value, op, needs))
    }

    fn op_inputs(&self, op: &Op) -> Vec<usize> {
        match op {
            Op::Leaf => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::Matmul(a, b)
            | Op::AddRow(a, b)
            | Op::SubRow(a, b)
            | Op::MulRow(a, b)
            | Op::DivRow(a, b)
            | Op::AddCol(a, b)
            | Op::ScaleRows(a, b)
            | Op::ConcatCols(a, b) => vec![*a, *b],
            Op::AddScalar(a)
            | Op::MulScalar(a, _)
            | Op::Neg(a)
            | Op::Transpose(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumAxis(a, _)
            | Op::MinAxis { a, .. }
            | Op::MaxAxis { a, .. }
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Sqrt(a)
            | Op::Abs(a)
            | Op::Tanh(a)
            | Op::Recip(a)
            | Op::Clamp { a, .. }
            | Op::Softmax(a)
            | Op::RepeatRow(a)
            | Op::SelectCol(a, _)
            | Op::GatherPerRow { a, .. }
            | Op::Reshape(a)
            | Op::Detach(a)
            | Op::Svd3 { m: a, .. }
            | Op::SvdS(a)
            | Op::SvdV(a) => vec![*a],
        }
    }

    fn check_same_shape(&self, a: Var, b: Var, ctx: &str) -> Result<(), CoreError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(CoreError::shape(format!(
                "{ctx}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    // ----- elementwise binary -----

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, CoreError> {
        self.check_same_shape(a, b, "add")?;
        let v = self.value(a).zip(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, CoreError> {
        self.check_same_shape(a, b, "sub")?;
        let v = self.value(a).zip(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, CoreError> {
        self.check_same_shape(a, b, "mul")?;
        let v = self.value(a).zip(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a.0, b.0))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, CoreError> {
        self.check_same_shape(a, b, "div")?;
        let v = self.value(a).zip(self.value(b), |x, y| x / y);
        self.push(v, Op::Div(a.0, b.0))
    }

    // ----- scalar variants -----

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var, CoreError> {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddScalar(a.0))
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Result<Var, CoreError> {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::MulScalar(a.0, c))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, CoreError> {
        let v = self.value(a).map(|x| -x);
        self.push(v, Op::Neg(a.0))
    }

    // ----- linear algebra -----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, CoreError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.rows() {
            return Err(CoreError::shape(format!(
                "matmul: {:?} x {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let v = matmul_tensors(ta, tb);
        self.push(v, Op::Matmul(a.0, b.0))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, CoreError> {
        let t = self.value(a);
        if t.shape().len() != 2 {
            return Err(CoreError::shape("transpose: 2-D input required"));
        }
        let (r, c) = (t.rows(), t.cols());
        let mut out = Tensor::zeros(vec![c, r]);
        for i in 0..r {
            for j in 0..c {
                out.set(j, i, t.at(i, j));
            }
        }
        self.push(out, Op::Transpose(a.0))
    }

    // ----- reductions -----

    pub fn sum(&mut self, a: Var) -> Result<Var, CoreError> {
        let v = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(v, Op::Sum(a.0))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, CoreError> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(CoreError::empty("mean"));
        }
        let v = Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64);
        self.push(v, Op::Mean(a.0))
    }

    /// Sum over one axis of a 2-D tensor. `axis = 0` sums rows into a
    /// length-`cols` vector, `axis = 1` sums columns into length-`rows`.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var, CoreError> {
        let t = self.value(a);
        if t.shape().len() != 2 || axis > 1 {
            return Err(CoreError::shape("sum_axis: 2-D input, axis 0 or 1"));
        }
        let v = reduce_axis(t, axis, |acc, x| acc + x, 0.0);
        self.push(v, Op::SumAxis(a.0, axis))
    }

    /// Min over one axis with straight-through gradient to the argmin
    /// entries. Ties break toward the lower index.
    pub fn min_axis(&mut self, a: Var, axis: usize) -> Result<Var, CoreError> {
        let (v, arg) = self.extremum_axis(a, axis, true)?;
        self.push(v, Op::MinAxis { a: a.0, axis, arg })
    }

    /// Max over one axis with straight-through gradient to the argmax
    /// entries.
    pub fn max_axis(&mut self, a: Var, axis: usize) -> Result<Var, CoreError> {
        let (v, arg) = self.extremum_axis(a, axis, false)?;
        self.push(v, Op::MaxAxis { a: a.0, axis, arg })
    }

    fn extremum_axis(
        &self,
        a: Var,
        axis: usize,
        minimize: bool,
    ) -> Result<(Tensor, Vec<usize>), CoreError> {
        let t = self.value(a);
        if t.shape().len() != 2 || axis > 1 {
            return Err(CoreError::shape("min/max_axis: 2-D input, axis 0 or 1"));
        }
        let (r, c) = (t.rows(), t.cols());
        let out_len = if axis == 1 { r } else { c };
        let in_len = if axis == 1 { c } else { r };
        if in_len == 0 {
            return Err(CoreError::empty("min/max_axis"));
        }
        let mut vals = vec![0.0; out_len];
        let mut arg = vec![0usize; out_len];
        for o in 0..out_len {
            let mut best = if axis == 1 { t.at(o, 0) } else { t.at(0, o) };
            let mut best_i = 0;
            for i in 1..in_len {
                let x = if axis == 1 { t.at(o, i) } else { t.at(i, o) };
                let better = if minimize { x < best } else { x > best };
                if better {
                    best = x;
                    best_i = i;
                }
            }
            vals[o] = best;
            arg[o] = best_i;
        }
        Ok((Tensor::vector(vals), arg))
    }

    // ----- elementwise unary -----

    pub fn exp(&mut self, a: Var) -> Result<Var, CoreError> {
        let v = self.value(a).map(libm::exp);
        self.push(v, Op::Exp(a.0))
    }

    pub fn log(&mut self, a: Var) -> Result<Var, CoreError> {
        let v = self.value(a).map(libm::log);
        self.push(v, Op::Log(a.0))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var, CoreError> {
        let v = self.value(a).map(libm::sqrt);
        self.push(v, Op::Sqrt(a.0))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var, CoreError> {
        let v = self.value(a).map(libm::fabs);
        self.push(v, Op::Abs(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, CoreError> {
        let v = self.value(a).map(libm::tanh);
        self.push(v, Op::Tanh(a.0))
    }

    pub fn recip(&mut self, a: Var) -> Result<Var, CoreError> {
        let v = self.value(a).map(|x| 1.0 / x);
        self.push(v, Op::Recip(a.0))
    }

    /// Clamp with straight-through gradient strictly inside `[lo, hi]` and
    /// zero gradient outside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var, CoreError> {
        let v = self.value(a).map(|x| x.max(lo).min(hi));
        self.push(v, Op::Clamp { a: a.0, lo, hi })
    }

    /// Row-wise softmax of a 2-D tensor, with the row max subtracted before
    /// exponentiation.
    pub fn softmax(&mut self, a: Var) -> Result<Var, CoreError> {
        let t = self.value(a);
        if t.shape().len() != 2 {
            return Err(CoreError::shape("softmax: 2-D input required"));
        }
        let (r, c) = (t.rows(), t.cols());
        let mut out = Tensor::zeros(vec![r, c]);
        for i in 0..r {
            let mut mx = f64::NEG_INFINITY;
            for j in 0..c {
                mx = mx.max(t.at(i, j));
            }
            let mut z = 0.0;
            for j in 0..c {
                let e = libm::exp(t.at(i, j) - mx);
                out.set(i, j, e);
                z += e;
            }
            for j in 0..c {
                out.set(i, j, out.at(i, j) / z);
            }
        }
        self.push(out, Op::Softmax(a.0))
    }

    // ----- broadcast helpers -----

    fn row_broadcast(
        &mut self,
        a: Var,
        row: Var,
        ctx: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, CoreError> {
        let (t, rv) = (self.value(a), self.value(row));
        if t.shape().len() != 2 || rv.len() != t.cols() {
            return Err(CoreError::shape(format!(
                "{ctx}: {:?} with row of len {}",
                t.shape(),
                rv.len()
            )));
        }
        let (r, c) = (t.rows(), t.cols());
        let mut out = Tensor::zeros(vec![r, c]);
        for i in 0..r {
            for j in 0..c {
                out.set(i, j, f(t.at(i, j), rv.data()[j]));
            }
        }
        self.push(out, op)
    }

    /// `out[i,j] = a[i,j] + row[j]`
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, CoreError> {
        self.row_broadcast(a, row, "add_row", |x, y| x + y, Op::AddRow(a.0, row.0))
    }

    /// `out[i,j] = a[i,j] - row[j]`
    pub fn sub_row(&mut self, a: Var, row: Var) -> Result<Var, CoreError> {
        self.row_broadcast(a, row, "sub_row", |x, y| x - y, Op::SubRow(a.0, row.0))
    }

    /// `out[i,j] = a[i,j] * row[j]`
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var, CoreError> {
        self.row_broadcast(a, row, "mul_row", |x, y| x * y, Op::MulRow(a.0, row.0))
    }

    /// `out[i,j] = a[i,j] / row[j]`
    pub fn div_row(&mut self, a: Var, row: Var) -> Result<Var, CoreError> {
        self.row_broadcast(a, row, "div_row", |x, y| x / y, Op::DivRow(a.0, row.0))
    }

    /// `out[i,j] = a[i,j] + col[i]`
    pub fn add_col(&mut self, a: Var, col: Var) -> Result<Var, CoreError> {
        let (t, cv) = (self.value(a), self.value(col));
        if t.shape().len() != 2 || cv.len() != t.rows() {
            return Err(CoreError::shape("add_col"));
        }
        let (r, c) = (t.rows(), t.cols());
        let mut out = Tensor::zeros(vec![r, c]);
        for i in 0..r {
            for j in 0..c {
                out.set(i, j, t.at(i, j) + cv.data()[i]);
            }
        }
        self.push(out, Op::AddCol(a.0, col.0))
    }

    /// `out[i,j] = a[i,j] * w[i]`
    pub fn scale_rows(&mut self, a: Var, w: Var) -> Result<Var, CoreError> {
        let (t, wv) = (self.value(a), self.value(w));
        if t.shape().len() != 2 || wv.len() != t.rows() {
            return Err(CoreError::shape("scale_rows"));
        }
        let (r, c) = (t.rows(), t.cols());
        let mut out = Tensor::zeros(vec![r, c]);
        for i in 0..r {
            for j in 0..c {
                out.set(i, j, t.at(i, j) * wv.data()[i]);
            }
        }
        self.push(out, Op::ScaleRows(a.0, w.0))
    }

    /// Stack a length-`c` vector as `n` identical rows.
    pub fn repeat_row(&mut self, v: Var, n: usize) -> Result<Var, CoreError> {
        let t = self.value(v);
        let c = t.len();
        let mut out = Tensor::zeros(vec![n, c]);
        for i in 0..n {
            for j in 0..c {
                out.set(i, j, t.data()[j]);
            }
        }
        self.push(out, Op::RepeatRow(v.0))
    }

    /// Horizontal concatenation of two matrices with equal row counts.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, CoreError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.rows() != tb.rows() {
            return Err(CoreError::shape("concat_cols"));
        }
        let (r, ca, cb) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = Tensor::zeros(vec![r, ca + cb]);
        for i in 0..r {
            for j in 0..ca {
                out.set(i, j, ta.at(i, j));
            }
            for j in 0..cb {
                out.set(i, ca + j, tb.at(i, j));
            }
        }
        self.push(out, Op::ConcatCols(a.0, b.0))
    }

    /// Column `j` of a matrix as a vector.
    pub fn select_col(&mut self, a: Var, j: usize) -> Result<Var, CoreError> {
        let t = self.value(a);
        if t.shape().len() != 2 || j >= t.cols() {
            return Err(CoreError::shape("select_col"));
        }
        let r = t.rows();
        let mut out = vec![0.0; r];
        for (i, o) in out.iter_mut().enumerate() {
            *o = t.at(i, j);
        }
        self.push(Tensor::vector(out), Op::SelectCol(a.0, j))
    }

    /// `out[i] = a[i, idx[i]]` — one gathered entry per row.
    pub fn gather_per_row(&mut self, a: Var, idx: &[usize]) -> Result<Var, CoreError> {
        let t = self.value(a);
        if t.shape().len() != 2 || idx.len() != t.rows() {
            return Err(CoreError::shape("gather_per_row"));
        }
        if idx.iter().any(|&j| j >= t.cols()) {
            return Err(CoreError::invalid("gather_per_row: index out of range"));
        }
        let out: Vec<f64> = idx.iter().enumerate().map(|(i, &j)| t.at(i, j)).collect();
        self.push(
            Tensor::vector(out),
            Op::GatherPerRow {
                a: a.0,
                idx: idx.to_vec(),
            },
        )
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, CoreError> {
        let t = self.value(a);
        if shape.iter().product::<usize>() != t.len() {
            return Err(CoreError::shape("reshape"));
        }
        let v = Tensor::new(shape, t.data().to_vec())?;
        self.push(v, Op::Reshape(a.0))
    }

    /// Value passthrough with zero gradient; removes a subtree from the
    /// backward pass.
    pub fn detach(&mut self, a: Var) -> Result<Var, CoreError> {
        let v = self.value(a).clone();
        self.push(v, Op::Detach(a.0))
    }

    // ----- SVD -----

    /// SVD of a 3×3 matrix. Returns the singular values (length-3 vector,
    /// descending) and `V` (3×3) as graph nodes. `U` stays outside the
    /// graph; fetch it through [`Graph::svd3_u`] when needed for forward
    /// computation.
    pub fn svd3(&mut self, m: Var) -> Result<(Var, Var), CoreError> {
        let t = self.value(m);
        if t.shape() != [3, 3] {
            return Err(CoreError::shape("svd3: 3x3 input required"));
        }
        let mut mm = [0.0; 9];
        mm.copy_from_slice(t.data());
        let res = svd3(&mm)?;
        let mut packed = Vec::with_capacity(12);
        packed.extend_from_slice(&res.s);
        packed.extend_from_slice(&res.v);
        let node = self.push(Tensor::vector(packed), Op::Svd3 { m: m.0, res })?;
        let s = self.push(
            Tensor::vector(self.nodes[node.0].value.data()[..3].to_vec()),
            Op::SvdS(node.0),
        )?;
        let v = self.push(
            Tensor::new(vec![3, 3], self.nodes[node.0].value.data()[3..].to_vec())?,
            Op::SvdV(node.0),
        )?;
        Ok((s, v))
    }

    /// The `U` factor of the most recent [`Graph::svd3`] call on `packed`
    /// parent of `s_var`. For the symmetric PSD matrices fitted here `U`
    /// equals `V` up to sign; it is exposed for completeness only.
    pub fn svd3_u(&self, s_var: Var) -> Option<&crate::mat3::Mat3> {
        match &self.nodes[s_var.0].op {
            Op::SvdS(p) | Op::SvdV(p) => match &self.nodes[*p].op {
                Op::Svd3 { res, .. } => Some(&res.u),
                _ => None,
            },
            _ => None,
        }
    }

    // ----- backward -----

    /// Reverse sweep from a scalar `root`. Visits each node once in reverse
    /// topological (= tape) order; deterministic for fixed inputs.
    pub fn backward(&self, root: Var) -> Result<Gradients, CoreError> {
        if !self.value(root).is_scalar() {
            return Err(CoreError::shape("backward: root must be a scalar"));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[root.0] = Some(Tensor::filled(
            self.value(root).shape().to_vec(),
            1.0,
        ));

        for i in (0..=root.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            if self.debug_checks && !g.all_finite() {
                return Err(CoreError::non_finite("backward gradient"));
            }
            self.accumulate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        Ok(Gradients {
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            grads,
        })
    }

    fn acc(&self, grads: &mut [Option<Tensor>], target: usize, contribution: Tensor) {
        if !self.nodes[target].needs_grad {
            return;
        }
        match &mut grads[target] {
            Some(t) => t.add_in_place(&contribution),
            slot @ None => *slot = Some(contribution),
        }
    }

    fn accumulate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |id: usize| &self.nodes[id].value;
        match &self.nodes[i].op {
            Op::Leaf | Op::Detach(_) => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                self.acc(grads, *a, g.zip(val(*b), |gg, y| gg * y));
                self.acc(grads, *b, g.zip(val(*a), |gg, x| gg * x));
            }
            Op::Div(a, b) => {
                self.acc(grads, *a, g.zip(val(*b), |gg, y| gg / y));
                let da = g.zip(val(*a), |gg, x| gg * x);
                self.acc(
                    grads,
                    *b,
                    da.zip(val(*b), |gx, y| -gx / (y * y)),
                );
            }
            Op::AddScalar(a) => self.acc(grads, *a, g.clone()),
            Op::MulScalar(a, c) => self.acc(grads, *a, g.map(|x| x * c)),
            Op::Neg(a) => self.acc(grads, *a, g.map(|x| -x)),
            Op::Matmul(a, b) => {
                // dA = G·Bᵀ, dB = Aᵀ·G
                if self.nodes[*a].needs_grad {
                    let bt = transpose_tensor(val(*b));
                    self.acc(grads, *a, matmul_tensors(g, &bt));
                }
                if self.nodes[*b].needs_grad {
                    let at = transpose_tensor(val(*a));
                    self.acc(grads, *b, matmul_tensors(&at, g));
                }
            }
            Op::Transpose(a) => self.acc(grads, *a, transpose_tensor(g)),
            Op::Sum(a) => {
                let gs = g.scalar_value();
                self.acc(grads, *a, Tensor::filled(val(*a).shape().to_vec(), gs));
            }
            Op::Mean(a) => {
                let gs = g.scalar_value() / val(*a).len() as f64;
                self.acc(grads, *a, Tensor::filled(val(*a).shape().to_vec(), gs));
            }
            Op::SumAxis(a, axis) => {
                let t = val(*a);
                let mut out = Tensor::zeros_like(t);
                for r in 0..t.rows() {
                    for c in 0..t.cols() {
                        let gi = if *axis == 1 { g.data()[r] } else { g.data()[c] };
                        out.set(r, c, gi);
                    }
                }
                self.acc(grads, *a, out);
            }
            Op::MinAxis { a, axis, arg } | Op::MaxAxis { a, axis, arg } => {
                let t = val(*a);
                let mut out = Tensor::zeros_like(t);
                for (o, &best) in arg.iter().enumerate() {
                    if *axis == 1 {
                        out.set(o, best, g.data()[o]);
                    } else {
                        out.set(best, o, g.data()[o]);
                    }
                }
                self.acc(grads, *a, out);
            }
            Op::Exp(a) => self.acc(grads, *a, g.zip(&self.nodes[i].value, |gg, y| gg * y)),
            Op::Log(a) => self.acc(grads, *a, g.zip(val(*a), |gg, x| gg / x)),
            Op::Sqrt(a) => {
                self.acc(
                    grads,
                    *a,
                    g.zip(&self.nodes[i].value, |gg, y| gg / (2.0 * y)),
                );
            }
            Op::Abs(a) => self.acc(
                grads,
                *a,
                g.zip(val(*a), |gg, x| {
                    if x > 0.0 {
                        gg
                    } else if x < 0.0 {
                        -gg
                    } else {
                        0.0
                    }
                }),
            ),
            Op::Tanh(a) => self.acc(
                grads,
                *a,
                g.zip(&self.nodes[i].value, |gg, y| gg * (1.0 - y * y)),
            ),
            Op::Recip(a) => self.acc(grads, *a, g.zip(val(*a), |gg, x| -gg / (x * x))),
            Op::Clamp { a, lo, hi } => self.acc(
                grads,
                *a,
                g.zip(val(*a), |gg, x| if x < *lo || x > *hi { 0.0 } else { gg }),
            ),
            Op::Softmax(a) => {
                let y = &self.nodes[i].value;
                let (r, c) = (y.rows(), y.cols());
                let mut out = Tensor::zeros_like(y);
                for row in 0..r {
                    let mut dot = 0.0;
                    for j in 0..c {
                        dot += g.at(row, j) * y.at(row, j);
                    }
                    for j in 0..c {
                        out.set(row, j, y.at(row, j) * (g.at(row, j) - dot));
                    }
                }
                self.acc(grads, *a, out);
            }
            Op::AddRow(a, row) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *row, col_sums(g));
            }
            Op::SubRow(a, row) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *row, col_sums(g).map(|x| -x));
            }
            Op::MulRow(a, row) => {
                let t = val(*a);
                let rv = val(*row);
                if self.nodes[*a].needs_grad {
                    let mut da = Tensor::zeros_like(t);
                    for r in 0..t.rows() {
                        for c in 0..t.cols() {
                            da.set(r, c, g.at(r, c) * rv.data()[c]);
                        }
                    }
                    self.acc(grads, *a, da);
                }
                if self.nodes[*row].needs_grad {
                    let mut dr = vec![0.0; rv.len()];
                    for r in 0..t.rows() {
                        for c in 0..t.cols() {
                            dr[c] += g.at(r, c) * t.at(r, c);
                        }
                    }
                    self.acc(grads, *row, Tensor::vector(dr));
                }
            }
            Op::DivRow(a, row) => {
                let t = val(*a);
                let rv = val(*row);
                if self.nodes[*a].needs_grad {
                    let mut da = Tensor::zeros_like(t);
                    for r in 0..t.rows() {
                        for c in 0..t.cols() {
                            da.set(r, c, g.at(r, c) / rv.data()[c]);
                        }
                    }
                    self.acc(grads, *a, da);
                }
                if self.nodes[*row].needs_grad {
                    let mut dr = vec![0.0; rv.len()];
                    for r in 0..t.rows() {
                        for c in 0..t.cols() {
                            let v = rv.data()[c];
                            dr[c] -= g.at(r, c) * t.at(r, c) / (v * v);
                        }
                    }
                    self.acc(grads, *row, Tensor::vector(dr));
                }
            }
            Op::AddCol(a, col) => {
                self.acc(grads, *a, g.clone());
                if self.nodes[*col].needs_grad {
                    let mut dc = vec![0.0; val(*col).len()];
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            dc[r] += g.at(r, c);
                        }
                    }
                    self.acc(grads, *col, Tensor::vector(dc));
                }
            }
            Op::ScaleRows(a, w) => {
                let t = val(*a);
                let wv = val(*w);
                if self.nodes[*a].needs_grad {
                    let mut da = Tensor::zeros_like(t);
                    for r in 0..t.rows() {
                        for c in 0..t.cols() {
                            da.set(r, c, g.at(r, c) * wv.data()[r]);
                        }
                    }
                    self.acc(grads, *a, da);
                }
                if self.nodes[*w].needs_grad {
                    let mut dw = vec![0.0; wv.len()];
                    for r in 0..t.rows() {
                        for c in 0..t.cols() {
                            dw[r] += g.at(r, c) * t.at(r, c);
                        }
                    }
                    self.acc(grads, *w, Tensor::vector(dw));
                }
            }
            Op::RepeatRow(v) => self.acc(grads, *v, col_sums_into_shape(g, val(*v))),
            Op::ConcatCols(a, b) => {
                let (ca, cb) = (val(*a).cols(), val(*b).cols());
                let r = g.rows();
                if self.nodes[*a].needs_grad {
                    let mut da = Tensor::zeros(vec![r, ca]);
                    for i2 in 0..r {
                        for j in 0..ca {
                            da.set(i2, j, g.at(i2, j));
                        }
                    }
                    self.acc(grads, *a, da);
                }
                if self.nodes[*b].needs_grad {
                    let mut db = Tensor::zeros(vec![r, cb]);
                    for i2 in 0..r {
                        for j in 0..cb {
                            db.set(i2, j, g.at(i2, ca + j));
                        }
                    }
                    self.acc(grads, *b, db);
                }
            }
            Op::SelectCol(a, j) => {
                let t = val(*a);
                let mut da = Tensor::zeros_like(t);
                for r in 0..t.rows() {
                    da.set(r, *j, g.data()[r]);
                }
                self.acc(grads, *a, da);
            }
            Op::GatherPerRow { a, idx } => {
                let t = val(*a);
                let mut da = Tensor::zeros_like(t);
                for (r, &j) in idx.iter().enumerate() {
                    da.set(r, j, g.data()[r]);
                }
                self.acc(grads, *a, da);
            }
            Op::Reshape(a) => {
                let v = Tensor::new(val(*a).shape().to_vec(), g.data().to_vec())
                    .expect("reshape backward shape");
                self.acc(grads, *a, v);
            }
            Op::Svd3 { m, res } => {
                let mut dl_ds = [0.0; 3];
                dl_ds.copy_from_slice(&g.data()[..3]);
                let mut dl_dv = [0.0; 9];
                dl_dv.copy_from_slice(&g.data()[3..]);
                let dm = svd3_backward(res, &dl_ds, &dl_dv);
                self.acc(
                    grads,
                    *m,
                    Tensor::new(vec![3, 3], dm.to_vec()).expect("svd3 backward shape"),
                );
            }
            Op::SvdS(p) => {
                let mut packed = Tensor::zeros(vec![12]);
                packed.data_mut()[..3].copy_from_slice(g.data());
                self.acc(grads, *p, packed);
            }
            Op::SvdV(p) => {
                let mut packed = Tensor::zeros(vec![12]);
                packed.data_mut()[3..].copy_from_slice(g.data());
                self.acc(grads, *p, packed);
            }
        }
    }
}

fn matmul_tensors(a: &Tensor, b: &Tensor) -> Tensor {
    let (r, k, c) = (a.rows(), a.cols(), b.cols());
    let mut out = Tensor::zeros(vec![r, c]);
    for i in 0..r {
        for kk in 0..k {
            let av = a.at(i, kk);
            if av == 0.0 {
                continue;
            }
            for j in 0..c {
                let cur = out.at(i, j);
                out.set(i, j, cur + av * b.at(kk, j));
            }
        }
    }
    out
}

fn transpose_tensor(t: &Tensor) -> Tensor {
    let (r, c) = (t.rows(), t.cols());
    let mut out = Tensor::zeros(vec![c, r]);
    for i in 0..r {
        for j in 0..c {
            out.set(j, i, t.at(i, j));
        }
    }
    out
}

fn col_sums(g: &Tensor) -> Tensor {
    let mut out = vec![0.0; g.cols()];
    for r in 0..g.rows() {
        for c in 0..g.cols() {
            out[c] += g.at(r, c);
        }
    }
    Tensor::vector(out)
}

fn col_sums_into_shape(g: &Tensor, like: &Tensor) -> Tensor {
    let sums = col_sums(g);
    Tensor::new(like.shape().to_vec(), sums.data().to_vec()).expect("repeat_row backward shape")
}

fn reduce_axis(t: &Tensor, axis: usize, f: impl Fn(f64, f64) -> f64, init: f64) -> Tensor {
    let (r, c) = (t.rows(), t.cols());
    if axis == 1 {
        let mut out = vec![init; r];
        for i in 0..r {
            for j in 0..c {
                out[i] = f(out[i], t.at(i, j));
            }
        }
        Tensor::vector(out)
    } else {
        let mut out = vec![init; c];
        for i in 0..r {
            for j in 0..c {
                out[j] = f(out[j], t.at(i, j));
            }
        }
        Tensor::vector(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_forward_and_backward() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        assert_eq!(g.value(y).scalar_value(), 9.0);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.wrt(x).unwrap().scalar_value(), 6.0);
    }

    #[test]
    fn identity_product_sums_to_two() {
        let mut g = Graph::new();
        let eye = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let a = g.leaf(eye.clone());
        let b = g.leaf(eye);
        let c = g.matmul(a, b).unwrap();
        let s = g.sum(c).unwrap();
        assert_eq!(g.value(s).scalar_value(), 2.0);
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn unused_parameter_gets_exact_zeros() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(2.0));
        let unused = g.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert!(grads.wrt(unused).is_none());
        assert_eq!(grads.wrt_or_zeros(unused).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(2.0));
        let d = g.detach(x).unwrap();
        let y = g.mul(d, d).unwrap();
        let grads = g.backward(y).unwrap();
        assert!(grads.wrt(x).is_none());
    }

    #[test]
    fn min_axis_routes_gradient_to_argmin() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::matrix(2, 3, vec![3.0, 1.0, 2.0, 0.5, 4.0, 0.5]).unwrap());
        let m = g.min_axis(a, 1).unwrap();
        assert_eq!(g.value(m).data(), &[1.0, 0.5]);
        let s = g.sum(m).unwrap();
        let grads = g.backward(s).unwrap();
        // tie in row 1 breaks toward column 0
        let expected = [0.0, 1.0, 0.0, 1.0, 0.0, 0.0];
        assert_eq!(grads.wrt(a).unwrap().data(), &expected);
    }

    #[test]
    fn debug_mode_flags_non_finite_forward() {
        let mut g = Graph::new();
        g.set_debug_checks(true);
        let x = g.leaf(Tensor::scalar(-1.0));
        assert!(g.log(x).is_err());
    }

    #[test]
    fn single_precision_rounds_values() {
        let mut g = Graph::with_precision(Precision::Single);
        let x = g.leaf(Tensor::scalar(1.0));
        let y = g.add_scalar(x, 1e-12).unwrap();
        assert_eq!(g.value(y).scalar_value(), 1.0);
    }

    #[test]
    fn backward_is_deterministic() {
        let build = || {
            let mut g = Graph::new();
            let a = g.leaf(Tensor::matrix(2, 2, vec![0.3, -1.2, 2.0, 0.7]).unwrap());
            let b = g.leaf(Tensor::matrix(2, 2, vec![1.1, 0.4, -0.6, 0.9]).unwrap());
            let c = g.matmul(a, b).unwrap();
            let e = g.exp(c).unwrap();
            let s = g.sum(e).unwrap();
            let grads = g.backward(s).unwrap();
            (
                grads.wrt(a).unwrap().data().to_vec(),
                grads.wrt(b).unwrap().data().to_vec(),
            )
        };
        let (a1, b1) = build();
        let (a2, b2) = build();
        // bitwise identical
        assert!(a1.iter().zip(&a2).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(b1.iter().zip(&b2).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
