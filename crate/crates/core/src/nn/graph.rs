//! Tape-based reverse-mode differentiation over row-major matrices.
//!
//! Every op appends a node holding its forward value. [`Graph::backward`]
//! walks the tape in reverse and returns gradients for every node and every
//! parameter (zero for parameters the loss does not reach).
//!
//! `-inf` is a legal value (log of zero probability); NaN and `+inf` poison
//! the graph and are reported with the name of the op that produced them.

use ndarray::{s, Array2, Axis, Zip};

use super::params::{Mat, ParamId, ParamSet};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a custom op: (upstream grad, output value, input values)
/// to one optional gradient per input.
pub type CustomBackward = Box<dyn Fn(&Mat, &Mat, &[&Mat]) -> Vec<Option<Mat>>>;

enum Op {
    Constant,
    Param,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MulConst(NodeId, Mat),
    Scale(NodeId, f64),
    Sigmoid(NodeId),
    Tanh(NodeId),
    LogSigmoid(NodeId),
    SliceCols(NodeId, usize),
    SliceRows(NodeId, usize),
    ConcatRows(Vec<NodeId>),
    GatherRows(NodeId, Vec<usize>),
    LogSoftmax(NodeId),
    GatherSum(NodeId, Vec<usize>, Vec<usize>),
    GatherOpt(NodeId, Vec<Option<usize>>),
    LogAddExp(NodeId, NodeId),
    Sum(NodeId),
    Custom(&'static str, Vec<NodeId>, CustomBackward),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::MulConst(..) => "mul_const",
            Op::Scale(..) => "scale",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::LogSigmoid(_) => "log_sigmoid",
            Op::SliceCols(..) => "slice_cols",
            Op::SliceRows(..) => "slice_rows",
            Op::ConcatRows(_) => "concat_rows",
            Op::GatherRows(..) => "gather_rows",
            Op::LogSoftmax(_) => "log_softmax",
            Op::GatherSum(..) => "gather_sum",
            Op::GatherOpt(..) => "gather_opt",
            Op::LogAddExp(..) => "log_add_exp",
            Op::Sum(_) => "sum",
            Op::Custom(name, ..) => name,
        }
    }
}

enum Value {
    Owned(Mat),
    Param(ParamId),
}

pub struct Graph<'p> {
    params: &'p ParamSet,
    values: Vec<Value>,
    ops: Vec<Op>,
    param_nodes: Vec<Option<NodeId>>,
    poisoned: Option<String>,
}

pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Row-wise log-softmax with max subtraction.
pub fn log_softmax_rows(x: &Mat) -> Mat {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Graph {
            params,
            values: Vec::new(),
            ops: Vec::new(),
            param_nodes: vec![None; params.len()],
            poisoned: None,
        }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, n: NodeId) -> &Mat {
        match &self.values[n.0] {
            Value::Owned(m) => m,
            Value::Param(p) => self.params.get(*p),
        }
    }

    pub fn scalar(&self, n: NodeId) -> f64 {
        let v = self.value(n);
        assert_eq!(v.dim(), (1, 1), "scalar() on non-scalar node");
        v[[0, 0]]
    }

    /// Fails if any op so far produced NaN or `+inf`.
    pub fn check(&self) -> Result<()> {
        match &self.poisoned {
            Some(op) => Err(Error::NonFinite { op: op.clone() }),
            None => Ok(()),
        }
    }

    fn push(&mut self, op: Op, value: Mat) -> NodeId {
        if self.poisoned.is_none() && value.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            self.poisoned = Some(op.name().to_string());
        }
        self.values.push(Value::Owned(value));
        self.ops.push(op);
        NodeId(self.ops.len() - 1)
    }

    pub fn constant(&mut self, value: Mat) -> NodeId {
        self.push(Op::Constant, value)
    }

    pub fn param(&mut self, p: ParamId) -> NodeId {
        if let Some(n) = self.param_nodes[p.0] {
            return n;
        }
        self.values.push(Value::Param(p));
        self.ops.push(Op::Param);
        let n = NodeId(self.ops.len() - 1);
        self.param_nodes[p.0] = Some(n);
        n
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.ncols(), vb.nrows(), "matmul: inner dimensions differ");
        let v = va.dot(vb);
        self.push(Op::MatMul(a, b), v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.dim(), vb.dim(), "add: shape mismatch");
        let v = va + vb;
        self.push(Op::Add(a, b), v)
    }

    /// `a + row`, broadcasting a `1 x c` row over every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (va, vr) = (self.value(a), self.value(row));
        assert_eq!(vr.nrows(), 1, "add_row: bias must be a single row");
        assert_eq!(va.ncols(), vr.ncols(), "add_row: width mismatch");
        let v = va + vr;
        self.push(Op::AddRow(a, row), v)
    }

    /// `x W + b` for parameters `W`, `b`.
    pub fn affine(&mut self, x: NodeId, w: ParamId, b: ParamId) -> NodeId {
        let w = self.param(w);
        let b = self.param(b);
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.dim(), vb.dim(), "mul: shape mismatch");
        let v = va * vb;
        self.push(Op::Mul(a, b), v)
    }

    pub fn mul_const(&mut self, a: NodeId, c: Mat) -> NodeId {
        assert_eq!(self.value(a).dim(), c.dim(), "mul_const: shape mismatch");
        let v = self.value(a) * &c;
        self.push(Op::MulConst(a, c), v)
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a) * s;
        self.push(Op::Scale(a, s), v)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.scale(a, -1.0)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(sigmoid);
        self.push(Op::Sigmoid(a), v)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn log_sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(log_sigmoid);
        self.push(Op::LogSigmoid(a), v)
    }

    pub fn slice_cols(&mut self, a: NodeId, lo: usize, hi: usize) -> NodeId {
        let v = self.value(a).slice(s![.., lo..hi]).to_owned();
        self.push(Op::SliceCols(a, lo), v)
    }

    pub fn slice_rows(&mut self, a: NodeId, lo: usize, hi: usize) -> NodeId {
        let v = self.value(a).slice(s![lo..hi, ..]).to_owned();
        self.push(Op::SliceRows(a, lo), v)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows: width mismatch");
        self.push(Op::ConcatRows(parts.to_vec()), v)
    }

    /// Row selection (embedding lookup when `a` is a table).
    pub fn gather_rows(&mut self, a: NodeId, rows: Vec<usize>) -> NodeId {
        let v = self.value(a).select(Axis(0), &rows);
        self.push(Op::GatherRows(a, rows), v)
    }

    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        let v = log_softmax_rows(self.value(a));
        self.push(Op::LogSoftmax(a), v)
    }

    /// Column vector whose entry `i` is the sum of the row-major entries of
    /// `a` listed in `groups[i]`.
    pub fn gather_sum(&mut self, a: NodeId, groups: &[Vec<usize>]) -> NodeId {
        let mut offsets = Vec::with_capacity(groups.len() + 1);
        let mut flat = Vec::new();
        offsets.push(0);
        for g in groups {
            flat.extend_from_slice(g);
            offsets.push(flat.len());
        }
        self.gather_sum_flat(a, offsets, flat)
    }

    /// [`gather_sum`](Self::gather_sum) with groups given in CSR form.
    pub fn gather_sum_flat(&mut self, a: NodeId, offsets: Vec<usize>, flat: Vec<usize>) -> NodeId {
        let va = self.value(a);
        let src = va.as_slice().expect("gather_sum: non-contiguous input");
        let n = offsets.len() - 1;
        let v = Mat::from_shape_fn((n, 1), |(i, _)| {
            flat[offsets[i]..offsets[i + 1]].iter().map(|&j| src[j]).sum()
        });
        self.push(Op::GatherSum(a, offsets, flat), v)
    }

    /// Column vector of selected row-major entries; `None` gives `-inf`.
    pub fn gather_opt(&mut self, a: NodeId, idx: Vec<Option<usize>>) -> NodeId {
        let va = self.value(a);
        let src = va.as_slice().expect("gather_opt: non-contiguous input");
        let v = Mat::from_shape_fn((idx.len(), 1), |(i, _)| {
            idx[i].map_or(f64::NEG_INFINITY, |j| src[j])
        });
        self.push(Op::GatherOpt(a, idx), v)
    }

    pub fn log_add_exp(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.dim(), vb.dim(), "log_add_exp: shape mismatch");
        let mut v = va.clone();
        Zip::from(&mut v).and(vb).for_each(|x, &y| *x = log_add_exp(*x, y));
        self.push(Op::LogAddExp(a, b), v)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Mat::from_elem((1, 1), self.value(a).sum());
        self.push(Op::Sum(a), v)
    }

    /// Adds an op whose forward value was computed by the caller.
    pub fn custom(
        &mut self,
        name: &'static str,
        inputs: Vec<NodeId>,
        value: Mat,
        backward: CustomBackward,
    ) -> NodeId {
        self.push(Op::Custom(name, inputs, backward), value)
    }

    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        self.check()?;
        assert_eq!(self.value(loss).dim(), (1, 1), "backward from non-scalar");
        let mut grads: Vec<Option<Mat>> = (0..self.ops.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::ones((1, 1)));

        fn acc(grads: &mut [Option<Mat>], n: NodeId, g: Mat) {
            match &mut grads[n.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let out = self.value(NodeId(i));
            match &self.ops[i] {
                Op::Constant | Op::Param => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::AddRow(a, r) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *r, gr);
                    acc(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MulConst(a, c) => acc(&mut grads, *a, &g * c),
                Op::Scale(a, s) => acc(&mut grads, *a, &g * *s),
                Op::Sigmoid(a) => {
                    let mut ga = g.clone();
                    Zip::from(&mut ga).and(out).for_each(|x, &y| *x *= y * (1.0 - y));
                    acc(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let mut ga = g.clone();
                    Zip::from(&mut ga).and(out).for_each(|x, &y| *x *= 1.0 - y * y);
                    acc(&mut grads, *a, ga);
                }
                Op::LogSigmoid(a) => {
                    let mut ga = g.clone();
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|x, &z| *x *= sigmoid(-z));
                    acc(&mut grads, *a, ga);
                }
                Op::SliceCols(a, lo) => {
                    let mut ga = Mat::zeros(self.value(*a).dim());
                    ga.slice_mut(s![.., *lo..*lo + g.ncols()]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::SliceRows(a, lo) => {
                    let mut ga = Mat::zeros(self.value(*a).dim());
                    ga.slice_mut(s![*lo..*lo + g.nrows(), ..]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatRows(parts) => {
                    let mut row = 0;
                    for p in parts {
                        let r = self.value(*p).nrows();
                        acc(&mut grads, *p, g.slice(s![row..row + r, ..]).to_owned());
                        row += r;
                    }
                }
                Op::GatherRows(a, rows) => {
                    let mut ga = Mat::zeros(self.value(*a).dim());
                    for (k, &r) in rows.iter().enumerate() {
                        let mut dst = ga.row_mut(r);
                        dst += &g.row(k);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LogSoftmax(a) => {
                    let mut ga = g.clone();
                    for (mut grow, orow) in ga.rows_mut().into_iter().zip(out.rows()) {
                        let total: f64 = grow.sum();
                        Zip::from(&mut grow)
                            .and(&orow)
                            .for_each(|x, &lp| *x -= lp.exp() * total);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::GatherSum(a, offsets, flat) => {
                    let mut ga = Mat::zeros(self.value(*a).dim());
                    let dst = ga.as_slice_mut().unwrap();
                    for k in 0..offsets.len() - 1 {
                        let gk = g[[k, 0]];
                        for &j in &flat[offsets[k]..offsets[k + 1]] {
                            dst[j] += gk;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::GatherOpt(a, idx) => {
                    let mut ga = Mat::zeros(self.value(*a).dim());
                    let dst = ga.as_slice_mut().unwrap();
                    for (k, j) in idx.iter().enumerate() {
                        if let Some(j) = j {
                            dst[*j] += g[[k, 0]];
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LogAddExp(a, b) => {
                    let weight = |x: f64, y: f64| if x == f64::NEG_INFINITY { 0.0 } else { (x - y).exp() };
                    let mut ga = g.clone();
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .and(out)
                        .for_each(|x, &v, &o| *x *= weight(v, o));
                    let mut gb = g.clone();
                    Zip::from(&mut gb)
                        .and(self.value(*b))
                        .and(out)
                        .for_each(|x, &v, &o| *x *= weight(v, o));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Sum(a) => {
                    let ga = Mat::from_elem(self.value(*a).dim(), g[[0, 0]]);
                    acc(&mut grads, *a, ga);
                }
                Op::Custom(_, inputs, backward) => {
                    let vals: Vec<&Mat> = inputs.iter().map(|&n| self.value(n)).collect();
                    for (n, gi) in inputs.iter().zip(backward(&g, out, &vals)) {
                        if let Some(gi) = gi {
                            acc(&mut grads, *n, gi);
                        }
                    }
                }
            }
            if let Some(bad) = self.first_non_finite(&grads, i) {
                return Err(Error::NonFinite {
                    op: format!("backward of {}", bad),
                });
            }
            grads[i] = Some(g);
        }

        let params = self
            .params
            .ids()
            .map(|p| match self.param_nodes[p.0] {
                Some(n) => grads[n.0]
                    .clone()
                    .unwrap_or_else(|| Mat::zeros(self.params.get(p).dim())),
                None => Mat::zeros(self.params.get(p).dim()),
            })
            .collect();
        Ok(Gradients { nodes: grads, params })
    }

    fn first_non_finite(&self, grads: &[Option<Mat>], op_index: usize) -> Option<&'static str> {
        let inputs: Vec<NodeId> = match &self.ops[op_index] {
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Mul(a, b) | Op::LogAddExp(a, b) => {
                vec![*a, *b]
            }
            Op::MulConst(a, _)
            | Op::Scale(a, _)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::LogSigmoid(a)
            | Op::SliceCols(a, _)
            | Op::SliceRows(a, _)
            | Op::GatherRows(a, _)
            | Op::LogSoftmax(a)
            | Op::GatherSum(a, ..)
            | Op::GatherOpt(a, _)
            | Op::Sum(a) => vec![*a],
            Op::ConcatRows(parts) => parts.clone(),
            Op::Custom(_, inputs, _) => inputs.clone(),
            Op::Constant | Op::Param => vec![],
        };
        inputs
            .iter()
            .filter_map(|n| grads[n.0].as_ref())
            .any(|g| g.iter().any(|v| !v.is_finite()))
            .then(|| self.ops[op_index].name())
    }
}

pub struct Gradients {
    nodes: Vec<Option<Mat>>,
    params: Vec<Mat>,
}

impl Gradients {
    /// Gradient of the loss with respect to a node, if the node was reached.
    pub fn node(&self, n: NodeId) -> Option<&Mat> {
        self.nodes.get(n.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, p: ParamId) -> &Mat {
        &self.params[p.0]
    }

    pub fn into_params(self) -> Vec<Mat> {
        self.params
    }
}

/// Elementwise sum of gradient lists, e.g. across micro-batches.
pub fn add_grads(into: &mut [Mat], other: &[Mat]) {
    for (a, b) in into.iter_mut().zip(other) {
        *a += b;
    }
}

pub fn zeros_like(params: &ParamSet) -> Vec<Mat> {
    params
        .values()
        .iter()
        .map(|v| Array2::zeros(v.dim()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Mat::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
    }

    /// Central differences of `f` with respect to parameter `p`.
    fn numeric_grad(params: &mut ParamSet, p: ParamId, f: &dyn Fn(&ParamSet) -> f64) -> Mat {
        let eps = 1e-5;
        let mut out = Mat::zeros(params.get(p).dim());
        for idx in 0..out.len() {
            let orig = params.get(p).as_slice().unwrap()[idx];
            params.get_mut(p).as_slice_mut().unwrap()[idx] = orig + eps;
            let up = f(params);
            params.get_mut(p).as_slice_mut().unwrap()[idx] = orig - eps;
            let down = f(params);
            params.get_mut(p).as_slice_mut().unwrap()[idx] = orig;
            out.as_slice_mut().unwrap()[idx] = (up - down) / (2.0 * eps);
        }
        out
    }

    fn assert_close(a: &Mat, b: &Mat, tol: f64) {
        for (x, y) in a.iter().zip(b) {
            let denom = x.abs().max(y.abs()).max(1e-6);
            assert!((x - y).abs() / denom < tol, "{x} vs {y}");
        }
    }

    fn check_op(build: impl Fn(&mut Graph, NodeId, NodeId) -> NodeId, shapes: [(usize, usize); 2]) {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut params = ParamSet::new();
        let a = params.add("a", rand_mat(&mut rng, shapes[0].0, shapes[0].1));
        let b = params.add("b", rand_mat(&mut rng, shapes[1].0, shapes[1].1));
        let loss_of = |ps: &ParamSet| {
            let mut g = Graph::new(ps);
            let (na, nb) = (g.param(a), g.param(b));
            let out = build(&mut g, na, nb);
            // weight outputs so that the gradient is not trivially uniform
            let w = Mat::from_shape_fn(g.value(out).dim(), |(i, j)| 0.3 + 0.1 * i as f64 - 0.05 * j as f64);
            let weighted = g.mul_const(out, w);
            let s = g.sum(weighted);
            (g.scalar(s), {
                let grads = g.backward(s).unwrap();
                (grads.param(a).clone(), grads.param(b).clone())
            })
        };
        let (_, (ga, gb)) = loss_of(&params);
        let f = |ps: &ParamSet| loss_of(ps).0;
        assert_close(&ga, &numeric_grad(&mut params, a, &f), 1e-6);
        assert_close(&gb, &numeric_grad(&mut params, b, &f), 1e-6);
    }

    #[test]
    fn op_gradients() {
        check_op(|g, a, b| g.matmul(a, b), [(3, 4), (4, 2)]);
        check_op(|g, a, b| g.add(a, b), [(2, 3), (2, 3)]);
        check_op(|g, a, b| g.add_row(a, b), [(3, 4), (1, 4)]);
        check_op(|g, a, b| g.mul(a, b), [(2, 3), (2, 3)]);
        check_op(|g, a, _| g.sigmoid(a), [(2, 3), (1, 1)]);
        check_op(|g, a, _| g.tanh(a), [(2, 3), (1, 1)]);
        check_op(|g, a, _| g.log_sigmoid(a), [(2, 3), (1, 1)]);
        check_op(|g, a, _| g.log_softmax(a), [(3, 5), (1, 1)]);
        check_op(|g, a, _| g.slice_cols(a, 1, 3), [(2, 4), (1, 1)]);
        check_op(|g, a, _| g.slice_rows(a, 1, 3), [(4, 2), (1, 1)]);
        check_op(|g, a, b| g.concat_rows(&[a, b, a]), [(2, 3), (1, 3)]);
        check_op(|g, a, _| g.gather_rows(a, vec![2, 0, 2]), [(3, 2), (1, 1)]);
        check_op(|g, a, _| g.gather_sum(a, &[vec![0, 3, 3], vec![5], vec![]]), [(2, 3), (1, 1)]);
        check_op(|g, a, _| g.gather_opt(a, vec![Some(1), Some(4)]), [(2, 3), (1, 1)]);
        check_op(|g, a, b| g.log_add_exp(a, b), [(2, 3), (2, 3)]);
        check_op(
            |g, a, b| {
                let m = g.matmul(a, b);
                let t = g.tanh(m);
                g.scale(t, -2.5)
            },
            [(2, 3), (3, 3)],
        );
    }

    #[test]
    fn sum_of_param_has_unit_gradient() {
        let mut params = ParamSet::new();
        let p = params.add("p", Mat::from_elem((2, 3), 0.7));
        let q = params.add("q", Mat::from_elem((4, 1), 0.1));
        let mut g = Graph::new(&params);
        let n = g.param(p);
        let s = g.sum(n);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.param(p), &Mat::ones((2, 3)));
        assert_eq!(grads.param(q), &Mat::zeros((4, 1)));
    }

    #[test]
    fn log_softmax_is_stable() {
        let params = ParamSet::new();
        let mut g = Graph::new(&params);
        let x = g.constant(Mat::from_shape_vec((2, 2), vec![0.0, 0.0, 1000.0, 0.0]).unwrap());
        let y = g.log_softmax(x);
        let v = g.value(y);
        assert!((v[[0, 0]] + std::f64::consts::LN_2).abs() < 1e-15);
        assert!((v[[0, 1]] + std::f64::consts::LN_2).abs() < 1e-15);
        assert!(v[[1, 0]].abs() < 1e-300);
        assert!((v[[1, 1]] + 1000.0).abs() < 1e-9);
        g.check().unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = g.constant(rand_mat(&mut rng, 1, 5) * 10.0);
        let lz = g.log_softmax(z);
        let total: f64 = g.value(lz).iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nan_poisons_graph() {
        let params = ParamSet::new();
        let mut g = Graph::new(&params);
        let x = g.constant(Mat::from_elem((1, 1), f64::NAN));
        let y = g.tanh(x);
        let s = g.sum(y);
        match g.backward(s) {
            Err(Error::NonFinite { op }) => assert_eq!(op, "constant"),
            other => panic!("expected NonFinite, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn neg_inf_is_a_valid_log_zero() {
        let params = ParamSet::new();
        let mut g = Graph::new(&params);
        let a = g.constant(Mat::from_elem((2, 1), 0.5));
        let table = g.constant(Mat::from_elem((1, 3), -1.0));
        let b = g.gather_opt(table, vec![None, Some(2)]);
        let c = g.log_add_exp(a, b);
        assert_eq!(g.value(c)[[0, 0]], 0.5);
        let s = g.sum(c);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.node(a).unwrap()[[0, 0]], 1.0);
        assert_eq!(grads.node(table).unwrap()[[0, 0]], 0.0);
    }
}
