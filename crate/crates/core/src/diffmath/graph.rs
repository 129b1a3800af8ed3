use std::rc::Rc;

use super::tensor::{gemm, MatRef};
use super::{DiffError, SparseMatrix, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ConcatCols(Vec<Var>),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Log(Var),
    LogSigmoid(Var),
    Mean(Var),
    Sum(Var),
    Dropout(Var, Rc<Tensor>),
    SparseMatMul(Rc<SparseMatrix>, Var),
    GatherRows(Var, Rc<Vec<usize>>),
    Pick(Var, Rc<Vec<usize>>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recording graph for reverse-mode differentiation.
///
/// Each forward op appends a node holding its value and the rule needed to
/// push adjoints back to its inputs. A graph can be differentiated once.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Adjoints produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `shape` if the loss does not depend on it.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape.0, shape.1))
    }
}

fn finite(op: &'static str, t: Tensor) -> Result<Tensor, DiffError> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(DiffError::NonFinite { op })
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), DiffError> {
    if a.shape() != b.shape() {
        return Err(DiffError::ShapeMismatch {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("shapes checked")
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(sigmoid(x))` without overflow.
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn row_log_softmax(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Result<Var, DiffError> {
        let value = finite("param", value)?;
        Ok(self.push(value, Op::Leaf, true))
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var, DiffError> {
        let value = finite("constant", value)?;
        Ok(self.push(value, Op::Leaf, false))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let out = finite("matmul", self.value(a).matmul(self.value(b))?)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        same_shape("add", self.value(a), self.value(b))?;
        let out = finite("add", zip_map(self.value(a), self.value(b), |x, y| x + y))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, DiffError> {
        let (av, bv) = (self.value(a), self.value(row));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(DiffError::ShapeMismatch {
                op: "add_row",
                left: av.shape(),
                right: bv.shape(),
            });
        }
        let mut out = av.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let out = finite("add_row", out)?;
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(out, Op::AddRow(a, row), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        same_shape("sub", self.value(a), self.value(b))?;
        let out = finite("sub", zip_map(self.value(a), self.value(b), |x, y| x - y))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        same_shape("mul", self.value(a), self.value(b))?;
        let out = finite("mul", zip_map(self.value(a), self.value(b), |x, y| x * y))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var, DiffError> {
        let out = finite("scale", self.value(a).map(|x| x * s))?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Scale(a, s), rg))
    }

    /// Horizontal concatenation of equally tall inputs.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let rows = parts.first().map_or(0, |&p| self.value(p).rows());
        let mut cols = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(DiffError::ShapeMismatch {
                    op: "concat",
                    left: (rows, cols),
                    right: v.shape(),
                });
            }
            cols += v.cols();
        }
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let src = self.nodes[p.0].value.row(r);
                out.row_mut(r)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var, DiffError> {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        let rg = self.rg(a);
        Ok(self.push(finite("leaky_relu", out)?, Op::LeakyRelu(a, slope), rg))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, DiffError> {
        let out = finite("sigmoid", self.value(a).map(sigmoid))?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Sigmoid(a), rg))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, DiffError> {
        let out = finite("tanh", self.value(a).map(f64::tanh))?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Tanh(a), rg))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Result<Var, DiffError> {
        let out = finite("softmax", row_log_softmax(self.value(a)).map(f64::exp))?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Softmax(a), rg))
    }

    /// Row-wise log-softmax, computed with the max-shift.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var, DiffError> {
        let out = finite("log_softmax", row_log_softmax(self.value(a)))?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::LogSoftmax(a), rg))
    }

    pub fn log(&mut self, a: Var) -> Result<Var, DiffError> {
        let out = finite("log", self.value(a).map(f64::ln))?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Log(a), rg))
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Result<Var, DiffError> {
        let out = finite("log_sigmoid", self.value(a).map(log_sigmoid))?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::LogSigmoid(a), rg))
    }

    /// Mean over every element, as a `1 x 1`.
    pub fn mean(&mut self, a: Var) -> Result<Var, DiffError> {
        let v = self.value(a);
        if v.is_empty() {
            return Err(DiffError::Empty { op: "mean" });
        }
        let out = v.data().iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(a);
        Ok(self.push(finite("mean", Tensor::scalar(out))?, Op::Mean(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, DiffError> {
        let out = self.value(a).data().iter().sum::<f64>();
        let rg = self.rg(a);
        Ok(self.push(finite("sum", Tensor::scalar(out))?, Op::Sum(a), rg))
    }

    /// Inverted dropout with an explicit keep-mask of zeros and ones.
    pub fn dropout(&mut self, a: Var, mask: &Tensor, p: f64) -> Result<Var, DiffError> {
        same_shape("dropout", self.value(a), mask)?;
        let keep = 1.0 - p;
        if keep <= 0.0 {
            return Err(DiffError::InvalidArgument {
                op: "dropout",
                reason: format!("drop probability {p} leaves nothing"),
            });
        }
        let scaled = Rc::new(mask.map(|m| m / keep));
        let out = finite("dropout", zip_map(self.value(a), &scaled, |x, m| x * m))?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Dropout(a, scaled), rg))
    }

    /// Constant sparse matrix times `x`.
    pub fn sparse_matmul(&mut self, s: &Rc<SparseMatrix>, x: Var) -> Result<Var, DiffError> {
        let out = finite("sparse_matmul", s.matmul(self.value(x))?)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::SparseMatMul(Rc::clone(s), x), rg))
    }

    /// Stacks `table[idx[i]]` for every `i`.
    pub fn gather_rows(&mut self, table: Var, idx: &Rc<Vec<usize>>) -> Result<Var, DiffError> {
        let t = self.value(table);
        let mut out = Tensor::zeros(idx.len(), t.cols());
        for (i, &j) in idx.iter().enumerate() {
            if j >= t.rows() {
                return Err(DiffError::IndexOutOfBounds {
                    op: "gather_rows",
                    index: j,
                    bound: t.rows(),
                });
            }
            out.row_mut(i).copy_from_slice(t.row(j));
        }
        let rg = self.rg(table);
        Ok(self.push(out, Op::GatherRows(table, Rc::clone(idx)), rg))
    }

    /// Column `idx[r]` of each row `r`, as an `n x 1`.
    pub fn pick(&mut self, a: Var, idx: &Rc<Vec<usize>>) -> Result<Var, DiffError> {
        let t = self.value(a);
        if idx.len() != t.rows() {
            return Err(DiffError::ShapeMismatch {
                op: "pick",
                left: t.shape(),
                right: (idx.len(), 1),
            });
        }
        let mut out = Tensor::zeros(t.rows(), 1);
        for (r, &c) in idx.iter().enumerate() {
            if c >= t.cols() {
                return Err(DiffError::IndexOutOfBounds {
                    op: "pick",
                    index: c,
                    bound: t.cols(),
                });
            }
            out.set(r, 0, t.get(r, c));
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::Pick(a, Rc::clone(idx)), rg))
    }

    /// Reverse sweep from a scalar `loss`. Allowed once per graph.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, DiffError> {
        if self.consumed {
            return Err(DiffError::AlreadyBackpropagated);
        }
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(DiffError::NonScalar { shape });
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *g = None;
            } else if let Some(t) = g {
                if !t.is_finite() {
                    return Err(DiffError::NonFinite { op: "backward" });
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                    *e += d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &self.nodes[id].value;
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.rg(*a) {
                    let mut da = Tensor::zeros(m, k);
                    gemm(
                        m,
                        n,
                        k,
                        MatRef::new(g.data(), n, false),
                        MatRef::new(bv.data(), n, true),
                        da.data_mut(),
                        false,
                    );
                    self.accumulate(grads, *a, da);
                }
                if self.rg(*b) {
                    let mut db = Tensor::zeros(k, n);
                    gemm(
                        k,
                        m,
                        n,
                        MatRef::new(av.data(), k, true),
                        MatRef::new(g.data(), n, false),
                        db.data_mut(),
                        false,
                    );
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                let mut db = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (d, x) in db.data_mut().iter_mut().zip(g.row(r)) {
                        *d += x;
                    }
                }
                self.accumulate(grads, *row, db);
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, zip_map(g, bv, |x, y| x * y));
                self.accumulate(grads, *b, zip_map(g, av, |x, y| x * y));
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.map(|x| x * s)),
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let cols = self.value(p).cols();
                    let mut d = Tensor::zeros(g.rows(), cols);
                    for r in 0..g.rows() {
                        d.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                    }
                    self.accumulate(grads, p, d);
                    offset += cols;
                }
            }
            Op::LeakyRelu(a, slope) => {
                let d = zip_map(g, self.value(*a), |x, y| if y > 0.0 { x } else { slope * x });
                self.accumulate(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                self.accumulate(grads, *a, zip_map(g, out, |x, s| x * s * (1.0 - s)));
            }
            Op::Tanh(a) => {
                self.accumulate(grads, *a, zip_map(g, out, |x, t| x * (1.0 - t * t)));
            }
            Op::Softmax(a) => {
                let mut d = Tensor::zeros(g.rows(), g.cols());
                for r in 0..g.rows() {
                    let (gr, sr) = (g.row(r), out.row(r));
                    let dot: f64 = gr.iter().zip(sr).map(|(x, s)| x * s).sum();
                    for (c, o) in d.row_mut(r).iter_mut().enumerate() {
                        *o = sr[c] * (gr[c] - dot);
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::LogSoftmax(a) => {
                let mut d = Tensor::zeros(g.rows(), g.cols());
                for r in 0..g.rows() {
                    let (gr, lr) = (g.row(r), out.row(r));
                    let total: f64 = gr.iter().sum();
                    for (c, o) in d.row_mut(r).iter_mut().enumerate() {
                        *o = gr[c] - lr[c].exp() * total;
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::Log(a) => {
                self.accumulate(grads, *a, zip_map(g, self.value(*a), |x, y| x / y));
            }
            Op::LogSigmoid(a) => {
                let d = zip_map(g, self.value(*a), |x, y| x * sigmoid(-y));
                self.accumulate(grads, *a, d);
            }
            Op::Mean(a) => {
                let v = self.value(*a);
                let each = g.data()[0] / v.len() as f64;
                self.accumulate(grads, *a, Tensor::full(v.rows(), v.cols(), each));
            }
            Op::Sum(a) => {
                let v = self.value(*a);
                self.accumulate(grads, *a, Tensor::full(v.rows(), v.cols(), g.data()[0]));
            }
            Op::Dropout(a, mask) => {
                self.accumulate(grads, *a, zip_map(g, mask, |x, m| x * m));
            }
            Op::SparseMatMul(s, x) => {
                self.accumulate(grads, *x, s.transpose_matmul(g));
            }
            Op::GatherRows(table, idx) => {
                let t = self.value(*table);
                let mut d = Tensor::zeros(t.rows(), t.cols());
                for (i, &j) in idx.iter().enumerate() {
                    for (o, x) in d.row_mut(j).iter_mut().zip(g.row(i)) {
                        *o += x;
                    }
                }
                self.accumulate(grads, *table, d);
            }
            Op::Pick(a, idx) => {
                let t = self.value(*a);
                let mut d = Tensor::zeros(t.rows(), t.cols());
                for (r, &c) in idx.iter().enumerate() {
                    d.set(r, c, g.get(r, 0));
                }
                self.accumulate(grads, *a, d);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_graph(x: f64) -> (Graph, Var) {
        let mut g = Graph::new();
        let v = g.param(Tensor::scalar(x)).unwrap();
        (g, v)
    }

    #[test]
    fn sigmoid_at_zero() {
        let (mut g, x) = scalar_graph(0.0);
        let y = g.sigmoid(x).unwrap();
        assert_eq!(g.value(y).item().unwrap(), 0.5);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item().unwrap(), 0.25);
    }

    #[test]
    fn leaky_relu_negative_branch() {
        let (mut g, x) = scalar_graph(-2.0);
        let y = g.leaky_relu(x, 0.01).unwrap();
        assert!((g.value(y).item().unwrap() + 0.02).abs() < 1e-15);
    }

    #[test]
    fn softmax_equal_logits() {
        let mut g = Graph::new();
        let x = g.param(Tensor::full(1, 4, 3.7)).unwrap();
        let y = g.softmax(x).unwrap();
        for &p in g.value(y).data() {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn mean_gradient_is_one_over_n() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap()).unwrap();
        let m = g.mean(x).unwrap();
        let grads = g.backward(m).unwrap();
        for &d in grads.get(x).unwrap().data() {
            assert!((d - 1.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn second_backward_rejected() {
        let (mut g, x) = scalar_graph(1.0);
        let y = g.sigmoid(x).unwrap();
        g.backward(y).unwrap();
        assert!(matches!(g.backward(y), Err(DiffError::AlreadyBackpropagated)));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros(2, 2)).unwrap();
        assert!(matches!(g.backward(x), Err(DiffError::NonScalar { .. })));
    }

    #[test]
    fn non_finite_trips() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(0.0)).unwrap();
        assert!(matches!(g.log(x), Err(DiffError::NonFinite { .. })));
        assert!(g.param(Tensor::scalar(f64::NAN)).is_err());
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::scalar(2.0)).unwrap();
        let x = g.param(Tensor::scalar(3.0)).unwrap();
        let y = g.mul(c, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap().item().unwrap(), 2.0);
    }

    #[test]
    fn log_sigmoid_is_stable() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(1, 3, vec![-800.0, 0.0, 800.0]).unwrap()).unwrap();
        let y = g.log_sigmoid(x).unwrap();
        let v = g.value(y).data().to_vec();
        assert_eq!(v[0], -800.0);
        assert!((v[1] + std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(v[2], 0.0);
    }

    #[test]
    fn shape_mismatch_reported() {
        let mut g = Graph::new();
        let a = g.param(Tensor::zeros(2, 3)).unwrap();
        let b = g.param(Tensor::zeros(3, 2)).unwrap();
        assert!(matches!(g.add(a, b), Err(DiffError::ShapeMismatch { .. })));
        assert!(g.matmul(a, b).is_ok());
    }
}
