//! Define-by-run reverse-mode automatic differentiation.
//!
//! A `Graph` is rebuilt for every evaluation: values are computed eagerly as
//! nodes are appended, and `backward` walks the tape in reverse accumulating
//! vector-Jacobian products. Data-dependent control flow (spline bin search,
//! imputation masks) is resolved at build time, so each tape is exact for the
//! values it was built with.

use super::tensor::{matmul_a_bt, matmul_at_b, Tensor};
use super::NumericError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    AddScalar(NodeId),
    Scale(NodeId, f64),
    MatMul(NodeId, NodeId),
    /// Broadcast-add a 1×n row vector to every row.
    AddRow(NodeId, NodeId),
    Relu(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Softplus(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Sqrt(NodeId),
    Square(NodeId),
    Neg(NodeId),
    /// sqrt(x² + eps), a smooth |x|.
    SmoothAbs(NodeId, f64),
    ClampMin(NodeId, f64),
    SumAll(NodeId),
    MeanAll(NodeId),
    /// Row-wise sum: m×n → m×1.
    SumRows(NodeId),
    RowSoftmax(NodeId),
    RowCumsum(NodeId),
    ConcatCols(NodeId, NodeId),
    SliceCols(NodeId, usize, usize),
    /// Per-row column gather: m×n → m×1 picking data[r, idx[r]].
    GatherCols(NodeId, Vec<usize>),
    /// Elementwise multiply by a constant tensor (masks).
    MulConst(NodeId, Tensor),
    /// Elementwise add of a constant tensor (offsets).
    AddConst(NodeId),
    Reshape(NodeId),
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    /// First op that produced a non-finite value, if any.
    poisoned: Option<&'static str>,
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Div(..) => "div",
        Op::AddScalar(..) => "add_scalar",
        Op::Scale(..) => "scale",
        Op::MatMul(..) => "matmul",
        Op::AddRow(..) => "add_row",
        Op::Relu(..) => "relu",
        Op::Tanh(..) => "tanh",
        Op::Sigmoid(..) => "sigmoid",
        Op::Softplus(..) => "softplus",
        Op::Exp(..) => "exp",
        Op::Log(..) => "log",
        Op::Sqrt(..) => "sqrt",
        Op::Square(..) => "square",
        Op::Neg(..) => "neg",
        Op::SmoothAbs(..) => "smooth_abs",
        Op::ClampMin(..) => "clamp_min",
        Op::SumAll(..) => "sum_all",
        Op::MeanAll(..) => "mean_all",
        Op::SumRows(..) => "sum_rows",
        Op::RowSoftmax(..) => "row_softmax",
        Op::RowCumsum(..) => "row_cumsum",
        Op::ConcatCols(..) => "concat_cols",
        Op::SliceCols(..) => "slice_cols",
        Op::GatherCols(..) => "gather_cols",
        Op::MulConst(..) => "mul_const",
        Op::AddConst(..) => "add_const",
        Op::Reshape(..) => "reshape",
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

pub fn softplus(x: f64) -> f64 {
    // log(1 + e^x) without overflow
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        let t = self.value(id);
        assert_eq!(t.len(), 1, "scalar() on non-scalar node");
        t.data[0]
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        if self.poisoned.is_none() && !value.is_finite() {
            self.poisoned = Some(op_name(&op));
        }
        self.nodes.push(Node { op, value, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Leaf tracked for gradients (parameters, differentiable inputs).
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.zip(a, b, |x, y| x + y);
        let rg = self.needs_grad(a) || self.needs_grad(b);
        self.push(Op::Add(a, b), v, rg)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.zip(a, b, |x, y| x - y);
        let rg = self.needs_grad(a) || self.needs_grad(b);
        self.push(Op::Sub(a, b), v, rg)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.zip(a, b, |x, y| x * y);
        let rg = self.needs_grad(a) || self.needs_grad(b);
        self.push(Op::Mul(a, b), v, rg)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.zip(a, b, |x, y| x / y);
        let rg = self.needs_grad(a) || self.needs_grad(b);
        self.push(Op::Div(a, b), v, rg)
    }

    fn zip(&self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        assert!(ta.same_shape(tb), "elementwise shape mismatch");
        let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect();
        Tensor { rows: ta.rows, cols: ta.cols, data }
    }

    fn map(&self, a: NodeId, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.value(a);
        Tensor { rows: ta.rows, cols: ta.cols, data: ta.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.map(a, |x| x + c);
        let rg = self.needs_grad(a);
        self.push(Op::AddScalar(a), v, rg)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.map(a, |x| x * c);
        let rg = self.needs_grad(a);
        self.push(Op::Scale(a, c), v, rg)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        let rg = self.needs_grad(a) || self.needs_grad(b);
        self.push(Op::MatMul(a, b), v, rg)
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (ta, tr) = (self.value(a), self.value(row));
        assert_eq!(tr.rows, 1, "add_row expects a 1×n row vector");
        assert_eq!(ta.cols, tr.cols, "add_row width mismatch");
        let mut v = ta.clone();
        for r in 0..v.rows {
            for c in 0..v.cols {
                v.data[r * v.cols + c] += tr.data[c];
            }
        }
        let rg = self.needs_grad(a) || self.needs_grad(row);
        self.push(Op::AddRow(a, row), v, rg)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.map(a, |x| x.max(0.0));
        let rg = self.needs_grad(a);
        self.push(Op::Relu(a), v, rg)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.map(a, f64::tanh);
        let rg = self.needs_grad(a);
        self.push(Op::Tanh(a), v, rg)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.map(a, sigmoid);
        let rg = self.needs_grad(a);
        self.push(Op::Sigmoid(a), v, rg)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v = self.map(a, softplus);
        let rg = self.needs_grad(a);
        self.push(Op::Softplus(a), v, rg)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.map(a, f64::exp);
        let rg = self.needs_grad(a);
        self.push(Op::Exp(a), v, rg)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let v = self.map(a, f64::ln);
        let rg = self.needs_grad(a);
        self.push(Op::Log(a), v, rg)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let v = self.map(a, f64::sqrt);
        let rg = self.needs_grad(a);
        self.push(Op::Sqrt(a), v, rg)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = self.map(a, |x| x * x);
        let rg = self.needs_grad(a);
        self.push(Op::Square(a), v, rg)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let v = self.map(a, |x| -x);
        let rg = self.needs_grad(a);
        self.push(Op::Neg(a), v, rg)
    }

    pub fn smooth_abs(&mut self, a: NodeId, eps: f64) -> NodeId {
        let v = self.map(a, |x| (x * x + eps).sqrt());
        let rg = self.needs_grad(a);
        self.push(Op::SmoothAbs(a, eps), v, rg)
    }

    pub fn clamp_min(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.map(a, |x| x.max(c));
        let rg = self.needs_grad(a);
        self.push(Op::ClampMin(a, c), v, rg)
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.value(a).data.iter().sum();
        let rg = self.needs_grad(a);
        self.push(Op::SumAll(a), Tensor::from_vec(1, 1, vec![s]), rg)
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let s: f64 = t.data.iter().sum();
        let n = t.len() as f64;
        let rg = self.needs_grad(a);
        self.push(Op::MeanAll(a), Tensor::from_vec(1, 1, vec![s / n]), rg)
    }

    pub fn sum_rows(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let data: Vec<f64> = (0..t.rows).map(|r| t.row(r).iter().sum()).collect();
        let rg = self.needs_grad(a);
        self.push(Op::SumRows(a), Tensor::col_vector(data), rg)
    }

    pub fn row_softmax(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let mut v = Tensor::zeros(t.rows, t.cols);
        for r in 0..t.rows {
            let row = t.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|&x| (x - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            for (c, e) in exps.iter().enumerate() {
                v.data[r * t.cols + c] = e / z;
            }
        }
        let rg = self.needs_grad(a);
        self.push(Op::RowSoftmax(a), v, rg)
    }

    pub fn row_cumsum(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let mut v = Tensor::zeros(t.rows, t.cols);
        for r in 0..t.rows {
            let mut acc = 0.0;
            for c in 0..t.cols {
                acc += t.at(r, c);
                v.set(r, c, acc);
            }
        }
        let rg = self.needs_grad(a);
        self.push(Op::RowCumsum(a), v, rg)
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.rows, tb.rows, "concat_cols row mismatch");
        let mut v = Tensor::zeros(ta.rows, ta.cols + tb.cols);
        for r in 0..ta.rows {
            let dst = v.row_mut(r);
            dst[..ta.cols].copy_from_slice(ta.row(r));
            dst[ta.cols..].copy_from_slice(tb.row(r));
        }
        let rg = self.needs_grad(a) || self.needs_grad(b);
        self.push(Op::ConcatCols(a, b), v, rg)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> NodeId {
        let t = self.value(a);
        assert!(start < end && end <= t.cols, "slice_cols out of range");
        let mut v = Tensor::zeros(t.rows, end - start);
        for r in 0..t.rows {
            v.row_mut(r).copy_from_slice(&t.row(r)[start..end]);
        }
        let rg = self.needs_grad(a);
        self.push(Op::SliceCols(a, start, end), v, rg)
    }

    pub fn gather_cols(&mut self, a: NodeId, indices: Vec<usize>) -> NodeId {
        let t = self.value(a);
        assert_eq!(indices.len(), t.rows, "gather_cols needs one index per row");
        let data: Vec<f64> = indices
            .iter()
            .enumerate()
            .map(|(r, &c)| {
                assert!(c < t.cols, "gather_cols index out of range");
                t.at(r, c)
            })
            .collect();
        let rg = self.needs_grad(a);
        self.push(Op::GatherCols(a, indices), Tensor::col_vector(data), rg)
    }

    pub fn mul_const(&mut self, a: NodeId, mask: Tensor) -> NodeId {
        let t = self.value(a);
        assert!(t.same_shape(&mask), "mul_const shape mismatch");
        let data = t.data.iter().zip(&mask.data).map(|(&x, &m)| x * m).collect();
        let v = Tensor { rows: t.rows, cols: t.cols, data };
        let rg = self.needs_grad(a);
        self.push(Op::MulConst(a, mask), v, rg)
    }

    pub fn add_const(&mut self, a: NodeId, offs: Tensor) -> NodeId {
        let t = self.value(a);
        assert!(t.same_shape(&offs), "add_const shape mismatch");
        let data = t.data.iter().zip(&offs.data).map(|(&x, &o)| x + o).collect();
        let v = Tensor { rows: t.rows, cols: t.cols, data };
        let rg = self.needs_grad(a);
        self.push(Op::AddConst(a), v, rg)
    }

    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> NodeId {
        let t = self.value(a);
        assert_eq!(t.len(), rows * cols, "reshape element count mismatch");
        let v = Tensor::from_vec(rows, cols, t.data.clone());
        let rg = self.needs_grad(a);
        self.push(Op::Reshape(a), v, rg)
    }

    /// Reverse-mode pass from a scalar loss. Returns per-node gradients
    /// (None for nodes not requiring or not receiving gradient).
    pub fn backward(&self, loss: NodeId) -> Result<Vec<Option<Tensor>>, NumericError> {
        if let Some(op) = self.poisoned {
            return Err(NumericError::NonFinite { op });
        }
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_vec(1, 1, vec![1.0]));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate(idx, &g, &mut grads);
            // keep leaf gradients addressable by the caller
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        for g in grads.iter().flatten() {
            if !g.is_finite() {
                return Err(NumericError::NonFinite { op: "backward" });
            }
        }
        Ok(grads)
    }

    fn accumulate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let add_to = |grads: &mut [Option<Tensor>], id: NodeId, delta: Tensor| {
            if !self.needs_grad(id) {
                return;
            }
            match &mut grads[id.0] {
                Some(acc) => {
                    for (a, d) in acc.data.iter_mut().zip(&delta.data) {
                        *a += d;
                    }
                }
                slot @ None => *slot = Some(delta),
            }
        };

        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                add_to(grads, *a, g.clone());
                add_to(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                add_to(grads, *a, g.clone());
                let mut n = g.clone();
                n.data.iter_mut().for_each(|v| *v = -*v);
                add_to(grads, *b, n);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let da = Tensor {
                    rows: g.rows,
                    cols: g.cols,
                    data: g.data.iter().zip(&tb.data).map(|(&gv, &bv)| gv * bv).collect(),
                };
                let db = Tensor {
                    rows: g.rows,
                    cols: g.cols,
                    data: g.data.iter().zip(&ta.data).map(|(&gv, &av)| gv * av).collect(),
                };
                add_to(grads, *a, da);
                add_to(grads, *b, db);
            }
            Op::Div(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let da = Tensor {
                    rows: g.rows,
                    cols: g.cols,
                    data: g.data.iter().zip(&tb.data).map(|(&gv, &bv)| gv / bv).collect(),
                };
                let db = Tensor {
                    rows: g.rows,
                    cols: g.cols,
                    data: g
                        .data
                        .iter()
                        .zip(ta.data.iter().zip(&tb.data))
                        .map(|(&gv, (&av, &bv))| -gv * av / (bv * bv))
                        .collect(),
                };
                add_to(grads, *a, da);
                add_to(grads, *b, db);
            }
            Op::AddScalar(a) => add_to(grads, *a, g.clone()),
            Op::Scale(a, c) => {
                let mut d = g.clone();
                d.data.iter_mut().for_each(|v| *v *= c);
                add_to(grads, *a, d);
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.needs_grad(*a) {
                    add_to(grads, *a, matmul_a_bt(g, tb));
                }
                if self.needs_grad(*b) {
                    add_to(grads, *b, matmul_at_b(ta, g));
                }
            }
            Op::AddRow(a, row) => {
                add_to(grads, *a, g.clone());
                if self.needs_grad(*row) {
                    let mut d = Tensor::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for c in 0..g.cols {
                            d.data[c] += g.at(r, c);
                        }
                    }
                    add_to(grads, *row, d);
                }
            }
            Op::Relu(a) => {
                let ta = self.value(*a);
                let d = Tensor {
                    rows: g.rows,
                    cols: g.cols,
                    data: g
                        .data
                        .iter()
                        .zip(&ta.data)
                        .map(|(&gv, &x)| if x > 0.0 { gv } else { 0.0 })
                        .collect(),
                };
                add_to(grads, *a, d);
            }
            Op::Tanh(a) => {
                let y = &self.nodes[idx].value;
                let d = Tensor {
                    rows: g.rows,
                    cols: g.cols,
                    data: g.data.iter().zip(&y.data).map(|(&gv, &yv)| gv * (1.0 - yv * yv)).collect(),
                };
                add_to(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[idx].value;
                let d = Tensor {
                    rows: g.rows,
                    cols: g.cols,
                    data: g.data.iter().zip(&y.data).map(|(&gv, &yv)| gv * yv * (1.0 - yv)).collect(),
                };
                add_to(grads, *a, d);
            }
            Op::Softplus(a) => {
                let ta = self.value(*a);
                let d = Tensor {
                    rows: g.rows,
                    cols: g.cols,
                    data: g.data.iter().zip(&ta.data).map(|(&gv, &x)| gv * sigmoid(x)).collect(),
                };
                add_to(grads, *a, d);
            }
            Op::Exp(a) => {
                let y = &self.nodes[idx].value;
                let d = Tensor {
                    rows: g.rows,
                    cols: g.cols,
                    data: g.data.iter().zip(&y.data).map(|(&gv, &yv)| gv * yv).collect(),
                };
                add_to(grads, *a, d);
            }
            Op::Log(a) => {
                let ta = self.value(*a);
                let d = Tensor {
                    rows: g.rows,
                    cols: g.cols,
                    data: g.data.iter().zip(&ta.data).map(|(&gv, &x)| gv / x).collect(),
                };
                add_to(grads, *a, d);
            }
            Op::Sqrt(a) => {
                let y = &self.nodes[idx].value;
                let d = Tensor {
                    rows: g.rows,
                    cols: g.cols,
                    data: g.data.iter().zip(&y.data).map(|(&gv, &yv)| gv * 0.5 / yv).collect(),
                };
                add_to(grads, *a, d);
            }
            Op::Square(a) => {
                let ta = self.value(*a);
                let d = Tensor {
                    rows: g.rows,
                    cols: g.cols,
                    data: g.data.iter().zip(&ta.data).map(|(&gv, &x)| gv * 2.0 * x).collect(),
                };
                add_to(grads, *a, d);
            }
            Op::Neg(a) => {
                let mut d = g.clone();
                d.data.iter_mut().for_each(|v| *v = -*v);
                add_to(grads, *a, d);
            }
            Op::SmoothAbs(a, eps) => {
                let ta = self.value(*a);
                let d = Tensor {
                    rows: g.rows,
                    cols: g.cols,
                    data: g
                        .data
                        .iter()
                        .zip(&ta.data)
                        .map(|(&gv, &x)| gv * x / (x * x + eps).sqrt())
                        .collect(),
                };
                add_to(grads, *a, d);
            }
            Op::ClampMin(a, c) => {
                let ta = self.value(*a);
                let d = Tensor {
                    rows: g.rows,
                    cols: g.cols,
                    data: g
                        .data
                        .iter()
                        .zip(&ta.data)
                        .map(|(&gv, &x)| if x > *c { gv } else { 0.0 })
                        .collect(),
                };
                add_to(grads, *a, d);
            }
            Op::SumAll(a) => {
                let ta = self.value(*a);
                add_to(grads, *a, Tensor::filled(ta.rows, ta.cols, g.data[0]));
            }
            Op::MeanAll(a) => {
                let ta = self.value(*a);
                let n = ta.len() as f64;
                add_to(grads, *a, Tensor::filled(ta.rows, ta.cols, g.data[0] / n));
            }
            Op::SumRows(a) => {
                let ta = self.value(*a);
                let mut d = Tensor::zeros(ta.rows, ta.cols);
                for r in 0..ta.rows {
                    let gv = g.data[r];
                    d.row_mut(r).iter_mut().for_each(|v| *v = gv);
                }
                add_to(grads, *a, d);
            }
            Op::RowSoftmax(a) => {
                let y = &self.nodes[idx].value;
                let mut d = Tensor::zeros(y.rows, y.cols);
                for r in 0..y.rows {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(&yv, &gv)| yv * gv).sum();
                    for c in 0..y.cols {
                        d.set(r, c, yr[c] * (gr[c] - dot));
                    }
                }
                add_to(grads, *a, d);
            }
            Op::RowCumsum(a) => {
                let ta = self.value(*a);
                let mut d = Tensor::zeros(ta.rows, ta.cols);
                for r in 0..ta.rows {
                    let gr = g.row(r);
                    let mut acc = 0.0;
                    for c in (0..ta.cols).rev() {
                        acc += gr[c];
                        d.set(r, c, acc);
                    }
                }
                add_to(grads, *a, d);
            }
            Op::ConcatCols(a, b) => {
                let (ca, cb) = (self.value(*a).cols, self.value(*b).cols);
                if self.needs_grad(*a) {
                    let mut da = Tensor::zeros(g.rows, ca);
                    for r in 0..g.rows {
                        da.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                    }
                    add_to(grads, *a, da);
                }
                if self.needs_grad(*b) {
                    let mut db = Tensor::zeros(g.rows, cb);
                    for r in 0..g.rows {
                        db.row_mut(r).copy_from_slice(&g.row(r)[ca..ca + cb]);
                    }
                    add_to(grads, *b, db);
                }
            }
            Op::SliceCols(a, start, _end) => {
                let ta = self.value(*a);
                let mut d = Tensor::zeros(ta.rows, ta.cols);
                for r in 0..g.rows {
                    d.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                }
                add_to(grads, *a, d);
            }
            Op::GatherCols(a, indices) => {
                let ta = self.value(*a);
                let mut d = Tensor::zeros(ta.rows, ta.cols);
                for (r, &c) in indices.iter().enumerate() {
                    d.set(r, c, g.data[r]);
                }
                add_to(grads, *a, d);
            }
            Op::MulConst(a, mask) => {
                let d = Tensor {
                    rows: g.rows,
                    cols: g.cols,
                    data: g.data.iter().zip(&mask.data).map(|(&gv, &m)| gv * m).collect(),
                };
                add_to(grads, *a, d);
            }
            Op::AddConst(a) => add_to(grads, *a, g.clone()),
            Op::Reshape(a) => {
                let ta = self.value(*a);
                add_to(grads, *a, Tensor::from_vec(ta.rows, ta.cols, g.data.clone()));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        // f(w) = w², w = 3 → df/dw = 6
        let mut g = Graph::new();
        let w = g.leaf(Tensor::from_vec(1, 1, vec![3.0]));
        let f = g.square(w);
        let grads = g.backward(f).unwrap();
        assert_eq!(grads[w.0].as_ref().unwrap().data[0], 6.0);
    }

    #[test]
    fn sigmoid_sum_gradient_at_zero() {
        // f(w) = Σ σ(w), w = 0⃗ (len 4) → ∂f/∂w_i = 0.25
        let mut g = Graph::new();
        let w = g.leaf(Tensor::row_vector(vec![0.0; 4]));
        let s = g.sigmoid(w);
        let f = g.sum_all(s);
        let grads = g.backward(f).unwrap();
        for v in &grads[w.0].as_ref().unwrap().data {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn matmul_gradients() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = g.leaf(Tensor::from_vec(3, 2, vec![0.5, -1.0, 2.0, 0.0, 1.0, 1.0]));
        let c = g.matmul(a, b);
        let loss = g.sum_all(c);
        let grads = g.backward(loss).unwrap();
        // d/dA (1ᵀ A B 1) = 1 · (B·1)ᵀ per row
        let da = grads[a.0].as_ref().unwrap();
        assert_eq!(da.data, vec![-0.5, 2.0, 2.0, -0.5, 2.0, 2.0]);
        let db = grads[b.0].as_ref().unwrap();
        assert_eq!(db.data, vec![5.0, 5.0, 7.0, 7.0, 9.0, 9.0]);
    }

    #[test]
    fn nonfinite_is_reported_with_op_name() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::from_vec(1, 1, vec![-1.0]));
        let l = g.log(a); // ln(-1) = NaN
        let s = g.sum_all(l);
        let err = g.backward(s).unwrap_err();
        match err {
            NumericError::NonFinite { op } => assert_eq!(op, "log"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn cumsum_and_softmax_roundtrip_shapes() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::from_vec(2, 3, vec![0.3, -0.1, 0.5, 1.0, 0.0, -1.0]));
        let sm = g.row_softmax(a);
        let cs = g.row_cumsum(sm);
        // last cumsum column of a softmax row is exactly 1
        let v = g.value(cs);
        assert!((v.at(0, 2) - 1.0).abs() < 1e-12);
        assert!((v.at(1, 2) - 1.0).abs() < 1e-12);
        let loss = g.mean_all(cs);
        g.backward(loss).unwrap();
    }
}
