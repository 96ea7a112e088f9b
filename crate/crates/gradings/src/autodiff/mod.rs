//! Reverse-mode automatic differentiation over dense row-major matrices.
//!
//! A [`Tape`] records a dynamic computation graph; every operation checks its
//! result for NaN/Inf and fails with the offending op's name. [`Tape::backward`]
//! walks the graph once in reverse from a scalar output and accumulates exact
//! gradients for every node, including leaves registered for parameters.

mod adam;
mod layers;

pub use adam::{AdamConfig, AdamState};
pub use layers::{
    build_made_masks, Activation, DenseLayer, MadeMaskSet, MadeNetwork, Mlp,
};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Dense row-major matrix of f64. Vectors are 1-row or 1-column tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "shape/data length mismatch");
        Self { rows, cols, data }
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_vec(1, 1, vec![v])
    }

    pub fn row(values: &[f64]) -> Self {
        Self::from_vec(1, values.len(), values.to_vec())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn same_shape(&self, other: &Tensor) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// value = x @ w^T, x: [n,i], w: [o,i]
    MatMulT { x: NodeId, w: NodeId },
    /// value = x @ (w .* mask)^T
    MaskedMatMulT { x: NodeId, w: NodeId, mask: Tensor },
    /// broadcast a 1-row bias over every row of x
    AddRow { x: NodeId, b: NodeId },
    Tanh { x: NodeId },
    Relu { x: NodeId },
    Exp { x: NodeId },
    Neg { x: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: f64 },
    AddConst { x: NodeId },
    /// value = x * s where s is a 1x1 node (learnable scalar)
    MulScalar { x: NodeId, s: NodeId },
    SliceCols { x: NodeId, start: usize },
    ConcatCols { a: NodeId, b: NodeId },
    ReverseCols { x: NodeId },
    /// [n,c] -> [n,1]
    SumCols { x: NodeId },
    SumAll { x: NodeId },
    MeanAll { x: NodeId },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Gradients per node after a backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the backward root with respect to node `id`; zero tensor
    /// shape is only materialized for nodes actually touched by backprop.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }
}

/// Records a computation for one forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a leaf (input or parameter).
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push_unchecked(Op::Leaf, value)
    }

    fn push_unchecked(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op, value: Tensor, name: &'static str) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        Ok(self.push_unchecked(op, value))
    }

    pub fn matmul_t(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        let (xv, wv) = (self.value(x), self.value(w));
        assert_eq!(xv.cols, wv.cols, "matmul_t inner dimension");
        let value = matmul_t_raw(xv, wv, None);
        self.push(Op::MatMulT { x, w }, value, "matmul_t")
    }

    pub fn masked_matmul_t(&mut self, x: NodeId, w: NodeId, mask: &Tensor) -> Result<NodeId> {
        let (xv, wv) = (self.value(x), self.value(w));
        assert_eq!(xv.cols, wv.cols, "masked_matmul_t inner dimension");
        assert!(wv.same_shape(mask), "mask shape must match weights");
        let value = matmul_t_raw(xv, wv, Some(mask));
        self.push(
            Op::MaskedMatMulT {
                x,
                w,
                mask: mask.clone(),
            },
            value,
            "masked_matmul_t",
        )
    }

    pub fn add_row(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (xv, bv) = (self.value(x), self.value(b));
        assert_eq!(bv.rows, 1, "bias must be a single row");
        assert_eq!(xv.cols, bv.cols, "bias width");
        let mut value = xv.clone();
        for r in 0..value.rows {
            for c in 0..value.cols {
                value.data[r * value.cols + c] += bv.data[c];
            }
        }
        self.push(Op::AddRow { x, b }, value, "add_row")
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        let value = self.map_unary(x, f64::tanh);
        self.push(Op::Tanh { x }, value, "tanh")
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let value = self.map_unary(x, |v| if v > 0.0 { v } else { 0.0 });
        self.push(Op::Relu { x }, value, "relu")
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId> {
        let value = self.map_unary(x, f64::exp);
        self.push(Op::Exp { x }, value, "exp")
    }

    pub fn neg(&mut self, x: NodeId) -> Result<NodeId> {
        let value = self.map_unary(x, |v| -v);
        self.push(Op::Neg { x }, value, "neg")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.zip_binary(a, b, |x, y| x + y);
        self.push(Op::Add { a, b }, value, "add")
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.zip_binary(a, b, |x, y| x - y);
        self.push(Op::Sub { a, b }, value, "sub")
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.zip_binary(a, b, |x, y| x * y);
        self.push(Op::Mul { a, b }, value, "mul")
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        let value = self.map_unary(x, |v| v * c);
        self.push(Op::Scale { x, c }, value, "scale")
    }

    pub fn add_const(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        let value = self.map_unary(x, |v| v + c);
        self.push(Op::AddConst { x }, value, "add_const")
    }

    pub fn mul_scalar(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        let sv = self.value(s);
        assert_eq!((sv.rows, sv.cols), (1, 1), "scalar factor must be 1x1");
        let c = sv.data[0];
        let value = self.map_unary(x, |v| v * c);
        self.push(Op::MulScalar { x, s }, value, "mul_scalar")
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let xv = self.value(x);
        assert!(start + len <= xv.cols, "column slice out of range");
        let mut value = Tensor::zeros(xv.rows, len);
        for r in 0..xv.rows {
            let src = &xv.data[r * xv.cols + start..r * xv.cols + start + len];
            value.data[r * len..(r + 1) * len].copy_from_slice(src);
        }
        self.push(Op::SliceCols { x, start }, value, "slice_cols")
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.rows, bv.rows, "concat_cols row count");
        let cols = av.cols + bv.cols;
        let mut value = Tensor::zeros(av.rows, cols);
        for r in 0..av.rows {
            value.data[r * cols..r * cols + av.cols]
                .copy_from_slice(&av.data[r * av.cols..(r + 1) * av.cols]);
            value.data[r * cols + av.cols..(r + 1) * cols]
                .copy_from_slice(&bv.data[r * bv.cols..(r + 1) * bv.cols]);
        }
        self.push(Op::ConcatCols { a, b }, value, "concat_cols")
    }

    pub fn reverse_cols(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let mut value = xv.clone();
        for r in 0..value.rows {
            value.data[r * value.cols..(r + 1) * value.cols].reverse();
        }
        self.push(Op::ReverseCols { x }, value, "reverse_cols")
    }

    pub fn sum_cols(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let mut value = Tensor::zeros(xv.rows, 1);
        for r in 0..xv.rows {
            value.data[r] = xv.row_slice(r).iter().sum();
        }
        self.push(Op::SumCols { x }, value, "sum_cols")
    }

    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        let total: f64 = self.value(x).data.iter().sum();
        self.push(Op::SumAll { x }, Tensor::scalar(total), "sum_all")
    }

    pub fn mean_all(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let mean = xv.data.iter().sum::<f64>() / xv.len() as f64;
        self.push(Op::MeanAll { x }, Tensor::scalar(mean), "mean_all")
    }

    fn map_unary(&self, x: NodeId, f: impl Fn(f64) -> f64) -> Tensor {
        let xv = self.value(x);
        Tensor {
            rows: xv.rows,
            cols: xv.cols,
            data: xv.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_binary(&self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (av, bv) = (self.value(a), self.value(b));
        assert!(av.same_shape(bv), "elementwise shape mismatch");
        Tensor {
            rows: av.rows,
            cols: av.cols,
            data: av.data.iter().zip(&bv.data).map(|(&x, &y)| f(x, y)).collect(),
        }
    }

    /// Reverse pass from a scalar (1x1) output node.
    pub fn backward(&self, out: NodeId) -> Result<Gradients> {
        let ov = self.value(out);
        assert_eq!((ov.rows, ov.cols), (1, 1), "backward root must be scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=out.0).rev() {
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            self.accumulate(idx, &gy, &mut grads)?;
            grads[idx] = Some(gy);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, idx: usize, gy: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let add_to = |grads: &mut [Option<Tensor>], id: NodeId, delta: Tensor| {
            match &mut grads[id.0] {
                Some(g) => {
                    for (a, b) in g.data.iter_mut().zip(&delta.data) {
                        *a += b;
                    }
                }
                slot => {
                    *slot = Some(delta);
                }
            }
        };

        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMulT { x, w } => {
                // y = x w^T: dx = gy w; dw = gy^T x
                let (xv, wv) = (self.value(*x), self.value(*w));
                add_to(grads, *x, matmul_raw(gy, wv));
                add_to(grads, *w, matmul_at_b(gy, xv));
            }
            Op::MaskedMatMulT { x, w, mask } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let masked_w = hadamard(wv, mask);
                add_to(grads, *x, matmul_raw(gy, &masked_w));
                let mut gw = matmul_at_b(gy, xv);
                for (g, m) in gw.data.iter_mut().zip(&mask.data) {
                    *g *= m;
                }
                add_to(grads, *w, gw);
            }
            Op::AddRow { x, b } => {
                add_to(grads, *x, gy.clone());
                let mut gb = Tensor::zeros(1, gy.cols);
                for r in 0..gy.rows {
                    for c in 0..gy.cols {
                        gb.data[c] += gy.data[r * gy.cols + c];
                    }
                }
                add_to(grads, *b, gb);
            }
            Op::Tanh { x } => {
                let yv = &self.nodes[idx].value;
                let gx = Tensor {
                    rows: gy.rows,
                    cols: gy.cols,
                    data: gy
                        .data
                        .iter()
                        .zip(&yv.data)
                        .map(|(&g, &y)| g * (1.0 - y * y))
                        .collect(),
                };
                add_to(grads, *x, gx);
            }
            Op::Relu { x } => {
                let xv = self.value(*x);
                let gx = Tensor {
                    rows: gy.rows,
                    cols: gy.cols,
                    data: gy
                        .data
                        .iter()
                        .zip(&xv.data)
                        .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
                        .collect(),
                };
                add_to(grads, *x, gx);
            }
            Op::Exp { x } => {
                let yv = &self.nodes[idx].value;
                add_to(grads, *x, hadamard(gy, yv));
            }
            Op::Neg { x } => {
                add_to(grads, *x, scaled(gy, -1.0));
            }
            Op::Add { a, b } => {
                add_to(grads, *a, gy.clone());
                add_to(grads, *b, gy.clone());
            }
            Op::Sub { a, b } => {
                add_to(grads, *a, gy.clone());
                add_to(grads, *b, scaled(gy, -1.0));
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                add_to(grads, *a, hadamard(gy, bv));
                add_to(grads, *b, hadamard(gy, av));
            }
            Op::Scale { x, c } => {
                add_to(grads, *x, scaled(gy, *c));
            }
            Op::AddConst { x } => {
                add_to(grads, *x, gy.clone());
            }
            Op::MulScalar { x, s } => {
                let (xv, sv) = (self.value(*x), self.value(*s));
                add_to(grads, *x, scaled(gy, sv.data[0]));
                let ds: f64 = gy.data.iter().zip(&xv.data).map(|(&g, &v)| g * v).sum();
                add_to(grads, *s, Tensor::scalar(ds));
            }
            Op::SliceCols { x, start } => {
                let xv = self.value(*x);
                let mut gx = Tensor::zeros(xv.rows, xv.cols);
                for r in 0..gy.rows {
                    for c in 0..gy.cols {
                        gx.data[r * xv.cols + start + c] += gy.data[r * gy.cols + c];
                    }
                }
                add_to(grads, *x, gx);
            }
            Op::ConcatCols { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut ga = Tensor::zeros(av.rows, av.cols);
                let mut gb = Tensor::zeros(bv.rows, bv.cols);
                for r in 0..gy.rows {
                    for c in 0..av.cols {
                        ga.data[r * av.cols + c] = gy.data[r * gy.cols + c];
                    }
                    for c in 0..bv.cols {
                        gb.data[r * bv.cols + c] = gy.data[r * gy.cols + av.cols + c];
                    }
                }
                add_to(grads, *a, ga);
                add_to(grads, *b, gb);
            }
            Op::ReverseCols { x } => {
                let mut gx = gy.clone();
                for r in 0..gx.rows {
                    gx.data[r * gx.cols..(r + 1) * gx.cols].reverse();
                }
                add_to(grads, *x, gx);
            }
            Op::SumCols { x } => {
                let xv = self.value(*x);
                let mut gx = Tensor::zeros(xv.rows, xv.cols);
                for r in 0..xv.rows {
                    for c in 0..xv.cols {
                        gx.data[r * xv.cols + c] = gy.data[r];
                    }
                }
                add_to(grads, *x, gx);
            }
            Op::SumAll { x } => {
                let xv = self.value(*x);
                let g = gy.data[0];
                add_to(
                    grads,
                    *x,
                    Tensor {
                        rows: xv.rows,
                        cols: xv.cols,
                        data: vec![g; xv.len()],
                    },
                );
            }
            Op::MeanAll { x } => {
                let xv = self.value(*x);
                let g = gy.data[0] / xv.len() as f64;
                add_to(
                    grads,
                    *x,
                    Tensor {
                        rows: xv.rows,
                        cols: xv.cols,
                        data: vec![g; xv.len()],
                    },
                );
            }
        }
        Ok(())
    }
}

fn matmul_t_raw(x: &Tensor, w: &Tensor, mask: Option<&Tensor>) -> Tensor {
    let (n, inner, out) = (x.rows, x.cols, w.rows);
    let mut y = Tensor::zeros(n, out);
    for r in 0..n {
        let xr = x.row_slice(r);
        for o in 0..out {
            let wr = w.row_slice(o);
            let dot = match mask {
                None => xr.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>(),
                Some(m) => {
                    let mr = m.row_slice(o);
                    let mut acc = 0.0;
                    for k in 0..inner {
                        acc += xr[k] * wr[k] * mr[k];
                    }
                    acc
                }
            };
            y.data[r * out + o] = dot;
        }
    }
    y
}

/// Plain a @ b: [n,k] x [k,m] -> [n,m]
fn matmul_raw(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols, b.rows);
    let mut y = Tensor::zeros(a.rows, b.cols);
    for r in 0..a.rows {
        for k in 0..a.cols {
            let av = a.data[r * a.cols + k];
            if av == 0.0 {
                continue;
            }
            let brow = b.row_slice(k);
            let yrow = &mut y.data[r * b.cols..(r + 1) * b.cols];
            for (yv, bv) in yrow.iter_mut().zip(brow) {
                *yv += av * bv;
            }
        }
    }
    y
}

/// a^T @ b: [n,p]^T x [n,q] -> [p,q]
fn matmul_at_b(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.rows, b.rows);
    let mut y = Tensor::zeros(a.cols, b.cols);
    for n in 0..a.rows {
        let arow = a.row_slice(n);
        let brow = b.row_slice(n);
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let yrow = &mut y.data[p * b.cols..(p + 1) * b.cols];
            for (yv, bv) in yrow.iter_mut().zip(brow) {
                *yv += av * bv;
            }
        }
    }
    y
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    Tensor {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect(),
    }
}

fn scaled(a: &Tensor, c: f64) -> Tensor {
    Tensor {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().map(|x| x * c).collect(),
    }
}
