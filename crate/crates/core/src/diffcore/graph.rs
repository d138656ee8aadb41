//! Tape-based reverse-mode differentiation over [`Array`] values.
//!
//! A [`Graph`] records every operation as a node whose parents were created
//! earlier, so node ids are already a topological order and the backward
//! sweep is a single reverse scan. Nodes built only from constants carry no
//! gradient and are skipped entirely on the way back.

use std::cell::RefCell;
use std::rc::Rc;

use super::array::Array;
use super::kernels::{col2im, gemm, im2col, sigmoid, softplus};
use crate::error::{Error, Result};

/// Norm guard used by [`Graph::cosine_rows`].
pub const COSINE_EPS: f64 = 1e-8;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Kind of a recorded node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpTag {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    AddRow,
    MulCol,
    Scale,
    AddScalar,
    MatMul,
    Sin,
    Cos,
    Exp,
    Log,
    Relu,
    Softplus,
    Sigmoid,
    ClampMin,
    Concat,
    Gather,
    Reshape,
    Transpose,
    Sum,
    Mean,
    SumAxis,
    CumsumExclusive,
    Conv2d,
    AvgPool2,
    CosineRows,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Sin(Var),
    Cos(Var),
    Exp(Var),
    Log(Var),
    Relu(Var),
    Softplus(Var),
    Sigmoid(Var),
    ClampMin(Var, f64),
    Concat(Vec<Var>),
    Gather(Var, Rc<Vec<usize>>),
    Reshape(Var),
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    CumsumExclusive(Var),
    Conv2d(Var, Var, Var),
    AvgPool2(Var),
    CosineRows(Var, Var),
}

impl Op {
    fn tag(&self) -> OpTag {
        match self {
            Op::Leaf => OpTag::Leaf,
            Op::Add(..) => OpTag::Add,
            Op::Sub(..) => OpTag::Sub,
            Op::Mul(..) => OpTag::Mul,
            Op::Div(..) => OpTag::Div,
            Op::AddRow(..) => OpTag::AddRow,
            Op::MulCol(..) => OpTag::MulCol,
            Op::Scale(..) => OpTag::Scale,
            Op::AddScalar(..) => OpTag::AddScalar,
            Op::MatMul(..) => OpTag::MatMul,
            Op::Sin(..) => OpTag::Sin,
            Op::Cos(..) => OpTag::Cos,
            Op::Exp(..) => OpTag::Exp,
            Op::Log(..) => OpTag::Log,
            Op::Relu(..) => OpTag::Relu,
            Op::Softplus(..) => OpTag::Softplus,
            Op::Sigmoid(..) => OpTag::Sigmoid,
            Op::ClampMin(..) => OpTag::ClampMin,
            Op::Concat(..) => OpTag::Concat,
            Op::Gather(..) => OpTag::Gather,
            Op::Reshape(..) => OpTag::Reshape,
            Op::Transpose(..) => OpTag::Transpose,
            Op::Sum(..) => OpTag::Sum,
            Op::Mean(..) => OpTag::Mean,
            Op::SumAxis(..) => OpTag::SumAxis,
            Op::CumsumExclusive(..) => OpTag::CumsumExclusive,
            Op::Conv2d(..) => OpTag::Conv2d,
            Op::AvgPool2(..) => OpTag::AvgPool2,
            Op::CosineRows(..) => OpTag::CosineRows,
        }
    }
}

struct Node {
    value: Rc<Array>,
    /// Accumulated gradient; only kept for leaves.
    grad: Option<Array>,
    op: Op,
    requires_grad: bool,
}

/// Recording tape. Build values with the op methods, then call
/// [`Graph::backward`] on a scalar root.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

fn shape_err(op: &'static str, shapes: &[&[usize]]) -> Error {
    let parts: Vec<String> = shapes.iter().map(|s| format!("{s:?}")).collect();
    Error::shape(op, parts.join(" vs "))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Array, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            grad: None,
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    /// Differentiable input.
    pub fn leaf(&self, value: Array) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&self, value: Array) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf sharing storage with the caller (parameters are bound this way
    /// so large tables are not copied per step).
    pub fn shared(&self, value: Rc<Array>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            grad: None,
            op: Op::Leaf,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> Rc<Array> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> f64 {
        self.nodes.borrow()[v.0].value.item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, `None` if no backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<Array> {
        self.nodes.borrow()[v.0].grad.clone()
    }

    /// Moves the accumulated gradient out of a leaf.
    pub fn take_grad(&self, v: Var) -> Option<Array> {
        self.nodes.borrow_mut()[v.0].grad.take()
    }

    /// Op kinds in recording order.
    pub fn op_tags(&self) -> Vec<OpTag> {
        self.nodes.borrow().iter().map(|n| n.op.tag()).collect()
    }

    fn rg(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    fn unary(&self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(x).map(f);
        let rg = self.rg(&[x]);
        self.push(out, op, rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(Rc<Array>, Rc<Array>)> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err(op, &[va.shape(), vb.shape()]));
        }
        Ok((va, vb))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = self.same_shape("add", a, b)?;
        Ok(self.push(va.zip_map(&vb, |x, y| x + y), Op::Add(a, b), self.rg(&[a, b])))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = self.same_shape("sub", a, b)?;
        Ok(self.push(va.zip_map(&vb, |x, y| x - y), Op::Sub(a, b), self.rg(&[a, b])))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = self.same_shape("mul", a, b)?;
        Ok(self.push(va.zip_map(&vb, |x, y| x * y), Op::Mul(a, b), self.rg(&[a, b])))
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = self.same_shape("div", a, b)?;
        Ok(self.push(va.zip_map(&vb, |x, y| x / y), Op::Div(a, b), self.rg(&[a, b])))
    }

    /// `[n,k] + [k]`, broadcasting the row vector over all rows.
    pub fn add_row(&self, x: Var, row: Var) -> Result<Var> {
        let (vx, vr) = (self.value(x), self.value(row));
        if vx.rank() != 2 || vr.len() != vx.shape()[1] {
            return Err(shape_err("add_row", &[vx.shape(), vr.shape()]));
        }
        let k = vr.len();
        let mut out = (*vx).clone();
        for chunk in out.data_mut().chunks_mut(k.max(1)) {
            for (o, b) in chunk.iter_mut().zip(vr.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(x, row), self.rg(&[x, row])))
    }

    /// `[n,k] * [n]`, scaling each row by one entry of the column.
    pub fn mul_col(&self, x: Var, col: Var) -> Result<Var> {
        let (vx, vc) = (self.value(x), self.value(col));
        if vx.rank() != 2 || vc.len() != vx.shape()[0] {
            return Err(shape_err("mul_col", &[vx.shape(), vc.shape()]));
        }
        let k = vx.shape()[1];
        let mut out = (*vx).clone();
        if k > 0 {
            for (chunk, c) in out.data_mut().chunks_mut(k).zip(vc.data()) {
                for o in chunk {
                    *o *= c;
                }
            }
        }
        Ok(self.push(out, Op::MulCol(x, col), self.rg(&[x, col])))
    }

    pub fn scale(&self, x: Var, s: f64) -> Var {
        self.unary(x, |v| v * s, Op::Scale(x, s))
    }

    pub fn add_scalar(&self, x: Var, s: f64) -> Var {
        self.unary(x, |v| v + s, Op::AddScalar(x))
    }

    pub fn neg(&self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    /// `[m,k] · [k,n]`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rank() != 2 || vb.rank() != 2 || va.shape()[1] != vb.shape()[0] {
            return Err(shape_err("matmul", &[va.shape(), vb.shape()]));
        }
        let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, va.data(), false, vb.data(), false, &mut out, false);
        let out = Array::new(&[m, n], out)?;
        Ok(self.push(out, Op::MatMul(a, b), self.rg(&[a, b])))
    }

    pub fn sin(&self, x: Var) -> Var {
        self.unary(x, f64::sin, Op::Sin(x))
    }

    pub fn cos(&self, x: Var) -> Var {
        self.unary(x, f64::cos, Op::Cos(x))
    }

    pub fn exp(&self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn log(&self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Log(x))
    }

    pub fn relu(&self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn softplus(&self, x: Var) -> Var {
        self.unary(x, softplus, Op::Softplus(x))
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    /// `max(x, lo)` elementwise; gradient passes only where `x > lo`.
    pub fn clamp_min(&self, x: Var, lo: f64) -> Var {
        self.unary(x, |v| v.max(lo), Op::ClampMin(x, lo))
    }

    /// Concatenates rank-2 arrays along their last axis.
    pub fn concat(&self, parts: &[Var]) -> Result<Var> {
        let values: Vec<Rc<Array>> = parts.iter().map(|&p| self.value(p)).collect();
        let Some(first) = values.first() else {
            return Err(Error::shape("concat", "no inputs"));
        };
        let rows = first.shape().first().copied().unwrap_or(0);
        if values.iter().any(|v| v.rank() != 2 || v.shape()[0] != rows) {
            let shapes: Vec<&[usize]> = values.iter().map(|v| v.shape()).collect();
            return Err(shape_err("concat", &shapes));
        }
        let total: usize = values.iter().map(|v| v.shape()[1]).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for v in &values {
                out.extend_from_slice(v.row(r));
            }
        }
        let out = Array::new(&[rows, total], out)?;
        Ok(self.push(out, Op::Concat(parts.to_vec()), self.rg(parts)))
    }

    /// Selects rows (slices along the first axis) by index. Indices are not
    /// differentiable; the gradient scatter-adds into the selected rows.
    pub fn gather(&self, src: Var, indices: Rc<Vec<usize>>) -> Result<Var> {
        let vs = self.value(src);
        if vs.rank() == 0 {
            return Err(shape_err("gather", &[vs.shape()]));
        }
        let rows = vs.shape()[0];
        let width: usize = vs.shape()[1..].iter().product();
        let mut out = Vec::with_capacity(indices.len() * width);
        for &i in indices.iter() {
            if i >= rows {
                return Err(Error::shape(
                    "gather",
                    format!("index {i} out of range for {:?}", vs.shape()),
                ));
            }
            out.extend_from_slice(&vs.data()[i * width..(i + 1) * width]);
        }
        let mut shape = vs.shape().to_vec();
        shape[0] = indices.len();
        let out = Array::new(&shape, out)?;
        Ok(self.push(out, Op::Gather(src, indices), self.rg(&[src])))
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let vx = self.value(x);
        let n: usize = shape.iter().product();
        if n != vx.len() {
            return Err(shape_err("reshape", &[vx.shape(), shape]));
        }
        let out = Array::new(shape, vx.data().to_vec())?;
        Ok(self.push(out, Op::Reshape(x), self.rg(&[x])))
    }

    pub fn transpose(&self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if vx.rank() != 2 {
            return Err(shape_err("transpose", &[vx.shape()]));
        }
        let out = transpose2(&vx);
        Ok(self.push(out, Op::Transpose(x), self.rg(&[x])))
    }

    /// Sum of all elements, accumulated left to right.
    pub fn sum(&self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Array::scalar(s), Op::Sum(x), self.rg(&[x]))
    }

    pub fn mean(&self, x: Var) -> Var {
        let v = self.value(x);
        let s: f64 = v.data().iter().sum();
        let out = Array::scalar(s / v.len().max(1) as f64);
        self.push(out, Op::Mean(x), self.rg(&[x]))
    }

    /// Sums out one axis.
    pub fn sum_axis(&self, x: Var, axis: usize) -> Result<Var> {
        let vx = self.value(x);
        if axis >= vx.rank() {
            return Err(Error::shape(
                "sum_axis",
                format!("axis {axis} for shape {:?}", vx.shape()),
            ));
        }
        let (outer, k, inner) = split_axis(vx.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..k {
                let src = &vx.data()[(o * k + j) * inner..(o * k + j + 1) * inner];
                let dst = &mut out[o * inner..(o + 1) * inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut shape = vx.shape().to_vec();
        shape.remove(axis);
        let out = Array::new(&shape, out)?;
        Ok(self.push(out, Op::SumAxis(x, axis), self.rg(&[x])))
    }

    /// `y_i = Σ_{j<i} x_j` along the last axis.
    pub fn cumsum_exclusive(&self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let Some(&k) = vx.shape().last() else {
            return Err(shape_err("cumsum_exclusive", &[vx.shape()]));
        };
        let mut out = vec![0.0; vx.len()];
        if k > 0 {
            for (src, dst) in vx.data().chunks(k).zip(out.chunks_mut(k)) {
                let mut acc = 0.0;
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = acc;
                    acc += s;
                }
            }
        }
        let out = Array::new(vx.shape(), out)?;
        Ok(self.push(out, Op::CumsumExclusive(x), self.rg(&[x])))
    }

    /// Stride-1 convolution with zero padding `k/2` ("same" output size).
    /// `input` is `[c,h,w]`, `weight` is `[o,c,k,k]` with odd `k`, `bias` is `[o]`.
    pub fn conv2d(&self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (vi, vw, vb) = (self.value(input), self.value(weight), self.value(bias));
        let ok = vi.rank() == 3
            && vw.rank() == 4
            && vw.shape()[1] == vi.shape()[0]
            && vw.shape()[2] == vw.shape()[3]
            && vw.shape()[2] % 2 == 1
            && vb.len() == vw.shape()[0];
        if !ok {
            return Err(shape_err("conv2d", &[vi.shape(), vw.shape(), vb.shape()]));
        }
        let (c, h, w) = (vi.shape()[0], vi.shape()[1], vi.shape()[2]);
        let (o, k) = (vw.shape()[0], vw.shape()[2]);
        let cols = im2col(vi.data(), c, h, w, k);
        let mut out = vec![0.0; o * h * w];
        gemm(o, c * k * k, h * w, vw.data(), false, &cols, false, &mut out, false);
        for (plane, b) in out.chunks_mut((h * w).max(1)).zip(vb.data()) {
            for v in plane {
                *v += b;
            }
        }
        let out = Array::new(&[o, h, w], out)?;
        let rg = self.rg(&[input, weight, bias]);
        Ok(self.push(out, Op::Conv2d(input, weight, bias), rg))
    }

    /// 2×2 average pooling over `[c,h,w]`; odd edges average the in-bounds
    /// cells, giving `[c, ⌈h/2⌉, ⌈w/2⌉]`.
    pub fn avg_pool2(&self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if vx.rank() != 3 {
            return Err(shape_err("avg_pool2", &[vx.shape()]));
        }
        let (c, h, w) = (vx.shape()[0], vx.shape()[1], vx.shape()[2]);
        let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
        let mut out = vec![0.0; c * ho * wo];
        for ch in 0..c {
            for y in 0..ho {
                for xo in 0..wo {
                    let mut s = 0.0;
                    let mut n = 0.0;
                    for sy in 2 * y..(2 * y + 2).min(h) {
                        for sx in 2 * xo..(2 * xo + 2).min(w) {
                            s += vx.data()[(ch * h + sy) * w + sx];
                            n += 1.0;
                        }
                    }
                    out[(ch * ho + y) * wo + xo] = s / n;
                }
            }
        }
        let out = Array::new(&[c, ho, wo], out)?;
        Ok(self.push(out, Op::AvgPool2(x), self.rg(&[x])))
    }

    /// Row-wise cosine similarity `⟨a,b⟩ / (‖a‖‖b‖ + ε)` of two `[n,d]` arrays.
    pub fn cosine_rows(&self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = self.same_shape("cosine_rows", a, b)?;
        if va.rank() != 2 {
            return Err(shape_err("cosine_rows", &[va.shape()]));
        }
        let n = va.shape()[0];
        let out: Vec<f64> = (0..n)
            .map(|i| {
                let (x, y) = (va.row(i), vb.row(i));
                dot(x, y) / (norm(x) * norm(y) + COSINE_EPS)
            })
            .collect();
        Ok(self.push(Array::from_vec(out), Op::CosineRows(a, b), self.rg(&[a, b])))
    }

    /// Propagates `∂root/∂·` to every reachable leaf that requires a gradient.
    /// Gradients accumulate across repeated calls.
    pub fn backward(&self, root: Var) -> Result<()> {
        let mut nodes = self.nodes.borrow_mut();
        if !nodes[root.0].value.is_scalar() {
            return Err(Error::shape(
                "backward",
                format!("root must be scalar, got {:?}", nodes[root.0].value.shape()),
            ));
        }
        if !nodes[root.0].requires_grad {
            return Ok(());
        }
        let mut pass: Vec<Option<Array>> = (0..=root.0).map(|_| None).collect();
        pass[root.0] = Some(Array::ones(nodes[root.0].value.shape()));
        let mut leaf_grads = Vec::new();
        for i in (0..=root.0).rev() {
            let Some(g) = pass[i].take() else { continue };
            let node = &nodes[i];
            if let Op::Leaf = node.op {
                leaf_grads.push((i, g));
                continue;
            }
            for (parent, contrib) in local_grads(&nodes, node, &g)? {
                match &mut pass[parent.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot => *slot = Some(contrib),
                }
            }
        }
        for (i, g) in leaf_grads {
            match &mut nodes[i].grad {
                Some(acc) => acc.add_assign(&g),
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn transpose2(a: &Array) -> Array {
    let (r, c) = (a.shape()[0], a.shape()[1]);
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a.data()[i * c + j];
        }
    }
    Array::new(&[c, r], out).expect("transpose keeps element count")
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Gradient contributions of one node to those parents that need them.
fn local_grads(nodes: &[Node], node: &Node, g: &Array) -> Result<Vec<(Var, Array)>> {
    let needs = |v: &Var| nodes[v.0].requires_grad;
    let val = |v: &Var| -> &Array { &nodes[v.0].value };
    let y = &*node.value;
    let mut out = Vec::with_capacity(2);
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if needs(a) {
                out.push((*a, g.clone()));
            }
            if needs(b) {
                out.push((*b, g.clone()));
            }
        }
        Op::Sub(a, b) => {
            if needs(a) {
                out.push((*a, g.clone()));
            }
            if needs(b) {
                out.push((*b, g.map(|v| -v)));
            }
        }
        Op::Mul(a, b) => {
            if needs(a) {
                out.push((*a, g.zip_map(val(b), |gv, bv| gv * bv)));
            }
            if needs(b) {
                out.push((*b, g.zip_map(val(a), |gv, av| gv * av)));
            }
        }
        Op::Div(a, b) => {
            let vb = val(b);
            if needs(a) {
                out.push((*a, g.zip_map(vb, |gv, bv| gv / bv)));
            }
            if needs(b) {
                let mut d = g.zip_map(y, |gv, yv| -gv * yv);
                for (dv, bv) in d.data_mut().iter_mut().zip(vb.data()) {
                    *dv /= bv;
                }
                out.push((*b, d));
            }
        }
        Op::AddRow(x, row) => {
            if needs(x) {
                out.push((*x, g.clone()));
            }
            if needs(row) {
                let k = val(row).len();
                let mut d = vec![0.0; k];
                for chunk in g.data().chunks(k.max(1)) {
                    for (dv, gv) in d.iter_mut().zip(chunk) {
                        *dv += gv;
                    }
                }
                out.push((*row, Array::new(val(row).shape(), d)?));
            }
        }
        Op::MulCol(x, col) => {
            let (vx, vc) = (val(x), val(col));
            let k = vx.shape()[1];
            if needs(x) {
                let mut d = g.clone();
                if k > 0 {
                    for (chunk, c) in d.data_mut().chunks_mut(k).zip(vc.data()) {
                        for v in chunk {
                            *v *= c;
                        }
                    }
                }
                out.push((*x, d));
            }
            if needs(col) {
                let d: Vec<f64> = (0..vc.len())
                    .map(|i| dot(&g.data()[i * k..(i + 1) * k], &vx.data()[i * k..(i + 1) * k]))
                    .collect();
                out.push((*col, Array::new(vc.shape(), d)?));
            }
        }
        Op::Scale(x, s) => out.push((*x, g.map(|v| v * s))),
        Op::AddScalar(x) => out.push((*x, g.clone())),
        Op::MatMul(a, b) => {
            let (va, vb) = (val(a), val(b));
            let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
            if needs(a) {
                let mut d = vec![0.0; m * k];
                gemm(m, n, k, g.data(), false, vb.data(), true, &mut d, false);
                out.push((*a, Array::new(&[m, k], d)?));
            }
            if needs(b) {
                let mut d = vec![0.0; k * n];
                gemm(k, m, n, va.data(), true, g.data(), false, &mut d, false);
                out.push((*b, Array::new(&[k, n], d)?));
            }
        }
        Op::Sin(x) => out.push((*x, g.zip_map(val(x), |gv, xv| gv * xv.cos()))),
        Op::Cos(x) => out.push((*x, g.zip_map(val(x), |gv, xv| -gv * xv.sin()))),
        Op::Exp(x) => out.push((*x, g.zip_map(y, |gv, yv| gv * yv))),
        Op::Log(x) => out.push((*x, g.zip_map(val(x), |gv, xv| gv / xv))),
        Op::Relu(x) => out.push((*x, g.zip_map(val(x), |gv, xv| if xv > 0.0 { gv } else { 0.0 }))),
        Op::Softplus(x) => out.push((*x, g.zip_map(val(x), |gv, xv| gv * sigmoid(xv)))),
        Op::Sigmoid(x) => out.push((*x, g.zip_map(y, |gv, yv| gv * yv * (1.0 - yv)))),
        Op::ClampMin(x, lo) => {
            let lo = *lo;
            out.push((*x, g.zip_map(val(x), |gv, xv| if xv > lo { gv } else { 0.0 })));
        }
        Op::Concat(parts) => {
            let rows = y.shape()[0];
            let total = y.shape()[1];
            let mut offset = 0;
            for p in parts {
                let k = val(p).shape()[1];
                if needs(p) {
                    let mut d = Vec::with_capacity(rows * k);
                    for r in 0..rows {
                        d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + k]);
                    }
                    out.push((*p, Array::new(&[rows, k], d)?));
                }
                offset += k;
            }
        }
        Op::Gather(src, indices) => {
            let vs = val(src);
            let width: usize = vs.shape()[1..].iter().product();
            let mut d = Array::zeros(vs.shape());
            let dd = d.data_mut();
            for (r, &i) in indices.iter().enumerate() {
                let dst = &mut dd[i * width..(i + 1) * width];
                for (dv, gv) in dst.iter_mut().zip(&g.data()[r * width..(r + 1) * width]) {
                    *dv += gv;
                }
            }
            out.push((*src, d));
        }
        Op::Reshape(x) => out.push((*x, Array::new(val(x).shape(), g.data().to_vec())?)),
        Op::Transpose(x) => out.push((*x, transpose2(g))),
        Op::Sum(x) => out.push((*x, Array::full(val(x).shape(), g.item()))),
        Op::Mean(x) => {
            let n = val(x).len().max(1) as f64;
            out.push((*x, Array::full(val(x).shape(), g.item() / n)));
        }
        Op::SumAxis(x, axis) => {
            let vx = val(x);
            let (outer, k, inner) = split_axis(vx.shape(), *axis);
            let mut d = vec![0.0; vx.len()];
            for o in 0..outer {
                let src = &g.data()[o * inner..(o + 1) * inner];
                for j in 0..k {
                    d[(o * k + j) * inner..(o * k + j + 1) * inner].copy_from_slice(src);
                }
            }
            out.push((*x, Array::new(vx.shape(), d)?));
        }
        Op::CumsumExclusive(x) => {
            let k = *y.shape().last().unwrap_or(&0);
            let mut d = vec![0.0; g.len()];
            if k > 0 {
                for (src, dst) in g.data().chunks(k).zip(d.chunks_mut(k)) {
                    let mut acc = 0.0;
                    for j in (0..k).rev() {
                        dst[j] = acc;
                        acc += src[j];
                    }
                }
            }
            out.push((*x, Array::new(val(x).shape(), d)?));
        }
        Op::Conv2d(input, weight, bias) => {
            let (vi, vw) = (val(input), val(weight));
            let (c, h, w) = (vi.shape()[0], vi.shape()[1], vi.shape()[2]);
            let (o, k) = (vw.shape()[0], vw.shape()[2]);
            let ckk = c * k * k;
            let hw = h * w;
            if needs(weight) {
                let cols = im2col(vi.data(), c, h, w, k);
                let mut d = vec![0.0; o * ckk];
                gemm(o, hw, ckk, g.data(), false, &cols, true, &mut d, false);
                out.push((*weight, Array::new(vw.shape(), d)?));
            }
            if needs(bias) {
                let d: Vec<f64> = g.data().chunks(hw.max(1)).map(|p| p.iter().sum()).collect();
                out.push((*bias, Array::from_vec(d).reshaped(val(bias).shape())?));
            }
            if needs(input) {
                let mut dcols = vec![0.0; ckk * hw];
                gemm(ckk, o, hw, vw.data(), true, g.data(), false, &mut dcols, false);
                let d = col2im(&dcols, c, h, w, k);
                out.push((*input, Array::new(vi.shape(), d)?));
            }
        }
        Op::AvgPool2(x) => {
            let vx = val(x);
            let (c, h, w) = (vx.shape()[0], vx.shape()[1], vx.shape()[2]);
            let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
            let mut d = vec![0.0; vx.len()];
            for ch in 0..c {
                for yo in 0..ho {
                    for xo in 0..wo {
                        let ys = 2 * yo..(2 * yo + 2).min(h);
                        let xs = 2 * xo..(2 * xo + 2).min(w);
                        let n = (ys.len() * xs.len()) as f64;
                        let gv = g.data()[(ch * ho + yo) * wo + xo] / n;
                        for sy in ys {
                            for sx in xs.clone() {
                                d[(ch * h + sy) * w + sx] += gv;
                            }
                        }
                    }
                }
            }
            out.push((*x, Array::new(vx.shape(), d)?));
        }
        Op::CosineRows(a, b) => {
            let (va, vb) = (val(a), val(b));
            let (n, dim) = (va.shape()[0], va.shape()[1]);
            let mut da = vec![0.0; n * dim];
            let mut db = vec![0.0; n * dim];
            for i in 0..n {
                let (x, z) = (va.row(i), vb.row(i));
                let (nx, nz) = (norm(x), norm(z));
                let den = nx * nz + COSINE_EPS;
                let d = dot(x, z);
                let gi = g.data()[i];
                // ∂/∂x [d / (|x||z| + ε)] = z/den − d·|z|·x/(|x|·den²)
                let kx = if nx > 0.0 { d * nz / (nx * den * den) } else { 0.0 };
                let kz = if nz > 0.0 { d * nx / (nz * den * den) } else { 0.0 };
                for j in 0..dim {
                    da[i * dim + j] = gi * (z[j] / den - kx * x[j]);
                    db[i * dim + j] = gi * (x[j] / den - kz * z[j]);
                }
            }
            if needs(a) {
                out.push((*a, Array::new(va.shape(), da)?));
            }
            if needs(b) {
                out.push((*b, Array::new(vb.shape(), db)?));
            }
        }
    }
    Ok(out)
}
