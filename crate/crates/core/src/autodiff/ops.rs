//! Primitive differentiable operations.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use super::graph::{BackwardRule, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Pointwise operations accepted by [`Graph::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Relu,
    Sigmoid,
    Exp,
    Log,
    Scale(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
}

fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize)> {
    match (a, b) {
        ([m, k], [k2, n]) if k == k2 => Ok((*m, *k, *n)),
        _ => Err(Error::shape(format!("matmul of {a:?} and {b:?}"))),
    }
}

struct MatMulRule;

impl<T: Scalar> BackwardRule<T> for MatMulRule {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _out: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let (a, b) = (inputs[0], inputs[1]);
        let (m, k, n) = matmul_dims(a.shape(), b.shape())?;
        // dA = dC · Bᵀ
        let mut da = vec![T::zero(); m * k];
        T::gemm(m, n, k, g.data(), n as isize, 1, b.data(), 1, n as isize, T::zero(), &mut da);
        // dB = Aᵀ · dC
        let mut db = vec![T::zero(); k * n];
        T::gemm(k, m, n, a.data(), 1, k as isize, g.data(), n as isize, 1, T::zero(), &mut db);
        Ok(vec![Some(Tensor::from_vec(&[m, k], da)?), Some(Tensor::from_vec(&[k, n], db)?)])
    }
}

/// `a + b` where `b` is broadcast along every axis but the last.
struct AddBiasRule;

impl<T: Scalar> BackwardRule<T> for AddBiasRule {
    fn name(&self) -> &'static str {
        "add_bias"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _out: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let c = inputs[1].len();
        let mut db = vec![T::zero(); c];
        for row in g.data().chunks_exact(c) {
            for (acc, &v) in db.iter_mut().zip(row) {
                *acc = *acc + v;
            }
        }
        Ok(vec![Some(g.clone()), Some(Tensor::from_vec(inputs[1].shape(), db)?)])
    }
}

struct BinaryRule(ElementwiseOp);

impl<T: Scalar> BackwardRule<T> for BinaryRule {
    fn name(&self) -> &'static str {
        match self.0 {
            ElementwiseOp::Add => "add",
            ElementwiseOp::Sub => "sub",
            _ => "mul",
        }
    }

    fn backward(&self, inputs: &[&Tensor<T>], _out: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(match self.0 {
            ElementwiseOp::Add => vec![Some(g.clone()), Some(g.clone())],
            ElementwiseOp::Sub => vec![Some(g.clone()), Some(g.map(|v| -v))],
            _ => {
                let (a, b) = (inputs[0], inputs[1]);
                let da = zip_map(g, b, |gv, bv| gv * bv);
                let db = zip_map(g, a, |gv, av| gv * av);
                vec![Some(da), Some(db)]
            }
        })
    }
}

struct UnaryRule(ElementwiseOp);

impl<T: Scalar> BackwardRule<T> for UnaryRule {
    fn name(&self) -> &'static str {
        match self.0 {
            ElementwiseOp::Relu => "relu",
            ElementwiseOp::Sigmoid => "sigmoid",
            ElementwiseOp::Exp => "exp",
            ElementwiseOp::Log => "log",
            _ => "scale",
        }
    }

    fn backward(&self, inputs: &[&Tensor<T>], out: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let x = inputs[0];
        let dx = match self.0 {
            // subgradient at exactly zero is zero
            ElementwiseOp::Relu => zip_map(g, x, |gv, xv| if xv > T::zero() { gv } else { T::zero() }),
            ElementwiseOp::Sigmoid => zip_map(g, out, |gv, s| gv * s * (T::one() - s)),
            ElementwiseOp::Exp => zip_map(g, out, |gv, e| gv * e),
            ElementwiseOp::Log => zip_map(g, x, |gv, xv| gv / xv),
            ElementwiseOp::Scale(c) => {
                let c = T::from_f64(c);
                g.map(|gv| gv * c)
            }
            _ => unreachable!("binary op in unary rule"),
        };
        Ok(vec![Some(dx)])
    }

    fn branch_fingerprint(&self, inputs: &[&Tensor<T>], _out: &Tensor<T>) -> Option<u64> {
        if self.0 != ElementwiseOp::Relu {
            return None;
        }
        let mut h = DefaultHasher::new();
        for &v in inputs[0].data() {
            (v > T::zero()).hash(&mut h);
        }
        Some(h.finish())
    }
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape(), data).expect("zip_map preserves shape")
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Maps each input flat index to its output flat index after dropping `axes`.
fn reduce_layout(shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<usize>, usize) {
    let keep: Vec<usize> = (0..shape.len()).filter(|a| !axes.contains(a)).collect();
    let out_shape: Vec<usize> = keep.iter().map(|&a| shape[a]).collect();
    let total: usize = shape.iter().product();
    let count: usize = axes.iter().map(|&a| shape[a]).product();
    let mut out_strides = vec![0usize; shape.len()];
    let mut stride = 1;
    for &a in keep.iter().rev() {
        out_strides[a] = stride;
        stride *= shape[a];
    }
    let mut mapping = vec![0usize; total];
    let mut index = vec![0usize; shape.len()];
    for slot in mapping.iter_mut() {
        *slot = index.iter().zip(&out_strides).map(|(i, s)| i * s).sum();
        for ax in (0..shape.len()).rev() {
            index[ax] += 1;
            if index[ax] < shape[ax] {
                break;
            }
            index[ax] = 0;
        }
    }
    (out_shape, mapping, count)
}

struct ReduceRule {
    op: ReduceOp,
    mapping: Vec<usize>,
    count: usize,
    /// Input flat index selected for each output cell (max only).
    argmax: Vec<usize>,
}

impl<T: Scalar> BackwardRule<T> for ReduceRule {
    fn name(&self) -> &'static str {
        match self.op {
            ReduceOp::Sum => "sum",
            ReduceOp::Mean => "mean",
            ReduceOp::Max => "max",
        }
    }

    fn backward(&self, inputs: &[&Tensor<T>], _out: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let x = inputs[0];
        let mut dx = x.zeros_like();
        match self.op {
            ReduceOp::Sum => {
                for (d, &o) in dx.data_mut().iter_mut().zip(&self.mapping) {
                    *d = g.data()[o];
                }
            }
            ReduceOp::Mean => {
                let inv = T::one() / T::from_f64(self.count as f64);
                for (d, &o) in dx.data_mut().iter_mut().zip(&self.mapping) {
                    *d = g.data()[o] * inv;
                }
            }
            ReduceOp::Max => {
                for (o, &i) in self.argmax.iter().enumerate() {
                    dx.data_mut()[i] = g.data()[o];
                }
            }
        }
        Ok(vec![Some(dx)])
    }

    fn saved_scalars(&self) -> usize {
        self.argmax.len()
    }

    fn branch_fingerprint(&self, _inputs: &[&Tensor<T>], _out: &Tensor<T>) -> Option<u64> {
        (self.op == ReduceOp::Max).then(|| {
            let mut h = DefaultHasher::new();
            self.argmax.hash(&mut h);
            h.finish()
        })
    }
}

struct ReshapeRule;

impl<T: Scalar> BackwardRule<T> for ReshapeRule {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _out: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(g.clone().reshape(inputs[0].shape())?)])
    }
}

struct ConcatColsRule {
    widths: Vec<usize>,
}

impl<T: Scalar> BackwardRule<T> for ConcatColsRule {
    fn name(&self) -> &'static str {
        "concat_cols"
    }

    fn backward(&self, _inputs: &[&Tensor<T>], out: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let rows = out.shape()[0];
        let total: usize = self.widths.iter().sum();
        let mut grads = Vec::with_capacity(self.widths.len());
        let mut offset = 0;
        for &w in &self.widths {
            let mut part = Vec::with_capacity(rows * w);
            for r in 0..rows {
                part.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
            }
            grads.push(Some(Tensor::from_vec(&[rows, w], part)?));
            offset += w;
        }
        Ok(grads)
    }
}

struct GatherRowsRule {
    rows: Vec<usize>,
}

impl<T: Scalar> BackwardRule<T> for GatherRowsRule {
    fn name(&self) -> &'static str {
        "gather_rows"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _out: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let x = inputs[0];
        let width = x.shape()[1];
        let mut dx = x.zeros_like();
        for (i, &r) in self.rows.iter().enumerate() {
            let dst = &mut dx.data_mut()[r * width..(r + 1) * width];
            for (d, &v) in dst.iter_mut().zip(&g.data()[i * width..(i + 1) * width]) {
                *d = *d + v;
            }
        }
        Ok(vec![Some(dx)])
    }

    fn saved_scalars(&self) -> usize {
        self.rows.len()
    }
}

impl<T: Scalar> Graph<T> {
    /// `[m×k] · [k×n] → [m×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k, n) = matmul_dims(self.shape(a), self.shape(b))?;
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.value(a).data(), k as isize, 1, self.value(b).data(), n as isize, 1, T::zero(), &mut out);
        let value = Tensor::from_vec(&[m, n], out)?;
        self.record(vec![a, b], value, Box::new(MatMulRule))
    }

    /// Adds a per-channel vector along the trailing axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(x);
        let c = *xs.last().ok_or_else(|| Error::shape("add_bias on a rank-0 tensor"))?;
        if self.value(bias).len() != c {
            return Err(Error::shape(format!("bias {:?} does not match trailing axis of {xs:?}", self.shape(bias))));
        }
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_exact_mut(c) {
            for (v, &bv) in row.iter_mut().zip(&b) {
                *v = *v + bv;
            }
        }
        self.record(vec![x, bias], out, Box::new(AddBiasRule))
    }

    /// Pointwise op; binary ops take two same-shaped inputs.
    pub fn elementwise(&mut self, op: ElementwiseOp, inputs: &[Var]) -> Result<Var> {
        match op {
            ElementwiseOp::Add | ElementwiseOp::Sub | ElementwiseOp::Mul => {
                let [a, b] = inputs else {
                    return Err(Error::contract(format!("{op:?} takes two inputs")));
                };
                let (a, b) = (*a, *b);
                if self.shape(a) != self.shape(b) {
                    if self.shape(b).len() == 1 && op == ElementwiseOp::Add {
                        return self.add_bias(a, b);
                    }
                    return Err(Error::shape(format!("{op:?} of {:?} and {:?}", self.shape(a), self.shape(b))));
                }
                let f: fn(T, T) -> T = match op {
                    ElementwiseOp::Add => |x, y| x + y,
                    ElementwiseOp::Sub => |x, y| x - y,
                    _ => |x, y| x * y,
                };
                let value = zip_map(self.value(a), self.value(b), f);
                self.record(vec![a, b], value, Box::new(BinaryRule(op)))
            }
            _ => {
                let [x] = inputs else {
                    return Err(Error::contract(format!("{op:?} takes one input")));
                };
                let x = *x;
                let input = self.value(x);
                let value = match op {
                    ElementwiseOp::Relu => input.map(|v| if v > T::zero() { v } else { T::zero() }),
                    ElementwiseOp::Sigmoid => input.map(sigmoid),
                    ElementwiseOp::Exp => input.map(|v| v.exp()),
                    ElementwiseOp::Log => {
                        if self.is_checked() && input.data().iter().any(|&v| v <= T::zero()) {
                            return Err(Error::Domain("log of a non-positive value".into()));
                        }
                        input.map(|v| v.ln())
                    }
                    ElementwiseOp::Scale(c) => {
                        let c = T::from_f64(c);
                        input.map(|v| v * c)
                    }
                    _ => unreachable!(),
                };
                self.record(vec![x], value, Box::new(UnaryRule(op)))
            }
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Mul, &[a, b])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Relu, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Sigmoid, &[x])
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Exp, &[x])
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Log, &[x])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.elementwise(ElementwiseOp::Scale(c), &[x])
    }

    /// Reduces over `axes`; an empty list reduces over every axis.
    pub fn reduce(&mut self, op: ReduceOp, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut axes: Vec<usize> = if axes.is_empty() { (0..shape.len()).collect() } else { axes.to_vec() };
        axes.sort_unstable();
        axes.dedup();
        if let Some(bad) = axes.iter().find(|&&a| a >= shape.len()) {
            return Err(Error::shape(format!("reduce axis {bad} invalid for {shape:?}")));
        }
        let (out_shape, mapping, count) = reduce_layout(&shape, &axes);
        if count == 0 {
            return Err(Error::Domain("empty reduction".into()));
        }
        let out_len: usize = out_shape.iter().product();
        let data = self.value(x).data();
        let mut out = vec![T::zero(); out_len];
        let mut argmax = Vec::new();
        match op {
            ReduceOp::Sum | ReduceOp::Mean => {
                for (&v, &o) in data.iter().zip(&mapping) {
                    out[o] = out[o] + v;
                }
                if op == ReduceOp::Mean {
                    let n = T::from_f64(count as f64);
                    for v in out.iter_mut() {
                        *v = *v / n;
                    }
                }
            }
            ReduceOp::Max => {
                argmax = vec![usize::MAX; out_len];
                for (i, (&v, &o)) in data.iter().zip(&mapping).enumerate() {
                    // strict comparison keeps the lowest flat index on ties
                    if argmax[o] == usize::MAX || v > out[o] {
                        out[o] = v;
                        argmax[o] = i;
                    }
                }
            }
        }
        let value = Tensor::from_vec(&out_shape, out)?;
        let rule = ReduceRule { op, mapping, count, argmax };
        self.record(vec![x], value, Box::new(rule))
    }

    pub fn sum(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        self.reduce(ReduceOp::Sum, x, axes)
    }

    pub fn mean(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        self.reduce(ReduceOp::Mean, x, axes)
    }

    pub fn max(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        self.reduce(ReduceOp::Max, x, axes)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        self.record(vec![x], value, Box::new(ReshapeRule))
    }

    /// Concatenates `[rows × wᵢ]` matrices along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::contract("concat of zero parts"))?;
        let rows = self.shape(*first)[0];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            match self.shape(p) {
                [r, w] if *r == rows => widths.push(*w),
                other => return Err(Error::shape(format!("concat part {other:?} with {rows} rows"))),
            }
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let value = Tensor::from_vec(&[rows, total], out)?;
        self.record(parts.to_vec(), value, Box::new(ConcatColsRule { widths }))
    }

    /// Selects rows of a matrix; repeated rows accumulate gradient.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let [n, width] = *self.shape(x) else {
            return Err(Error::shape(format!("gather_rows on {:?}", self.shape(x))));
        };
        if rows.is_empty() {
            return Err(Error::contract("gather_rows with no rows"));
        }
        if let Some(bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::contract(format!("row {bad} out of range for {n} rows")));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            out.extend_from_slice(&src[r * width..(r + 1) * width]);
        }
        let value = Tensor::from_vec(&[rows.len(), width], out)?;
        self.record(vec![x], value, Box::new(GatherRowsRule { rows: rows.to_vec() }))
    }
}
