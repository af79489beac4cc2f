//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is an append-only tape: every op pushes a node whose parents
//! precede it, so the node order is already topological. [`Graph::backward`]
//! walks the tape once in reverse and accumulates gradients additively.
//!
//! Broadcasting is limited to scalar-times-tensor (`scale`, and `mul` with a
//! one-element operand). Every other binary op requires identical shapes.

use std::collections::BTreeMap;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::SeedStream;

/// Dense row-major tensor. Scalars have shape `[1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Shape(format!("zero-sized dimension in {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![1], data: vec![value] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len().max(1)], data: if data.is_empty() { vec![0.0] } else { data } }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    Sub,
    Mul,
    Scale(f64),
    Relu,
    Tanh,
    Sigmoid,
    Softmax,
    Log,
    Sum,
    Mean,
    Square,
    Sqrt,
    Concat,
    Dot,
    MaxWithZero,
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: OpKind,
    parents: Vec<usize>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numerics("non-finite leaf tensor".into()));
        }
        self.nodes.push(Node { value, grad: None, op: OpKind::Leaf, parents: Vec::new(), requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient after [`Graph::backward`]; `None` for nodes that do not require grad.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn op(&self, v: Var) -> OpKind {
        self.nodes[v.0].op
    }

    pub fn parents(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].parents
    }

    fn push(&mut self, op: OpKind, parents: Vec<usize>, value: Tensor) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numerics(format!("{op:?} produced a non-finite value")));
        }
        let requires_grad = parents.iter().any(|&p| self.nodes[p].requires_grad);
        self.nodes.push(Node { value, grad: None, op, parents, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape(format!("{op}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    /// Dispatch by op kind; `Scale` carries its factor.
    pub fn forward_op(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() != n {
                return Err(Error::Shape(format!("{kind:?} takes {n} inputs, got {}", inputs.len())));
            }
            Ok(())
        };
        match kind {
            OpKind::Leaf => Err(Error::Contract("leaves are created with constant/param".into())),
            OpKind::Concat => self.concat(inputs),
            OpKind::MatMul | OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Dot => {
                arity(2)?;
                let (a, b) = (inputs[0], inputs[1]);
                match kind {
                    OpKind::MatMul => self.matmul(a, b),
                    OpKind::Add => self.add(a, b),
                    OpKind::Sub => self.sub(a, b),
                    OpKind::Mul => self.mul(a, b),
                    _ => self.dot(a, b),
                }
            }
            _ => {
                arity(1)?;
                let x = inputs[0];
                match kind {
                    OpKind::Scale(c) => self.scale(x, c),
                    OpKind::Relu => self.relu(x),
                    OpKind::Tanh => self.tanh(x),
                    OpKind::Sigmoid => self.sigmoid(x),
                    OpKind::Softmax => self.softmax(x),
                    OpKind::Log => self.log(x),
                    OpKind::Sum => self.sum(x),
                    OpKind::Mean => self.mean(x),
                    OpKind::Square => self.square(x),
                    OpKind::Sqrt => self.sqrt(x),
                    _ => self.max_with_zero(x),
                }
            }
        }
    }

    /// Matrix-vector, vector-matrix or matrix-matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        let out = match (sa.len(), sb.len()) {
            (2, 1) if sa[1] == sb[0] => {
                let (m, k) = (sa[0], sa[1]);
                let mut y = vec![0.0; m];
                for (r, yr) in y.iter_mut().enumerate() {
                    *yr = dot_slice(&ta.data[r * k..(r + 1) * k], &tb.data);
                }
                Tensor::new(vec![m], y)?
            }
            (1, 2) if sa[0] == sb[0] => {
                let (k, n) = (sb[0], sb[1]);
                let mut y = vec![0.0; n];
                for (i, &xi) in ta.data.iter().enumerate().take(k) {
                    if xi == 0.0 {
                        continue;
                    }
                    axpy(xi, &tb.data[i * n..(i + 1) * n], &mut y);
                }
                Tensor::new(vec![n], y)?
            }
            (2, 2) if sa[1] == sb[0] => {
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let mut y = vec![0.0; m * n];
                for r in 0..m {
                    let row = &mut y[r * n..(r + 1) * n];
                    for i in 0..k {
                        let v = ta.data[r * k + i];
                        if v != 0.0 {
                            axpy(v, &tb.data[i * n..(i + 1) * n], row);
                        }
                    }
                }
                Tensor::new(vec![m, n], y)?
            }
            _ => return Err(Error::Shape(format!("matmul: {sa:?} x {sb:?}"))),
        };
        self.push(OpKind::MatMul, vec![a.0, b.0], out)
    }

    fn zip(&mut self, op: OpKind, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(&format!("{op:?}"), a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.shape.clone(), data)?;
        self.push(op, vec![a.0, b.0], out)
    }

    fn map(&mut self, op: OpKind, x: Var, f: impl Fn(f64) -> f64) -> Result<Var> {
        let t = self.value(x);
        let out = Tensor { shape: t.shape.clone(), data: t.data.iter().map(|&v| f(v)).collect() };
        self.push(op, vec![x.0], out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(OpKind::Add, a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(OpKind::Sub, a, b, |x, y| x - y)
    }

    /// Elementwise product; a one-element operand is broadcast.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (la, lb) = (self.value(a).len(), self.value(b).len());
        if la == lb && self.value(a).shape() == self.value(b).shape() {
            return self.zip(OpKind::Mul, a, b, |x, y| x * y);
        }
        let (s, t) = match (la, lb) {
            (1, _) => (a, b),
            (_, 1) => (b, a),
            _ => {
                return Err(Error::Shape(format!(
                    "mul: {:?} vs {:?}",
                    self.value(a).shape(),
                    self.value(b).shape()
                )))
            }
        };
        let c = self.value(s).item();
        let tv = self.value(t);
        let out = Tensor { shape: tv.shape.clone(), data: tv.data.iter().map(|v| v * c).collect() };
        self.push(OpKind::Mul, vec![a.0, b.0], out)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.map(OpKind::Scale(c), x, |v| v * c)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.map(OpKind::Relu, x, |v| v.max(0.0))
    }

    pub fn max_with_zero(&mut self, x: Var) -> Result<Var> {
        self.map(OpKind::MaxWithZero, x, |v| v.max(0.0))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.map(OpKind::Tanh, x, f64::tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map(OpKind::Sigmoid, x, sigmoid)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.map(OpKind::Square, x, |v| v * v)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.value(x).data.iter().find(|&&v| v <= 0.0) {
            return Err(Error::Domain(format!("log of non-positive value {bad}")));
        }
        self.map(OpKind::Log, x, f64::ln)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.value(x).data.iter().find(|&&v| v < 0.0) {
            return Err(Error::Domain(format!("sqrt of negative value {bad}")));
        }
        self.map(OpKind::Sqrt, x, f64::sqrt)
    }

    /// Softmax over all elements of `x`.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let out = Tensor { shape: t.shape.clone(), data: softmax_slice(&t.data) };
        self.push(OpKind::Softmax, vec![x.0], out)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data.iter().sum();
        self.push(OpKind::Sum, vec![x.0], Tensor::scalar(s))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.data.iter().sum::<f64>() / t.len() as f64;
        self.push(OpKind::Mean, vec![x.0], Tensor::scalar(s))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape.len() != 1 || ta.shape != tb.shape {
            return Err(Error::Shape(format!("dot: {:?} vs {:?}", ta.shape, tb.shape)));
        }
        let s = dot_slice(&ta.data, &tb.data);
        self.push(OpKind::Dot, vec![a.0, b.0], Tensor::scalar(s))
    }

    /// Concatenate 1-D tensors.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::Shape("concat of zero tensors".into()));
        }
        let mut data = Vec::new();
        for &x in xs {
            let t = self.value(x);
            if t.shape.len() != 1 {
                return Err(Error::Shape(format!("concat expects 1-D, got {:?}", t.shape)));
            }
            data.extend_from_slice(&t.data);
        }
        let out = Tensor::new(vec![data.len()], data)?;
        self.push(OpKind::Concat, xs.iter().map(|v| v.0).collect(), out)
    }

    /// Sign pattern of every kink-sensitive input (max-with-zero, relu, sqrt).
    /// Two evaluations with equal signatures lie on the same smooth piece.
    pub fn kink_signature(&self) -> Vec<i8> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            if matches!(node.op, OpKind::Relu | OpKind::MaxWithZero | OpKind::Sqrt) {
                let input = &self.nodes[node.parents[0]].value;
                sig.extend(input.data.iter().map(|&v| {
                    if v > 0.0 {
                        1
                    } else if v < 0.0 {
                        -1
                    } else {
                        0
                    }
                }));
            }
        }
        sig
    }

    /// Populate `grad` of every node that requires grad with d(root)/d(node).
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if !self.value(root).is_scalar() {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerics(format!("non-finite gradient at node {idx}")));
            }
            self.propagate(idx, &g, &mut grads);
            self.nodes[idx].grad = Some(Tensor { shape: self.nodes[idx].value.shape.clone(), data: g });
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let y = &node.value.data;
        let wants = |p: usize| self.nodes[p].requires_grad;
        let p = &node.parents;
        let mut acc = |p: usize, f: &dyn Fn(&mut [f64])| {
            if !self.nodes[p].requires_grad {
                return;
            }
            let slot = grads[p].get_or_insert_with(|| vec![0.0; self.nodes[p].value.len()]);
            f(slot);
        };
        match node.op {
            OpKind::Leaf => {}
            OpKind::Add => {
                acc(p[0], &|s| axpy(1.0, g, s));
                acc(p[1], &|s| axpy(1.0, g, s));
            }
            OpKind::Sub => {
                acc(p[0], &|s| axpy(1.0, g, s));
                acc(p[1], &|s| axpy(-1.0, g, s));
            }
            OpKind::Mul => {
                let a = &self.nodes[p[0]].value;
                let b = &self.nodes[p[1]].value;
                if a.len() == b.len() && a.shape == b.shape {
                    acc(p[0], &|s| {
                        for ((si, gi), bi) in s.iter_mut().zip(g).zip(&b.data) {
                            *si += gi * bi;
                        }
                    });
                    acc(p[1], &|s| {
                        for ((si, gi), ai) in s.iter_mut().zip(g).zip(&a.data) {
                            *si += gi * ai;
                        }
                    });
                } else {
                    // One operand is a broadcast scalar.
                    let (sc, ten) = if a.len() == 1 { (0, 1) } else { (1, 0) };
                    let c = self.nodes[p[sc]].value.item();
                    let tv = &self.nodes[p[ten]].value.data;
                    acc(p[sc], &|s| s[0] += dot_slice(g, tv));
                    acc(p[ten], &|s| axpy(c, g, s));
                }
            }
            OpKind::Scale(c) => acc(p[0], &|s| axpy(c, g, s)),
            OpKind::Relu | OpKind::MaxWithZero => {
                let x = &self.nodes[p[0]].value.data;
                acc(p[0], &|s| {
                    for ((si, gi), xi) in s.iter_mut().zip(g).zip(x) {
                        if *xi > 0.0 {
                            *si += gi;
                        }
                    }
                });
            }
            OpKind::Tanh => acc(p[0], &|s| {
                for ((si, gi), yi) in s.iter_mut().zip(g).zip(y) {
                    *si += gi * (1.0 - yi * yi);
                }
            }),
            OpKind::Sigmoid => acc(p[0], &|s| {
                for ((si, gi), yi) in s.iter_mut().zip(g).zip(y) {
                    *si += gi * yi * (1.0 - yi);
                }
            }),
            OpKind::Softmax => {
                let gy = dot_slice(g, y);
                acc(p[0], &|s| {
                    for ((si, gi), yi) in s.iter_mut().zip(g).zip(y) {
                        *si += yi * (gi - gy);
                    }
                });
            }
            OpKind::Log => {
                let x = &self.nodes[p[0]].value.data;
                acc(p[0], &|s| {
                    for ((si, gi), xi) in s.iter_mut().zip(g).zip(x) {
                        *si += gi / xi;
                    }
                });
            }
            OpKind::Square => {
                let x = &self.nodes[p[0]].value.data;
                acc(p[0], &|s| {
                    for ((si, gi), xi) in s.iter_mut().zip(g).zip(x) {
                        *si += 2.0 * gi * xi;
                    }
                });
            }
            OpKind::Sqrt => acc(p[0], &|s| {
                // Subgradient 0 at the origin.
                for ((si, gi), yi) in s.iter_mut().zip(g).zip(y) {
                    if *yi > 0.0 {
                        *si += gi / (2.0 * yi);
                    }
                }
            }),
            OpKind::Sum => acc(p[0], &|s| s.iter_mut().for_each(|v| *v += g[0])),
            OpKind::Mean => {
                let n = self.nodes[p[0]].value.len() as f64;
                acc(p[0], &|s| s.iter_mut().for_each(|v| *v += g[0] / n));
            }
            OpKind::Dot => {
                let a = &self.nodes[p[0]].value.data;
                let b = &self.nodes[p[1]].value.data;
                acc(p[0], &|s| axpy(g[0], b, s));
                acc(p[1], &|s| axpy(g[0], a, s));
            }
            OpKind::Concat => {
                let mut off = 0;
                for &pi in p {
                    let n = self.nodes[pi].value.len();
                    let part = &g[off..off + n];
                    acc(pi, &|s| axpy(1.0, part, s));
                    off += n;
                }
            }
            OpKind::MatMul => {
                let a = &self.nodes[p[0]].value;
                let b = &self.nodes[p[1]].value;
                match (a.shape.len(), b.shape.len()) {
                    (2, 1) => {
                        let k = a.shape[1];
                        if wants(p[0]) {
                            acc(p[0], &|s| {
                                for (r, gr) in g.iter().enumerate() {
                                    if *gr != 0.0 {
                                        axpy(*gr, &b.data, &mut s[r * k..(r + 1) * k]);
                                    }
                                }
                            });
                        }
                        acc(p[1], &|s| {
                            for (r, gr) in g.iter().enumerate() {
                                if *gr != 0.0 {
                                    axpy(*gr, &a.data[r * k..(r + 1) * k], s);
                                }
                            }
                        });
                    }
                    (1, 2) => {
                        let n = b.shape[1];
                        acc(p[0], &|s| {
                            for (i, si) in s.iter_mut().enumerate() {
                                *si += dot_slice(&b.data[i * n..(i + 1) * n], g);
                            }
                        });
                        acc(p[1], &|s| {
                            for (i, xi) in a.data.iter().enumerate() {
                                if *xi != 0.0 {
                                    axpy(*xi, g, &mut s[i * n..(i + 1) * n]);
                                }
                            }
                        });
                    }
                    _ => {
                        let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
                        // dA = G B^T, dB = A^T G
                        acc(p[0], &|s| {
                            for r in 0..m {
                                for i in 0..k {
                                    s[r * k + i] +=
                                        dot_slice(&g[r * n..(r + 1) * n], &b.data[i * n..(i + 1) * n]);
                                }
                            }
                        });
                        acc(p[1], &|s| {
                            for r in 0..m {
                                for i in 0..k {
                                    let v = a.data[r * k + i];
                                    if v != 0.0 {
                                        axpy(v, &g[r * n..(r + 1) * n], &mut s[i * n..(i + 1) * n]);
                                    }
                                }
                            }
                        });
                    }
                }
            }
        }
    }
}

pub(crate) fn dot_slice(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_slice(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Named tensors, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors.get(name).ok_or_else(|| Error::Contract(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors.get_mut(name).ok_or_else(|| Error::Contract(format!("missing parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar entries.
    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Put only the named tensors into `g`.
    pub fn bind_subset<S: AsRef<str>>(
        &self,
        g: &mut Graph,
        names: &[S],
        trainable: impl Fn(&str) -> bool,
    ) -> Result<Bindings> {
        let mut vars = BTreeMap::new();
        for name in names {
            let name = name.as_ref();
            let t = self.get(name)?.clone();
            let v = if trainable(name) { g.param(t)? } else { g.constant(t)? };
            vars.insert(name.to_string(), v);
        }
        Ok(Bindings { vars })
    }

    /// Put every tensor into `g`; those selected by `trainable` require grad.
    pub fn bind(&self, g: &mut Graph, trainable: impl Fn(&str) -> bool) -> Result<Bindings> {
        let mut vars = BTreeMap::new();
        for (name, t) in &self.tensors {
            let v = if trainable(name) { g.param(t.clone())? } else { g.constant(t.clone())? };
            vars.insert(name.clone(), v);
        }
        Ok(Bindings { vars })
    }
}

/// Parameter name to graph node, produced by [`ParamStore::bind`].
#[derive(Debug, Clone, Default)]
pub struct Bindings {
    vars: BTreeMap<String, Var>,
}

impl Bindings {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::Contract(format!("parameter {name} not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Number of non-kink coordinates to check.
    pub samples: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { epsilon: 1e-5, tolerance: 1e-4, samples: 100, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub within_tolerance: bool,
}

/// Compare analytic gradients against central differences at randomly chosen
/// parameter coordinates.
///
/// A coordinate whose ±epsilon evaluations land on a different side of any
/// max-with-zero/relu/sqrt kink than the base point is skipped and counted.
pub fn finite_difference_check<F>(
    loss_fn: F,
    params: &ParamStore,
    names: &[&str],
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &Bindings) -> Result<Var>,
{
    if opts.epsilon <= 0.0 {
        return Err(Error::Config("epsilon must be positive".into()));
    }
    let eval = |p: &ParamStore| -> Result<(f64, Vec<i8>)> {
        let mut g = Graph::new();
        let b = p.bind(&mut g, |_| false)?;
        let root = loss_fn(&mut g, &b)?;
        let v = g.value(root).item();
        if !v.is_finite() {
            return Err(Error::Numerics("non-finite loss".into()));
        }
        Ok((v, g.kink_signature()))
    };

    let mut g = Graph::new();
    let b = params.bind(&mut g, |n| names.contains(&n))?;
    let root = loss_fn(&mut g, &b)?;
    if !g.value(root).item().is_finite() {
        return Err(Error::Numerics("non-finite loss".into()));
    }
    g.backward(root)?;
    let base_sig = g.kink_signature();

    let mut coords = Vec::new();
    for &n in names {
        let len = params.get(n)?.len();
        coords.extend((0..len).map(|i| (n, i)));
    }
    if coords.is_empty() {
        return Err(Error::Contract("no parameters to check".into()));
    }

    let mut rng = SeedStream::new(opts.seed).rng("gradcheck");
    let mut report =
        GradCheckReport { max_rel_error: 0.0, checked: 0, skipped_kinks: 0, within_tolerance: true };
    let max_attempts = opts.samples * 20;
    let mut attempts = 0;
    let mut work = params.clone();
    while report.checked < opts.samples && attempts < max_attempts {
        attempts += 1;
        let (name, i) = coords[rng.gen_range(0..coords.len())];
        let analytic = g.grad(b.get(name)?).map(|t| t.data()[i]).unwrap_or(0.0);
        let orig = params.get(name)?.data()[i];
        work.get_mut(name)?.data_mut()[i] = orig + opts.epsilon;
        let (lp, sp) = eval(&work)?;
        work.get_mut(name)?.data_mut()[i] = orig - opts.epsilon;
        let (lm, sm) = eval(&work)?;
        work.get_mut(name)?.data_mut()[i] = orig;
        if sp != base_sig || sm != base_sig || base_sig.contains(&0) {
            report.skipped_kinks += 1;
            if base_sig.contains(&0) && report.skipped_kinks >= opts.samples {
                break;
            }
            continue;
        }
        let numeric = (lp - lm) / (2.0 * opts.epsilon);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        report.max_rel_error = report.max_rel_error.max(rel);
        report.checked += 1;
    }
    report.within_tolerance = report.max_rel_error <= opts.tolerance;
    Ok(report)
}
