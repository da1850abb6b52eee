//! Reverse-mode automatic differentiation on a Wengert tape.
//!
//! Every primitive appends a node holding its output value and the ids of
//! its inputs; inputs always precede outputs, so a single reverse sweep over
//! the node list is a valid topological traversal. Parameters enter the tape
//! through [`Tape::param`], are deduplicated per `(store tag, name)`, and come
//! back out of [`Tape::backward`] keyed the same way.

use std::collections::{BTreeMap, HashMap, HashSet};

use crate::error::{Error, Result};
use crate::tensor::{GradMap, ParamStore, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Const,
    Param(usize),
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    ScaleBy { s: Var, x: Var },
    Concat(Vec<Var>),
    Stack(Vec<Var>),
    Transpose { a: Var, rows: usize, cols: usize },
    Sigmoid(Var),
    Tanh(Var),
    Log(Var),
    Exp(Var),
    Sqrt(Var),
    Softmax(Var),
    LogSoftmax { a: Var, mask: Option<Vec<bool>> },
    Sum(Var),
    MaxPool { inputs: Vec<Var>, argmax: Vec<usize> },
    Embedding { table: Var, row: usize, dim: usize },
    Slice { a: Var, start: usize, len: usize },
    StopGrad,
    LstmCell { z: Var, c: Var, hidden: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients of a scalar loss, grouped by parameter-store tag.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    stores: BTreeMap<String, GradMap>,
}

impl Gradients {
    /// Gradients for one store; parameters the loss never reached are absent.
    pub fn store(&self, tag: &str) -> GradMap {
        self.stores.get(tag).cloned().unwrap_or_default()
    }

    pub fn store_ref(&self, tag: &str) -> Option<&GradMap> {
        self.stores.get(tag)
    }

    pub fn tags(&self) -> impl Iterator<Item = &String> {
        self.stores.keys()
    }

    pub fn get(&self, tag: &str, name: &str) -> Option<&Tensor> {
        self.stores.get(tag).and_then(|m| m.get(name))
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, String)>,
    param_vars: HashMap<(String, String), Var>,
    frozen: HashSet<String>,
}

fn shape_err(op: &'static str, shapes: &[&[usize]]) -> Error {
    Error::Shape {
        op,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
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

    /// Parameters from the store tagged `tag` enter this tape as constants.
    pub fn freeze(&mut self, tag: &str) {
        self.frozen.insert(tag.to_string());
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
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

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Const, false)
    }

    pub fn constant_vec(&mut self, data: Vec<f64>) -> Var {
        self.constant(Tensor::vector(data))
    }

    pub fn constant_scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Leaf for `store[name]`; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let key = (store.tag().to_string(), name.to_string());
        if let Some(&v) = self.param_vars.get(&key) {
            return Ok(v);
        }
        let t = store.get(name)?.clone();
        let v = if self.frozen.contains(store.tag()) {
            self.push(t, Op::Const, false)
        } else {
            self.params.push(key.clone());
            let idx = self.params.len() - 1;
            self.push(t, Op::Param(idx), true)
        };
        self.param_vars.insert(key, v);
        Ok(v)
    }

    /// `[m,k] x [k,n] -> [m,n]`, or matrix-vector `[m,k] x [k] -> [m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 2 || sb.is_empty() || sb.len() > 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", &[&sa, &sb]));
        }
        let (m, k) = (sa[0], sa[1]);
        let n = if sb.len() == 2 { sb[1] } else { 0 };
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let out = if n == 0 {
            let mut out = vec![0.0; m];
            for (i, o) in out.iter_mut().enumerate() {
                let row = &av[i * k..(i + 1) * k];
                *o = row.iter().zip(bv).map(|(x, y)| x * y).sum();
            }
            Tensor::vector(out)
        } else {
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for p in 0..k {
                    let x = av[i * k + p];
                    if x == 0.0 {
                        continue;
                    }
                    let brow = &bv[p * n..(p + 1) * n];
                    for (o, y) in out[i * n..(i + 1) * n].iter_mut().zip(brow) {
                        *o += x * y;
                    }
                }
            }
            Tensor::new(vec![m, n], out)?
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul { a, b, m, k, n }, rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, &[self.shape(a), self.shape(b)]));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(va.shape().to_vec(), data).expect("same shape")
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| f(x)).collect();
        Tensor::new(va.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_with(a, b, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_with(a, b, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("elementwise-mul", a, b)?;
        let out = self.zip_with(a, b, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.map(a, |x| c * x);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let out = self.map(a, |x| x + c);
        let rg = self.rg(a);
        self.push(out, Op::AddConst(a), rg)
    }

    /// A one-element tensor `s` times any tensor `x`.
    pub fn scale_by(&mut self, s: Var, x: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(shape_err("scalar-mul", &[self.shape(s), self.shape(x)]));
        }
        let c = self.scalar(s);
        let out = self.map(x, |v| c * v);
        let rg = self.rg(s) || self.rg(x);
        Ok(self.push(out, Op::ScaleBy { s, x }, rg))
    }

    /// Flattens and joins the inputs into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(shape_err("concat", &[]));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::vector(data), Op::Concat(parts.to_vec()), rg))
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        let Some(&first) = rows.first() else {
            return Err(shape_err("stack", &[]));
        };
        let d = self.value(first).len();
        let mut data = Vec::with_capacity(d * rows.len());
        for &r in rows {
            let v = self.value(r);
            if v.shape().len() != 1 || v.len() != d {
                return Err(shape_err("stack", &[self.shape(first), v.shape()]));
            }
            data.extend_from_slice(v.data());
        }
        let rg = rows.iter().any(|&r| self.rg(r));
        let t = Tensor::new(vec![rows.len(), d], data)?;
        Ok(self.push(t, Op::Stack(rows.to_vec()), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(shape_err("transpose", &[&s]));
        }
        let (rows, cols) = (s[0], s[1]);
        let v = self.value(a).data();
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                out[j * rows + i] = v[i * cols + j];
            }
        }
        let t = Tensor::new(vec![cols, rows], out)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Transpose { a, rows, cols }, rg))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.map(a, sigmoid);
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.map(a, f64::tanh);
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.map(a, f64::ln);
        let rg = self.rg(a);
        self.push(out, Op::Log(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.map(a, f64::exp);
        let rg = self.rg(a);
        self.push(out, Op::Exp(a), rg)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let out = self.map(a, f64::sqrt);
        let rg = self.rg(a);
        self.push(out, Op::Sqrt(a), rg)
    }

    /// Softmax over a vector, max-subtracted.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.shape().len() != 1 || v.is_empty() {
            return Err(shape_err("softmax", &[v.shape()]));
        }
        let out = softmax_masked(v.data(), None);
        let rg = self.rg(a);
        Ok(self.push(Tensor::vector(out), Op::Softmax(a), rg))
    }

    /// Log-softmax over the unmasked entries of a vector; masked entries
    /// (`mask[i] == false`) come out as `-inf` and receive no gradient.
    pub fn log_softmax(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let v = self.value(a);
        if v.shape().len() != 1 || v.is_empty() {
            return Err(shape_err("log-softmax", &[v.shape()]));
        }
        if let Some(m) = mask {
            if m.len() != v.len() || !m.iter().any(|&b| b) {
                return Err(shape_err("log-softmax", &[v.shape(), &[m.len()]]));
            }
        }
        let x = v.data();
        let mx = x
            .iter()
            .enumerate()
            .filter(|(i, _)| mask.is_none_or(|m| m[*i]))
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = x
            .iter()
            .enumerate()
            .filter(|(i, _)| mask.is_none_or(|m| m[*i]))
            .map(|(_, &v)| (v - mx).exp())
            .sum::<f64>()
            .ln()
            + mx;
        let out = x
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if mask.is_none_or(|m| m[i]) {
                    v - lse
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::vector(out),
            Op::LogSoftmax {
                a,
                mask: mask.map(<[bool]>::to_vec),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Dot product of two equal-shape tensors.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let m = self.mul(a, b)?;
        Ok(self.sum(m))
    }

    /// Elementwise maximum across a set of equal-shape tensors (ties go to
    /// the earliest input).
    pub fn max_pool(&mut self, inputs: &[Var]) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return Err(shape_err("max-pool-over-set", &[]));
        };
        let shape = self.shape(first).to_vec();
        for &x in inputs {
            if self.shape(x) != shape.as_slice() {
                return Err(shape_err("max-pool-over-set", &[&shape, self.shape(x)]));
            }
        }
        let mut out = self.value(first).data().to_vec();
        let mut argmax = vec![0; out.len()];
        for (j, &x) in inputs.iter().enumerate().skip(1) {
            for (i, &v) in self.value(x).data().iter().enumerate() {
                if v > out[i] {
                    out[i] = v;
                    argmax[i] = j;
                }
            }
        }
        let rg = inputs.iter().any(|&x| self.rg(x));
        let t = Tensor::new(shape, out)?;
        Ok(self.push(
            t,
            Op::MaxPool {
                inputs: inputs.to_vec(),
                argmax,
            },
            rg,
        ))
    }

    /// Row `row` of a `[n, d]` table.
    pub fn embedding(&mut self, table: Var, row: usize) -> Result<Var> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 || row >= s[0] {
            return Err(shape_err("embedding-lookup", &[&s, &[row]]));
        }
        let dim = s[1];
        let data = self.value(table).data()[row * dim..(row + 1) * dim].to_vec();
        let rg = self.rg(table);
        Ok(self.push(Tensor::vector(data), Op::Embedding { table, row, dim }, rg))
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(a);
        if v.shape().len() != 1 || start + len > v.len() || len == 0 {
            return Err(shape_err("slice", &[v.shape(), &[start, len]]));
        }
        let data = v.data()[start..start + len].to_vec();
        let rg = self.rg(a);
        Ok(self.push(Tensor::vector(data), Op::Slice { a, start, len }, rg))
    }

    /// Element `i` of a vector, as a scalar.
    pub fn index(&mut self, a: Var, i: usize) -> Result<Var> {
        let s = self.slice(a, i, 1)?;
        Ok(self.sum(s))
    }

    /// Same value, no gradient.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let v = self.value(a).clone();
        self.push(v, Op::StopGrad, false)
    }

    /// One LSTM cell update from pre-activations `z = [i; f; g; o]` (length
    /// `4H`) and the previous cell `c` (length `H`). Output is `[h'; c']`.
    pub fn lstm_cell(&mut self, z: Var, c: Var) -> Result<Var> {
        let hidden = self.value(c).len();
        if self.value(z).len() != 4 * hidden {
            return Err(shape_err("lstm-cell", &[self.shape(z), self.shape(c)]));
        }
        let zv = self.value(z).data();
        let cv = self.value(c).data();
        let mut out = vec![0.0; 2 * hidden];
        for j in 0..hidden {
            let i = sigmoid(zv[j]);
            let f = sigmoid(zv[hidden + j]);
            let g = zv[2 * hidden + j].tanh();
            let o = sigmoid(zv[3 * hidden + j]);
            let cn = f * cv[j] + i * g;
            out[hidden + j] = cn;
            out[j] = o * cn.tanh();
        }
        let rg = self.rg(z) || self.rg(c);
        Ok(self.push(Tensor::vector(out), Op::LstmCell { z, c, hidden }, rg))
    }

    /// Gradients of the scalar `loss` with respect to every parameter it reaches.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let grads = self.node_grads(loss)?;
        let mut out = Gradients::default();
        for (id, g) in grads.into_iter().enumerate() {
            if let (Op::Param(p), Some(g)) = (&self.nodes[id].op, g) {
                let (tag, name) = &self.params[*p];
                let t = Tensor::new(self.nodes[id].value.shape().to_vec(), g)?;
                out.stores
                    .entry(tag.clone())
                    .or_default()
                    .insert(name.clone(), t);
            }
        }
        Ok(out)
    }

    /// Gradients of `loss` with respect to arbitrary nodes (zeros when unreached).
    pub fn grad_wrt(&self, loss: Var, wrt: &[Var]) -> Result<Vec<Tensor>> {
        let mut grads = self.node_grads(loss)?;
        wrt.iter()
            .map(|&v| {
                let shape = self.shape(v).to_vec();
                let g = grads[v.0]
                    .take()
                    .unwrap_or_else(|| vec![0.0; self.value(v).len()]);
                Tensor::new(shape, g)
            })
            .collect()
    }

    fn node_grads(&self, loss: Var) -> Result<Vec<Option<Vec<f64>>>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backprop_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(grads)
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
        f(slot);
    }

    fn backprop_node(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let out = node.value.data();
        match &node.op {
            Op::Const | Op::Param(_) | Op::StopGrad => {}
            &Op::MatMul { a, b, m, k, n } => {
                let av = self.value(a).data();
                let bv = self.value(b).data();
                if n == 0 {
                    self.acc(grads, a, |ga| {
                        for i in 0..m {
                            let gi = g[i];
                            if gi == 0.0 {
                                continue;
                            }
                            for (x, y) in ga[i * k..(i + 1) * k].iter_mut().zip(bv) {
                                *x += gi * y;
                            }
                        }
                    });
                    self.acc(grads, b, |gb| {
                        for i in 0..m {
                            let gi = g[i];
                            if gi == 0.0 {
                                continue;
                            }
                            for (x, y) in gb.iter_mut().zip(&av[i * k..(i + 1) * k]) {
                                *x += gi * y;
                            }
                        }
                    });
                } else {
                    self.acc(grads, a, |ga| {
                        for i in 0..m {
                            for p in 0..k {
                                let brow = &bv[p * n..(p + 1) * n];
                                let grow = &g[i * n..(i + 1) * n];
                                ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                    });
                    self.acc(grads, b, |gb| {
                        for i in 0..m {
                            for p in 0..k {
                                let x = av[i * k + p];
                                if x == 0.0 {
                                    continue;
                                }
                                for (o, y) in gb[p * n..(p + 1) * n].iter_mut().zip(&g[i * n..(i + 1) * n]) {
                                    *o += x * y;
                                }
                            }
                        }
                    });
                }
            }
            &Op::Add(a, b) => {
                self.acc(grads, a, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                self.acc(grads, b, |gb| gb.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            }
            &Op::Sub(a, b) => {
                self.acc(grads, a, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                self.acc(grads, b, |gb| gb.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            &Op::Mul(a, b) => {
                let av = self.value(a).data();
                let bv = self.value(b).data();
                self.acc(grads, a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * bv[i];
                    }
                });
                self.acc(grads, b, |gb| {
                    for i in 0..gb.len() {
                        gb[i] += g[i] * av[i];
                    }
                });
            }
            &Op::Scale(a, c) => {
                self.acc(grads, a, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += c * y));
            }
            &Op::AddConst(a) => {
                self.acc(grads, a, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            }
            &Op::ScaleBy { s, x } => {
                let c = self.scalar(s);
                let xv = self.value(x).data();
                self.acc(grads, s, |gs| {
                    gs[0] += g.iter().zip(xv).map(|(a, b)| a * b).sum::<f64>();
                });
                self.acc(grads, x, |gx| gx.iter_mut().zip(g).for_each(|(a, b)| *a += c * b));
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    self.acc(grads, p, |gp| {
                        gp.iter_mut().zip(&g[off..off + len]).for_each(|(a, b)| *a += b)
                    });
                    off += len;
                }
            }
            Op::Stack(rows) => {
                let d = if rows.is_empty() { 0 } else { g.len() / rows.len() };
                for (r, &v) in rows.iter().enumerate() {
                    self.acc(grads, v, |gv| {
                        gv.iter_mut().zip(&g[r * d..(r + 1) * d]).for_each(|(a, b)| *a += b)
                    });
                }
            }
            &Op::Transpose { a, rows, cols } => {
                self.acc(grads, a, |ga| {
                    for i in 0..rows {
                        for j in 0..cols {
                            ga[i * cols + j] += g[j * rows + i];
                        }
                    }
                });
            }
            &Op::Sigmoid(a) => {
                self.acc(grads, a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * out[i] * (1.0 - out[i]);
                    }
                });
            }
            &Op::Tanh(a) => {
                self.acc(grads, a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * (1.0 - out[i] * out[i]);
                    }
                });
            }
            &Op::Log(a) => {
                let av = self.value(a).data();
                self.acc(grads, a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] / av[i];
                    }
                });
            }
            &Op::Exp(a) => {
                self.acc(grads, a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * out[i];
                    }
                });
            }
            &Op::Sqrt(a) => {
                self.acc(grads, a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * 0.5 / out[i];
                    }
                });
            }
            &Op::Softmax(a) => {
                let dotp: f64 = g.iter().zip(out).map(|(x, y)| x * y).sum();
                self.acc(grads, a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += out[i] * (g[i] - dotp);
                    }
                });
            }
            Op::LogSoftmax { a, mask } => {
                let live = |i: usize| mask.as_ref().is_none_or(|m| m[i]);
                let gsum: f64 = (0..g.len()).filter(|&i| live(i)).map(|i| g[i]).sum();
                self.acc(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        if live(i) {
                            ga[i] += g[i] - out[i].exp() * gsum;
                        }
                    }
                });
            }
            &Op::Sum(a) => {
                self.acc(grads, a, |ga| ga.iter_mut().for_each(|x| *x += g[0]));
            }
            Op::MaxPool { inputs, argmax } => {
                for (j, &x) in inputs.iter().enumerate() {
                    self.acc(grads, x, |gx| {
                        for i in 0..gx.len() {
                            if argmax[i] == j {
                                gx[i] += g[i];
                            }
                        }
                    });
                }
            }
            &Op::Embedding { table, row, dim } => {
                self.acc(grads, table, |gt| {
                    gt[row * dim..(row + 1) * dim]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(a, b)| *a += b)
                });
            }
            &Op::Slice { a, start, len } => {
                self.acc(grads, a, |ga| {
                    ga[start..start + len]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(x, y)| *x += y)
                });
            }
            &Op::LstmCell { z, c, hidden } => {
                let zv = self.value(z).data();
                let cv = self.value(c).data();
                let mut gz = vec![0.0; 4 * hidden];
                let mut gc = vec![0.0; hidden];
                for j in 0..hidden {
                    let i = sigmoid(zv[j]);
                    let f = sigmoid(zv[hidden + j]);
                    let gg = zv[2 * hidden + j].tanh();
                    let o = sigmoid(zv[3 * hidden + j]);
                    let cn = out[hidden + j];
                    let tc = cn.tanh();
                    let gh = g[j];
                    let dcn = g[hidden + j] + gh * o * (1.0 - tc * tc);
                    gz[3 * hidden + j] = gh * tc * o * (1.0 - o);
                    gz[j] = dcn * gg * i * (1.0 - i);
                    gz[hidden + j] = dcn * cv[j] * f * (1.0 - f);
                    gz[2 * hidden + j] = dcn * i * (1.0 - gg * gg);
                    gc[j] = dcn * f;
                }
                self.acc(grads, z, |a| a.iter_mut().zip(&gz).for_each(|(x, y)| *x += y));
                self.acc(grads, c, |a| a.iter_mut().zip(&gc).for_each(|(x, y)| *x += y));
            }
        }
    }
}

/// Max-subtracted softmax, optionally restricted to `mask[i] == true`
/// (masked entries get exactly zero).
pub fn softmax_masked(x: &[f64], mask: Option<&[bool]>) -> Vec<f64> {
    let live = |i: usize| mask.is_none_or(|m| m[i]);
    let mx = (0..x.len())
        .filter(|&i| live(i))
        .map(|i| x[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = (0..x.len())
        .map(|i| if live(i) { (x[i] - mx).exp() } else { 0.0 })
        .collect();
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= s);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn identity_matmul() {
        let mut t = Tape::new();
        let i = t.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let x = t.constant(Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap());
        let y = t.matmul(i, x).unwrap();
        assert_eq!(t.shape(y), &[2, 1]);
        assert_eq!(t.value(y).data(), &[3.0, 4.0]);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut t = Tape::new();
        let x = t.constant_vec(vec![0.0; 3]);
        let y = t.softmax(x).unwrap();
        for &p in t.value(y).data() {
            assert!(close(p, 1.0 / 3.0, 1e-15));
        }
    }

    #[test]
    fn sigmoid_value_and_derivative() {
        let mut s = ParamStore::new("m");
        s.insert("x", Tensor::scalar(0.0));
        let mut t = Tape::new();
        let x = t.param(&s, "x").unwrap();
        let y = t.sigmoid(x);
        assert_eq!(t.scalar(y), 0.5);
        let g = t.backward(y).unwrap();
        assert_eq!(g.get("m", "x").unwrap().item(), 0.25);
    }

    #[test]
    fn linear_gradient() {
        let mut s = ParamStore::new("m");
        s.insert("w", Tensor::matrix(1, 2, vec![0.3, -0.7]).unwrap());
        let mut t = Tape::new();
        let w = t.param(&s, "w").unwrap();
        let x = t.constant_vec(vec![1.0, 1.0]);
        let y = t.matmul(w, x).unwrap();
        let l = t.sum(y);
        let g = t.backward(l).unwrap();
        assert_eq!(g.get("m", "w").unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn stop_gradient_product() {
        let mut s = ParamStore::new("m");
        s.insert("x", Tensor::scalar(3.0));
        let mut t = Tape::new();
        let x = t.param(&s, "x").unwrap();
        let c = t.stop_gradient(x);
        assert_eq!(t.scalar(c), 3.0);
        let y = t.mul(c, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get("m", "x").unwrap().item(), 3.0);
        // Only the stop-gradient path: nothing reachable.
        let z = t.scale(c, 2.0);
        let g = t.backward(z).unwrap();
        assert!(g.get("m", "x").is_none());
    }

    #[test]
    fn unreachable_params_absent_and_non_scalar_rejected() {
        let mut s = ParamStore::new("m");
        s.insert("a", Tensor::vector(vec![1.0, 2.0]));
        s.insert("b", Tensor::scalar(1.0));
        let mut t = Tape::new();
        let a = t.param(&s, "a").unwrap();
        let _b = t.param(&s, "b").unwrap();
        assert!(matches!(t.backward(a), Err(Error::NonScalarLoss(_))));
        let l = t.sum(a);
        let g = t.backward(l).unwrap();
        assert!(g.get("m", "b").is_none());
        assert!(g.get("m", "a").is_some());
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut t = Tape::new();
        let a = t.constant_vec(vec![1.0, 2.0]);
        let b = t.constant_vec(vec![1.0, 2.0, 3.0]);
        match t.add(a, b) {
            Err(Error::Shape { op, shapes }) => {
                assert_eq!(op, "add");
                assert_eq!(shapes, vec![vec![2], vec![3]]);
            }
            other => panic!("{other:?}"),
        }
        assert!(t.matmul(a, b).is_err());
    }

    #[test]
    fn masked_log_softmax() {
        let mut t = Tape::new();
        let x = t.constant_vec(vec![1.0, 5.0, 1.0]);
        let y = t.log_softmax(x, Some(&[true, false, true])).unwrap();
        let v = t.value(y).data();
        assert!(close(v[0], 0.5f64.ln(), 1e-15));
        assert_eq!(v[1], f64::NEG_INFINITY);
    }

    #[test]
    fn frozen_store_gives_no_gradient() {
        let mut s = ParamStore::new("d");
        s.insert("w", Tensor::scalar(2.0));
        let mut t = Tape::new();
        t.freeze("d");
        let w = t.param(&s, "w").unwrap();
        let y = t.mul(w, w).unwrap();
        let g = t.backward(y).unwrap();
        assert!(g.store_ref("d").is_none());
    }
}
