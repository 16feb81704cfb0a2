//! Eager reverse-mode autodiff over a linear tape.
//!
//! Every op computes its value immediately and appends a node; `backward`
//! walks the tape once in reverse. The op set is closed: affine maps,
//! pointwise functions, (masked) row softmax, concatenation, row/column
//! selection, reshape and sum. Everything in the models composes from these.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pointwise {
    Sigmoid,
    Tanh,
    /// Natural log; only used on probabilities inside the loss.
    Ln,
    Add,
    Sub,
    Mul,
}

impl Pointwise {
    fn arity(self) -> usize {
        match self {
            Pointwise::Sigmoid | Pointwise::Tanh | Pointwise::Ln => 1,
            _ => 2,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Pointwise::Sigmoid => "sigmoid",
            Pointwise::Tanh => "tanh",
            Pointwise::Ln => "ln",
            Pointwise::Add => "add",
            Pointwise::Sub => "sub",
            Pointwise::Mul => "mul",
        }
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Constant,
    Param(ParamId),
    Affine {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    Unary(Pointwise, NodeId),
    Binary(Pointwise, NodeId, NodeId),
    Scale(NodeId, T),
    Softmax(NodeId),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    Rows(NodeId, Vec<usize>),
    Cols(NodeId, Vec<usize>),
    Sum(NodeId),
    Reshape(NodeId),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Per-node gradients produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss w.r.t. a node, if the node was reached.
    pub fn get(&self, node: NodeId) -> Option<&[T]> {
        self.grads.get(node.0).and_then(|g| g.as_deref())
    }
}

#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, NodeId>,
}

fn dims(rows: usize, cols: usize) -> Vec<usize> {
    vec![rows, cols]
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn values(&self, id: NodeId) -> &[T] {
        self.nodes[id.0].value.values()
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn rc(&self, id: NodeId) -> (usize, usize) {
        let v = &self.nodes[id.0].value;
        (v.rows(), v.cols())
    }

    fn push(
        &mut self,
        op: Op<T>,
        value: Tensor<T>,
        inputs: &[NodeId],
        name: &str,
    ) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Records a constant (no gradient flows into it).
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Constant,
            requires_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant_row(&mut self, values: Vec<T>) -> Result<NodeId> {
        Ok(self.constant(Tensor::row(values)?))
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Result<NodeId> {
        Ok(self.constant(Tensor::zeros(dims(rows, cols))?))
    }

    /// Leaf for a stored parameter. Repeated calls return the same node, so
    /// gradients from every use accumulate in one place.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> NodeId {
        if let Some(&n) = self.params.get(&id) {
            return n;
        }
        let t = store.get(id);
        let value = Tensor::from_parts(dims(t.rows(), t.cols()), t.values().to_vec());
        self.nodes.push(Node {
            value,
            op: Op::Param(id),
            requires_grad: true,
        });
        let n = NodeId(self.nodes.len() - 1);
        self.params.insert(id, n);
        n
    }

    /// `x · w + b` for `x: n x a`, `w: a x b`, `b: 1 x b`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let (n, a) = self.rc(x);
        let (a2, m) = self.rc(w);
        if a != a2 {
            return Err(Error::shape("affine", self.shape(x), self.shape(w)));
        }
        if let Some(b) = b {
            if self.value(b).len() != m {
                return Err(Error::shape("affine(bias)", self.shape(w), self.shape(b)));
            }
        }
        let xv = self.values(x);
        let wv = self.values(w);
        let mut out = match b {
            Some(b) => {
                let bv = self.values(b);
                let mut o = Vec::with_capacity(n * m);
                for _ in 0..n {
                    o.extend_from_slice(bv);
                }
                o
            }
            None => vec![T::zero(); n * m],
        };
        for i in 0..n {
            let orow = &mut out[i * m..(i + 1) * m];
            for k in 0..a {
                let xik = xv[i * a + k];
                if xik == T::zero() {
                    continue;
                }
                let wrow = &wv[k * m..(k + 1) * m];
                for (o, &wkj) in orow.iter_mut().zip(wrow) {
                    *o += xik * wkj;
                }
            }
        }
        let value = Tensor::from_parts(dims(n, m), out);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(Op::Affine { x, w, b }, value, &inputs, "affine")
    }

    /// Elementwise function of one or two same-shape arguments.
    pub fn pointwise(&mut self, kind: Pointwise, args: &[NodeId]) -> Result<NodeId> {
        if args.len() != kind.arity() {
            return Err(Error::Invalid(format!(
                "{} takes {} argument(s), got {}",
                kind.name(),
                kind.arity(),
                args.len()
            )));
        }
        let shape = self.value(args[0]).shape().to_vec();
        if kind.arity() == 1 {
            let xv = self.values(args[0]);
            let out: Vec<T> = match kind {
                Pointwise::Sigmoid => xv.iter().map(|&v| sigmoid(v)).collect(),
                Pointwise::Tanh => xv.iter().map(|&v| v.tanh()).collect(),
                _ => xv.iter().map(|&v| v.ln()).collect(),
            };
            let value = Tensor::from_parts(shape, out);
            return self.push(Op::Unary(kind, args[0]), value, args, kind.name());
        }
        let (a, b) = (args[0], args[1]);
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(kind.name(), self.shape(a), self.shape(b)));
        }
        let av = self.values(a);
        let bv = self.values(b);
        let out: Vec<T> = match kind {
            Pointwise::Add => av.iter().zip(bv).map(|(&x, &y)| x + y).collect(),
            Pointwise::Sub => av.iter().zip(bv).map(|(&x, &y)| x - y).collect(),
            _ => av.iter().zip(bv).map(|(&x, &y)| x * y).collect(),
        };
        let value = Tensor::from_parts(shape, out);
        self.push(Op::Binary(kind, a, b), value, args, kind.name())
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.pointwise(Pointwise::Sigmoid, &[x])
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.pointwise(Pointwise::Tanh, &[x])
    }

    pub fn ln(&mut self, x: NodeId) -> Result<NodeId> {
        self.pointwise(Pointwise::Ln, &[x])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.pointwise(Pointwise::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.pointwise(Pointwise::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.pointwise(Pointwise::Mul, &[a, b])
    }

    /// Multiplication by a fixed constant.
    pub fn scale(&mut self, x: NodeId, c: T) -> Result<NodeId> {
        let v = self.value(x);
        let value = Tensor::from_parts(
            v.shape().to_vec(),
            v.values().iter().map(|&a| a * c).collect(),
        );
        self.push(Op::Scale(x, c), value, &[x], "scale")
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        self.softmax_masked(x, None)
    }

    /// Row-wise softmax where columns with `mask[j] == false` get exactly 0.
    pub fn softmax_masked(&mut self, x: NodeId, mask: Option<&[bool]>) -> Result<NodeId> {
        let (n, k) = self.rc(x);
        if let Some(m) = mask {
            if m.len() != k {
                return Err(Error::shape("softmax(mask)", self.shape(x), &[m.len()]));
            }
            if !m.iter().any(|&b| b) {
                return Err(Error::Invalid("softmax over a fully masked row".into()));
            }
        }
        let keep = |j: usize| mask.is_none_or(|m| m[j]);
        let xv = self.values(x);
        let mut out = vec![T::zero(); n * k];
        for i in 0..n {
            let row = &xv[i * k..(i + 1) * k];
            let mut kept = (0..k).filter(|&j| keep(j)).map(|j| row[j]);
            let first = kept.next().expect("mask keeps a column");
            let mx = kept.fold(first, T::max);
            let orow = &mut out[i * k..(i + 1) * k];
            let mut total = T::zero();
            for j in 0..k {
                if keep(j) {
                    orow[j] = (row[j] - mx).exp();
                    total += orow[j];
                }
            }
            orow.iter_mut().for_each(|v| *v /= total);
        }
        let value = Tensor::from_parts(dims(n, k), out);
        self.push(Op::Softmax(x), value, &[x], "softmax")
    }

    /// Horizontal concatenation of tensors with equal row counts.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts.first().ok_or(Error::Empty("concat_cols"))?;
        let n = self.rc(first).0;
        for &p in parts {
            if self.rc(p).0 != n {
                return Err(Error::shape(
                    "concat_cols",
                    self.shape(first),
                    self.shape(p),
                ));
            }
        }
        let total: usize = parts.iter().map(|&p| self.rc(p).1).sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        let value = Tensor::from_parts(dims(n, total), out);
        self.push(Op::ConcatCols(parts.to_vec()), value, parts, "concat_cols")
    }

    /// Vertical stacking of tensors with equal column counts.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts.first().ok_or(Error::Empty("concat_rows"))?;
        let k = self.rc(first).1;
        let mut out = Vec::new();
        let mut n = 0;
        for &p in parts {
            let (r, c) = self.rc(p);
            if c != k {
                return Err(Error::shape(
                    "concat_rows",
                    self.shape(first),
                    self.shape(p),
                ));
            }
            n += r;
            out.extend_from_slice(self.values(p));
        }
        let value = Tensor::from_parts(dims(n, k), out);
        self.push(Op::ConcatRows(parts.to_vec()), value, parts, "concat_rows")
    }

    /// Gathers rows (embedding lookup). Indices may repeat, which also
    /// serves as row broadcasting.
    pub fn rows(&mut self, x: NodeId, idx: &[usize]) -> Result<NodeId> {
        if idx.is_empty() {
            return Err(Error::Empty("row selection"));
        }
        let (n, k) = self.rc(x);
        let mut out = Vec::with_capacity(idx.len() * k);
        for &i in idx {
            if i >= n {
                return Err(Error::OutOfRange {
                    what: "rows",
                    index: i,
                    size: n,
                });
            }
            out.extend_from_slice(self.value(x).row_slice(i));
        }
        let value = Tensor::from_parts(dims(idx.len(), k), out);
        self.push(Op::Rows(x, idx.to_vec()), value, &[x], "rows")
    }

    /// Gathers columns.
    pub fn cols(&mut self, x: NodeId, idx: &[usize]) -> Result<NodeId> {
        if idx.is_empty() {
            return Err(Error::Empty("column selection"));
        }
        let (n, k) = self.rc(x);
        if let Some(&bad) = idx.iter().find(|&&j| j >= k) {
            return Err(Error::OutOfRange {
                what: "cols",
                index: bad,
                size: k,
            });
        }
        let xv = self.values(x);
        let mut out = Vec::with_capacity(n * idx.len());
        for i in 0..n {
            out.extend(idx.iter().map(|&j| xv[i * k + j]));
        }
        let value = Tensor::from_parts(dims(n, idx.len()), out);
        self.push(Op::Cols(x, idx.to_vec()), value, &[x], "cols")
    }

    /// Sum of all entries as a `1 x 1` tensor.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.values(x).iter().fold(T::zero(), |a, &b| a + b);
        self.push(Op::Sum(x), Tensor::scalar(s), &[x], "sum")
    }

    /// Same values, new `rows x cols` view.
    pub fn reshape(&mut self, x: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        if rows * cols != self.value(x).len() {
            return Err(Error::shape("reshape", self.shape(x), &[rows, cols]));
        }
        let value = Tensor::from_parts(dims(rows, cols), self.values(x).to_vec());
        self.push(Op::Reshape(x), value, &[x], "reshape")
    }

    /// Back-propagates from a scalar `loss`, adding every parameter gradient
    /// into `store`. Returns the per-node gradients for inspection.
    pub fn backward(&self, loss: NodeId, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        let grads = self.backward_nodes(loss)?;
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(pid), Some(g)) = (&node.op, &grads.grads[i]) {
                store.accumulate(*pid, g);
            }
        }
        Ok(grads)
    }

    /// Gradients of a scalar node w.r.t. every node, without touching a store.
    pub fn backward_nodes(&self, loss: NodeId) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(go) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &go, &mut grads);
            grads[idx] = Some(go);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, go: &[T], grads: &mut [Option<Vec<T>>]) {
        let wants = |id: NodeId| self.nodes[id.0].requires_grad;
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::Affine { x, w, b } => {
                let (n, a) = self.rc(*x);
                let m = self.rc(*w).1;
                if wants(*x) {
                    let wv = self.values(*w);
                    let gx = slot(grads, *x, n * a);
                    for i in 0..n {
                        let grow = &go[i * m..(i + 1) * m];
                        for k in 0..a {
                            let wrow = &wv[k * m..(k + 1) * m];
                            let mut s = T::zero();
                            for (g, wk) in grow.iter().zip(wrow) {
                                s += *g * *wk;
                            }
                            gx[i * a + k] += s;
                        }
                    }
                }
                if wants(*w) {
                    let xv = self.values(*x);
                    let gw = slot(grads, *w, a * m);
                    for i in 0..n {
                        let grow = &go[i * m..(i + 1) * m];
                        for k in 0..a {
                            let xik = xv[i * a + k];
                            if xik == T::zero() {
                                continue;
                            }
                            let gwrow = &mut gw[k * m..(k + 1) * m];
                            for (acc, g) in gwrow.iter_mut().zip(grow) {
                                *acc += xik * *g;
                            }
                        }
                    }
                }
                if let Some(b) = b {
                    if wants(*b) {
                        let gb = slot(grads, *b, m);
                        for i in 0..n {
                            for (acc, g) in gb.iter_mut().zip(&go[i * m..(i + 1) * m]) {
                                *acc += *g;
                            }
                        }
                    }
                }
            }
            Op::Unary(kind, x) => {
                let y = node.value.values();
                let xv = self.values(*x);
                let gx = slot(grads, *x, go.len());
                for j in 0..go.len() {
                    let d = match kind {
                        Pointwise::Sigmoid => y[j] * (T::one() - y[j]),
                        Pointwise::Tanh => T::one() - y[j] * y[j],
                        _ => T::one() / xv[j],
                    };
                    gx[j] += go[j] * d;
                }
            }
            Op::Binary(kind, a, b) => {
                let (av, bv) = (self.values(*a), self.values(*b));
                if wants(*a) {
                    let ga = slot(grads, *a, go.len());
                    for j in 0..go.len() {
                        ga[j] += match kind {
                            Pointwise::Mul => go[j] * bv[j],
                            _ => go[j],
                        };
                    }
                }
                if wants(*b) {
                    let gb = slot(grads, *b, go.len());
                    for j in 0..go.len() {
                        gb[j] += match kind {
                            Pointwise::Mul => go[j] * av[j],
                            Pointwise::Sub => -go[j],
                            _ => go[j],
                        };
                    }
                }
            }
            Op::Scale(x, c) => {
                let gx = slot(grads, *x, go.len());
                for (acc, g) in gx.iter_mut().zip(go) {
                    *acc += *g * *c;
                }
            }
            Op::Softmax(x) => {
                let (n, k) = self.rc(*x);
                let y = node.value.values();
                let gx = slot(grads, *x, n * k);
                for i in 0..n {
                    let yr = &y[i * k..(i + 1) * k];
                    let gr = &go[i * k..(i + 1) * k];
                    let dot = yr
                        .iter()
                        .zip(gr)
                        .fold(T::zero(), |acc, (a, b)| acc + *a * *b);
                    for j in 0..k {
                        gx[i * k + j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let (n, c) = self.rc(p);
                    if wants(p) {
                        let gp = slot(grads, p, n * c);
                        for i in 0..n {
                            for j in 0..c {
                                gp[i * c + j] += go[i * total + offset + j];
                            }
                        }
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if wants(p) {
                        let gp = slot(grads, p, len);
                        for (acc, g) in gp.iter_mut().zip(&go[offset..offset + len]) {
                            *acc += *g;
                        }
                    }
                    offset += len;
                }
            }
            Op::Rows(x, idx) => {
                let (n, k) = self.rc(*x);
                let gx = slot(grads, *x, n * k);
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..k {
                        gx[i * k + j] += go[r * k + j];
                    }
                }
            }
            Op::Cols(x, idx) => {
                let (n, k) = self.rc(*x);
                let m = idx.len();
                let gx = slot(grads, *x, n * k);
                for i in 0..n {
                    for (c, &j) in idx.iter().enumerate() {
                        gx[i * k + j] += go[i * m + c];
                    }
                }
            }
            Op::Sum(x) => {
                let len = self.value(*x).len();
                let gx = slot(grads, *x, len);
                gx.iter_mut().for_each(|v| *v += go[0]);
            }
            Op::Reshape(x) => {
                let gx = slot(grads, *x, go.len());
                for (acc, g) in gx.iter_mut().zip(go) {
                    *acc += *g;
                }
            }
        }
    }
}

fn slot<T: Scalar>(grads: &mut [Option<Vec<T>>], id: NodeId, len: usize) -> &mut Vec<T> {
    grads[id.0].get_or_insert_with(|| vec![T::zero(); len])
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
