use std::collections::BTreeMap;

use super::math::{log_softmax, sigmoid, softmax_unchecked};
use super::params::{ParamId, ParamStore};
use super::tensor::{matvec, matvec_t, Tensor};
use crate::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    MatVec(usize, usize),
    MatVecT(usize, usize),
    Row(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Affine(usize, f64),
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    Exp(usize),
    Log(usize),
    LogSigmoid(usize),
    Softmax(usize),
    LogSoftmax(usize),
    Clamp(usize, f64, f64),
    Concat(Vec<usize>),
    Slice(usize, usize),
    Sum(usize),
    Dot(usize, usize),
    Pick(usize, usize),
    AddN(Vec<usize>),
}

impl Op {
    fn parents(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Constant | Param(_) => vec![],
            MatVec(a, b) | MatVecT(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | Dot(a, b) => {
                vec![*a, *b]
            }
            Row(a, _) | Affine(a, _) | Tanh(a) | Sigmoid(a) | Relu(a) | Exp(a) | Log(a)
            | LogSigmoid(a) | Softmax(a) | LogSoftmax(a) | Clamp(a, _, _) | Slice(a, _)
            | Sum(a) | Pick(a, _) => vec![*a],
            Concat(v) | AddN(v) => v.clone(),
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    // `None` for parameters, whose values stay in the store.
    value: Option<Tensor>,
}

/// Gradients of one scalar with respect to the parameters it reached.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    by_param: BTreeMap<ParamId, Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.by_param.get(&id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.by_param.iter().map(|(k, v)| (*k, v.as_slice()))
    }
}

/// A recorded computation over parameters borrowed from a [`ParamStore`].
pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_nodes: BTreeMap<ParamId, usize>,
}

fn shape_err(op: &str, detail: String) -> Error {
    Error::Config(format!("{op}: {detail}"))
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_nodes: BTreeMap::new(),
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn tensor(&self, i: usize) -> &Tensor {
        let node = &self.nodes[i];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.value(*id),
            (None, _) => unreachable!("only parameter nodes borrow their value"),
        }
    }

    fn data(&self, i: usize) -> &[f64] {
        self.tensor(i).data()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.tensor(v.0)
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.tensor(v.0).item()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Constant, value)
    }

    pub fn vector(&mut self, data: Vec<f64>) -> Var {
        self.constant(Tensor::vector(data))
    }

    /// Copies the current value of `v` into a fresh constant, cutting the
    /// gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.tensor(v.0).clone();
        self.constant(t)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&i) = self.param_nodes.get(&id) {
            return Var(i);
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        let i = self.nodes.len() - 1;
        self.param_nodes.insert(id, i);
        Var(i)
    }

    pub fn param_named(&mut self, name: &str) -> Result<Var> {
        let id = self.store.id(name)?;
        Ok(self.param(id))
    }

    fn dims2(&self, m: Var, op: &str) -> Result<(usize, usize)> {
        self.tensor(m.0)
            .dims2()
            .ok_or_else(|| shape_err(op, format!("expected a matrix, got {:?}", self.tensor(m.0).shape())))
    }

    /// `m · x` with `m: [rows, cols]`, `x: [cols]`.
    pub fn matvec(&mut self, m: Var, x: Var) -> Result<Var> {
        let (r, c) = self.dims2(m, "matvec")?;
        if self.tensor(x.0).len() != c {
            return Err(shape_err("matvec", format!("matrix [{r}, {c}] times vector of length {}", self.tensor(x.0).len())));
        }
        let out = matvec(self.data(m.0), r, c, self.data(x.0));
        Ok(self.push(Op::MatVec(m.0, x.0), Tensor::vector(out)))
    }

    /// `mᵀ · x` with `m: [rows, cols]`, `x: [rows]`.
    pub fn matvec_t(&mut self, m: Var, x: Var) -> Result<Var> {
        let (r, c) = self.dims2(m, "matvec_t")?;
        if self.tensor(x.0).len() != r {
            return Err(shape_err("matvec_t", format!("transpose of [{r}, {c}] times vector of length {}", self.tensor(x.0).len())));
        }
        let out = matvec_t(self.data(m.0), r, c, self.data(x.0));
        Ok(self.push(Op::MatVecT(m.0, x.0), Tensor::vector(out)))
    }

    /// Row `row` of matrix `m` (embedding lookup).
    pub fn row(&mut self, m: Var, row: usize) -> Result<Var> {
        let (r, _) = self.dims2(m, "row")?;
        if row >= r {
            return Err(shape_err("row", format!("row {row} out of range for {r} rows")));
        }
        let out = self.tensor(m.0).row(row).to_vec();
        Ok(self.push(Op::Row(m.0, row), Tensor::vector(out)))
    }

    fn same_len(&self, a: Var, b: Var, op: &str) -> Result<()> {
        let (la, lb) = (self.tensor(a.0).len(), self.tensor(b.0).len());
        if la != lb {
            return Err(shape_err(op, format!("lengths {la} and {lb} differ")));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_len(a, b, name)?;
        let shape = self.tensor(a.0).shape().to_vec();
        let out = self
            .data(a.0)
            .iter()
            .zip(self.data(b.0))
            .map(|(x, y)| f(*x, *y))
            .collect();
        Ok(self.push(op, Tensor::new(shape, out)?))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a.0, b.0), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a.0, b.0), "sub", |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a.0, b.0), "mul", |x, y| x * y)
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = self.tensor(a.0);
        let shape = t.shape().to_vec();
        let out: Vec<f64> = t.data().iter().map(|x| f(*x)).collect();
        self.push(op, Tensor::new(shape, out).expect("map preserves shape"))
    }

    /// `scale · a + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        self.map(a, Op::Affine(a.0, scale), |x| scale * x + shift)
    }

    pub fn scale(&mut self, a: Var, scale: f64) -> Var {
        self.affine(a, scale, 0.0)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.affine(a, -1.0, 0.0)
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        self.affine(a, -1.0, 1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a.0), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a.0), sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a.0), |x| x.max(0.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp(a.0), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.map(a, Op::Log(a.0), f64::ln)
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::LogSigmoid(a.0), super::math::log_sigmoid)
    }

    /// Clamps to `[lo, hi]`; gradient is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.map(a, Op::Clamp(a.0, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let out = softmax_unchecked(self.data(a.0));
        self.push(Op::Softmax(a.0), Tensor::vector(out))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let out = log_softmax(self.data(a.0));
        self.push(Op::LogSoftmax(a.0), Tensor::vector(out))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut out = Vec::new();
        for p in parts {
            out.extend_from_slice(self.data(p.0));
        }
        self.push(Op::Concat(parts.iter().map(|v| v.0).collect()), Tensor::vector(out))
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let n = self.tensor(a.0).len();
        if start + len > n {
            return Err(shape_err("slice", format!("[{start}, {}) out of range for length {n}", start + len)));
        }
        let out = self.data(a.0)[start..start + len].to_vec();
        Ok(self.push(Op::Slice(a.0, start), Tensor::vector(out)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a.0).iter().sum();
        self.push(Op::Sum(a.0), Tensor::scalar(s))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "dot")?;
        let s = self.data(a.0).iter().zip(self.data(b.0)).map(|(x, y)| x * y).sum();
        Ok(self.push(Op::Dot(a.0, b.0), Tensor::scalar(s)))
    }

    /// Entry `index` of `a` as a scalar.
    pub fn pick(&mut self, a: Var, index: usize) -> Result<Var> {
        let n = self.tensor(a.0).len();
        if index >= n {
            return Err(shape_err("pick", format!("index {index} out of range for length {n}")));
        }
        let x = self.data(a.0)[index];
        Ok(self.push(Op::Pick(a.0, index), Tensor::scalar(x)))
    }

    /// Sum of same-shaped tensors.
    pub fn add_n(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err("add_n", "no operands".into()))?;
        let shape = self.tensor(first.0).shape().to_vec();
        let mut out = vec![0.0; self.tensor(first.0).len()];
        for p in parts {
            let d = self.data(p.0);
            if d.len() != out.len() {
                return Err(shape_err("add_n", format!("lengths {} and {} differ", out.len(), d.len())));
            }
            for (o, x) in out.iter_mut().zip(d) {
                *o += x;
            }
        }
        Ok(self.push(Op::AddN(parts.iter().map(|v| v.0).collect()), Tensor::new(shape, out)?))
    }

    /// Reverse pass from the scalar `loss`. Parameters the loss does not
    /// reach are absent from the result (zero gradient).
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.tensor(loss.0).len() != 1 {
            return Err(Error::Config(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.tensor(loss.0).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Some(&p) = node.op.parents().iter().find(|&&p| p >= i) {
                return Err(Error::Internal(format!(
                    "node {i} depends on later node {p}; recorded computation has a cycle"
                )));
            }
            self.propagate(i, &node.op, &g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn propagate(
        &self,
        i: usize,
        op: &Op,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        out: &mut Gradients,
    ) {
        fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], p: usize, n: usize) -> &'a mut Vec<f64> {
            grads[p].get_or_insert_with(|| vec![0.0; n])
        }
        fn add_into(grads: &mut [Option<Vec<f64>>], p: usize, contrib: impl ExactSizeIterator<Item = f64>) {
            let n = contrib.len();
            let s = slot(grads, p, n);
            for (a, b) in s.iter_mut().zip(contrib) {
                *a += b;
            }
        }

        let y = || self.data(i);
        match *op {
            Op::Constant => {}
            Op::Param(id) => {
                let acc = out
                    .by_param
                    .entry(id)
                    .or_insert_with(|| vec![0.0; g.len()]);
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            Op::MatVec(m, x) => {
                let (r, c) = self.tensor(m).dims2().expect("matrix");
                let xv = self.data(x);
                let dm = slot(grads, m, r * c);
                for (row, gi) in dm.chunks_exact_mut(c).zip(g) {
                    if *gi == 0.0 {
                        continue;
                    }
                    for (d, xj) in row.iter_mut().zip(xv) {
                        *d += gi * xj;
                    }
                }
                let dx = matvec_t(self.data(m), r, c, g);
                add_into(grads, x, dx.into_iter());
            }
            Op::MatVecT(m, x) => {
                let (r, c) = self.tensor(m).dims2().expect("matrix");
                let xv = self.data(x);
                let dm = slot(grads, m, r * c);
                for (row, xr) in dm.chunks_exact_mut(c).zip(xv) {
                    if *xr == 0.0 {
                        continue;
                    }
                    for (d, gj) in row.iter_mut().zip(g) {
                        *d += xr * gj;
                    }
                }
                let dx = matvec(self.data(m), r, c, g);
                add_into(grads, x, dx.into_iter());
            }
            Op::Row(m, row) => {
                let (r, c) = self.tensor(m).dims2().expect("matrix");
                let dm = slot(grads, m, r * c);
                for (d, gi) in dm[row * c..(row + 1) * c].iter_mut().zip(g) {
                    *d += gi;
                }
            }
            Op::Add(a, b) => {
                add_into(grads, a, g.iter().copied());
                add_into(grads, b, g.iter().copied());
            }
            Op::Sub(a, b) => {
                add_into(grads, a, g.iter().copied());
                add_into(grads, b, g.iter().map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.data(a), self.data(b));
                let da: Vec<f64> = g.iter().zip(bv).map(|(g, b)| g * b).collect();
                let db: Vec<f64> = g.iter().zip(av).map(|(g, a)| g * a).collect();
                add_into(grads, a, da.into_iter());
                add_into(grads, b, db.into_iter());
            }
            Op::Affine(a, s) => add_into(grads, a, g.iter().map(|x| s * x)),
            Op::Tanh(a) => {
                let d: Vec<f64> = g.iter().zip(y()).map(|(g, y)| g * (1.0 - y * y)).collect();
                add_into(grads, a, d.into_iter());
            }
            Op::Sigmoid(a) => {
                let d: Vec<f64> = g.iter().zip(y()).map(|(g, y)| g * y * (1.0 - y)).collect();
                add_into(grads, a, d.into_iter());
            }
            Op::Relu(a) => {
                let d: Vec<f64> = g
                    .iter()
                    .zip(self.data(a))
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect();
                add_into(grads, a, d.into_iter());
            }
            Op::Exp(a) => {
                let d: Vec<f64> = g.iter().zip(y()).map(|(g, y)| g * y).collect();
                add_into(grads, a, d.into_iter());
            }
            Op::Log(a) => {
                let d: Vec<f64> = g.iter().zip(self.data(a)).map(|(g, x)| g / x).collect();
                add_into(grads, a, d.into_iter());
            }
            Op::LogSigmoid(a) => {
                let d: Vec<f64> = g
                    .iter()
                    .zip(self.data(a))
                    .map(|(g, x)| g * sigmoid(-x))
                    .collect();
                add_into(grads, a, d.into_iter());
            }
            Op::Softmax(a) => {
                let yv = y();
                let inner: f64 = g.iter().zip(yv).map(|(g, y)| g * y).sum();
                let d: Vec<f64> = g.iter().zip(yv).map(|(g, y)| y * (g - inner)).collect();
                add_into(grads, a, d.into_iter());
            }
            Op::LogSoftmax(a) => {
                let total: f64 = g.iter().sum();
                let d: Vec<f64> = g
                    .iter()
                    .zip(y())
                    .map(|(g, ly)| g - ly.exp() * total)
                    .collect();
                add_into(grads, a, d.into_iter());
            }
            Op::Clamp(a, lo, hi) => {
                let d: Vec<f64> = g
                    .iter()
                    .zip(self.data(a))
                    .map(|(g, x)| if *x >= lo && *x <= hi { *g } else { 0.0 })
                    .collect();
                add_into(grads, a, d.into_iter());
            }
            Op::Concat(ref parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.tensor(p).len();
                    add_into(grads, p, g[offset..offset + n].iter().copied());
                    offset += n;
                }
            }
            Op::Slice(a, start) => {
                let n = self.tensor(a).len();
                let d = slot(grads, a, n);
                for (dst, gi) in d[start..start + g.len()].iter_mut().zip(g) {
                    *dst += gi;
                }
            }
            Op::Sum(a) => {
                let n = self.tensor(a).len();
                add_into(grads, a, std::iter::repeat_n(g[0], n));
            }
            Op::Dot(a, b) => {
                let (av, bv) = (self.data(a), self.data(b));
                let da: Vec<f64> = bv.iter().map(|b| g[0] * b).collect();
                let db: Vec<f64> = av.iter().map(|a| g[0] * a).collect();
                add_into(grads, a, da.into_iter());
                add_into(grads, b, db.into_iter());
            }
            Op::Pick(a, index) => {
                let n = self.tensor(a).len();
                slot(grads, a, n)[index] += g[0];
            }
            Op::AddN(ref parts) => {
                for &p in parts {
                    add_into(grads, p, g.iter().copied());
                }
            }
        }
    }
}
