//! Reverse-mode differentiation over a linear operation record.
//!
//! Every primitive appends a node holding its forward value. [`Tape::backward`]
//! walks the nodes from last to first, so gradients flow in exact reverse
//! recording order. Parameters enter the tape through [`Tape::param`], which
//! binds each [`ParamId`] to a single leaf per tape.
//!
//! Primitive operations panic on shape mismatch: shapes are checked by the
//! layer functions that build on them.

use super::kernels;
use super::params::{ParamGrads, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Probability floor applied before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatVec(Var, Var),
    MatTVec(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    OneMinus(Var),
    Tanh(Var),
    Sigmoid(Var),
    Concat(Vec<Var>),
    Row(Var, usize),
    StackRows(Vec<Var>),
    Dot(Var, Var),
    Softmax(Var),
    Gather(Var, Vec<usize>),
    ScaleConst(Var, f64),
    MulConst(Var, Vec<f64>),
    NormalizeSum(Var),
    CrossEntropy(Var, usize),
    Sum(Vec<Var>),
    SumElements(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param => "param",
            Op::MatVec(..) => "matvec",
            Op::MatTVec(..) => "matvec_t",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::OneMinus(_) => "one_minus",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Concat(_) => "concat",
            Op::Row(..) => "row",
            Op::StackRows(_) => "stack_rows",
            Op::Dot(..) => "dot",
            Op::Softmax(_) => "softmax",
            Op::Gather(..) => "gather",
            Op::ScaleConst(..) => "scale",
            Op::MulConst(..) => "mul_const",
            Op::NormalizeSum(_) => "normalize_sum",
            Op::CrossEntropy(..) => "cross_entropy",
            Op::Sum(_) => "sum",
            Op::SumElements(_) => "sum_elements",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: Vec<Option<Var>>,
    non_finite: Option<&'static str>,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    /// Fails if any recorded operation produced a NaN or infinity.
    pub fn check(&self) -> Result<()> {
        match self.non_finite {
            Some(op) => Err(Error::Numeric(format!("{op} produced a non-finite value"))),
            None => Ok(()),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        if self.non_finite.is_none() && !value.is_finite() {
            self.non_finite = Some(op.name());
        }
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Records a constant; it receives a gradient but is not a parameter.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn vector(&mut self, data: Vec<f64>) -> Var {
        self.constant(Tensor::vector(data))
    }

    /// Binds a parameter to this tape, reusing the leaf on repeated calls.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if self.bound.len() <= id.0 {
            self.bound.resize(id.0 + 1, None);
        }
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param);
        self.bound[id.0] = Some(v);
        v
    }

    /// `W · x` for a `rows × cols` matrix and a `cols` vector.
    pub fn matvec(&mut self, w: Var, x: Var) -> Var {
        let (wt, xt) = (self.value(w), self.value(x));
        assert!(wt.is_matrix(), "matvec: lhs shape {:?}", wt.shape());
        assert_eq!(wt.cols(), xt.len(), "matvec: {:?} · {:?}", wt.shape(), xt.shape());
        let out = kernels::matvec(wt.data(), wt.rows(), wt.cols(), xt.data());
        self.push(Tensor::vector(out), Op::MatVec(w, x))
    }

    /// `Wᵀ · x` for a `rows × cols` matrix and a `rows` vector.
    pub fn matvec_t(&mut self, w: Var, x: Var) -> Var {
        let (wt, xt) = (self.value(w), self.value(x));
        assert!(wt.is_matrix(), "matvec_t: lhs shape {:?}", wt.shape());
        assert_eq!(wt.rows(), xt.len(), "matvec_t: {:?}ᵀ · {:?}", wt.shape(), xt.shape());
        let (rows, cols) = (wt.rows(), wt.cols());
        let mut out = vec![0.0; cols];
        for i in 0..rows {
            let xi = xt.data()[i];
            for (o, w) in out.iter_mut().zip(&wt.data()[i * cols..(i + 1) * cols]) {
                *o += w * xi;
            }
        }
        self.push(Tensor::vector(out), Op::MatTVec(w, x))
    }

    fn zip_same(&self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (at, bt) = (self.value(a), self.value(b));
        assert_eq!(at.shape(), bt.shape(), "{what}: shape mismatch");
        let data = at.data().iter().zip(bt.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::from_parts(at.shape().to_vec(), data)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let at = self.value(a);
        Tensor::from_parts(at.shape().to_vec(), at.data().iter().map(|x| f(*x)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let t = self.zip_same(a, b, "add", |x, y| x + y);
        self.push(t, Op::Add(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let t = self.zip_same(a, b, "mul", |x, y| x * y);
        self.push(t, Op::Mul(a, b))
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| 1.0 - x);
        self.push(t, Op::OneMinus(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.map(a, f64::tanh);
        self.push(t, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.map(a, kernels::sigmoid);
        self.push(t, Op::Sigmoid(a))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut data = Vec::new();
        for &p in parts {
            assert!(self.value(p).shape().len() <= 1, "concat: non-vector operand");
            data.extend_from_slice(self.data(p));
        }
        self.push(Tensor::vector(data), Op::Concat(parts.to_vec()))
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&mut self, m: Var, i: usize) -> Var {
        let mt = self.value(m);
        assert!(mt.is_matrix() && i < mt.rows(), "row {i} of {:?}", mt.shape());
        let t = Tensor::vector(mt.row(i).to_vec());
        self.push(t, Op::Row(m, i))
    }

    /// Stacks equal-length vectors into a `k × n` matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Var {
        assert!(!rows.is_empty(), "stack_rows: no rows");
        let n = self.value(rows[0]).len();
        let mut data = Vec::with_capacity(n * rows.len());
        for &r in rows {
            assert_eq!(self.value(r).len(), n, "stack_rows: ragged rows");
            data.extend_from_slice(self.data(r));
        }
        let t = Tensor::from_parts(vec![rows.len(), n], data);
        self.push(t, Op::StackRows(rows.to_vec()))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let (at, bt) = (self.value(a), self.value(b));
        assert_eq!(at.len(), bt.len(), "dot: length mismatch");
        let v = kernels::dot(at.data(), bt.data());
        self.push(Tensor::scalar(v), Op::Dot(a, b))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let at = self.value(a);
        assert!(!at.is_empty(), "softmax: empty input");
        let out = kernels::softmax(at.data());
        self.push(Tensor::vector(out), Op::Softmax(a))
    }

    /// Selects the listed entries of a vector, in order.
    pub fn gather(&mut self, a: Var, idx: &[usize]) -> Var {
        let data = idx.iter().map(|&i| self.data(a)[i]).collect();
        self.push(Tensor::vector(data), Op::Gather(a, idx.to_vec()))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.map(a, |x| x * c);
        self.push(t, Op::ScaleConst(a, c))
    }

    /// Elementwise product with a constant vector.
    pub fn mul_const(&mut self, a: Var, w: &[f64]) -> Var {
        assert_eq!(self.value(a).len(), w.len(), "mul_const: length mismatch");
        let at = self.value(a);
        let data = at.data().iter().zip(w).map(|(x, y)| x * y).collect();
        let t = Tensor::from_parts(at.shape().to_vec(), data);
        self.push(t, Op::MulConst(a, w.to_vec()))
    }

    /// `x / Σx`. The caller guarantees a positive sum.
    pub fn normalize_sum(&mut self, a: Var) -> Var {
        let s: f64 = self.data(a).iter().sum();
        let t = self.map(a, |x| x / s);
        self.push(t, Op::NormalizeSum(a))
    }

    /// `-ln(max(p[target], 1e-12))` for a probability vector `p`.
    pub fn cross_entropy(&mut self, dist: Var, target: usize) -> Var {
        let p = self.data(dist)[target];
        let v = -p.max(PROB_FLOOR).ln();
        self.push(Tensor::scalar(v), Op::CrossEntropy(dist, target))
    }

    /// Sum of same-shaped tensors.
    pub fn sum(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "sum: no operands");
        let shape = self.shape(parts[0]).to_vec();
        let mut data = vec![0.0; self.value(parts[0]).len()];
        for &p in parts {
            assert_eq!(self.shape(p), shape.as_slice(), "sum: shape mismatch");
            for (d, v) in data.iter_mut().zip(self.data(p)) {
                *d += v;
            }
        }
        self.push(Tensor::from_parts(shape, data), Op::Sum(parts.to_vec()))
    }

    pub fn sum_elements(&mut self, a: Var) -> Var {
        let v = self.data(a).iter().sum();
        self.push(Tensor::scalar(v), Op::SumElements(a))
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check()?;
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::Domain(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let y = node.value.data();
            match &node.op {
                Op::Leaf | Op::Param => {}
                Op::MatVec(w, x) => {
                    let (wt, xt) = (self.value(*w), self.value(*x));
                    let (rows, cols) = (wt.rows(), wt.cols());
                    let dw = slot(&mut grads, *w, wt.len());
                    for r in 0..rows {
                        let gr = g[r];
                        for (d, xv) in dw[r * cols..(r + 1) * cols].iter_mut().zip(xt.data()) {
                            *d += gr * xv;
                        }
                    }
                    let dx = slot(&mut grads, *x, cols);
                    for r in 0..rows {
                        let gr = g[r];
                        for (d, wv) in dx.iter_mut().zip(&wt.data()[r * cols..(r + 1) * cols]) {
                            *d += gr * wv;
                        }
                    }
                }
                Op::MatTVec(w, x) => {
                    let (wt, xt) = (self.value(*w), self.value(*x));
                    let (rows, cols) = (wt.rows(), wt.cols());
                    let dw = slot(&mut grads, *w, wt.len());
                    for r in 0..rows {
                        let xr = xt.data()[r];
                        for (d, gv) in dw[r * cols..(r + 1) * cols].iter_mut().zip(&g) {
                            *d += xr * gv;
                        }
                    }
                    let dx = slot(&mut grads, *x, rows);
                    for (r, d) in dx.iter_mut().enumerate() {
                        *d += kernels::dot(&wt.data()[r * cols..(r + 1) * cols], &g);
                    }
                }
                Op::Add(a, b) => {
                    add_into(slot(&mut grads, *a, g.len()), &g, 1.0);
                    add_into(slot(&mut grads, *b, g.len()), &g, 1.0);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.data(*a), self.data(*b));
                    for (d, (gi, bi)) in slot(&mut grads, *a, g.len()).iter_mut().zip(g.iter().zip(bv)) {
                        *d += gi * bi;
                    }
                    for (d, (gi, ai)) in slot(&mut grads, *b, g.len()).iter_mut().zip(g.iter().zip(av)) {
                        *d += gi * ai;
                    }
                }
                Op::OneMinus(a) => add_into(slot(&mut grads, *a, g.len()), &g, -1.0),
                Op::Tanh(a) => {
                    for (d, (gi, yi)) in slot(&mut grads, *a, g.len()).iter_mut().zip(g.iter().zip(y)) {
                        *d += gi * (1.0 - yi * yi);
                    }
                }
                Op::Sigmoid(a) => {
                    for (d, (gi, yi)) in slot(&mut grads, *a, g.len()).iter_mut().zip(g.iter().zip(y)) {
                        *d += gi * yi * (1.0 - yi);
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        add_into(slot(&mut grads, p, n), &g[offset..offset + n], 1.0);
                        offset += n;
                    }
                }
                Op::Row(m, r) => {
                    let mt = self.value(*m);
                    let cols = mt.cols();
                    let dm = slot(&mut grads, *m, mt.len());
                    add_into(&mut dm[r * cols..(r + 1) * cols], &g, 1.0);
                }
                Op::StackRows(rows) => {
                    let n = node.value.cols();
                    for (k, &r) in rows.iter().enumerate() {
                        add_into(slot(&mut grads, r, n), &g[k * n..(k + 1) * n], 1.0);
                    }
                }
                Op::Dot(a, b) => {
                    let g0 = g[0];
                    let (av, bv) = (self.data(*a), self.data(*b));
                    add_into(slot(&mut grads, *a, bv.len()), bv, g0);
                    add_into(slot(&mut grads, *b, av.len()), av, g0);
                }
                Op::Softmax(a) => {
                    let gy = kernels::dot(&g, y);
                    for (d, (gi, yi)) in slot(&mut grads, *a, g.len()).iter_mut().zip(g.iter().zip(y)) {
                        *d += yi * (gi - gy);
                    }
                }
                Op::Gather(a, idx) => {
                    let n = self.value(*a).len();
                    let da = slot(&mut grads, *a, n);
                    for (k, &j) in idx.iter().enumerate() {
                        da[j] += g[k];
                    }
                }
                Op::ScaleConst(a, c) => add_into(slot(&mut grads, *a, g.len()), &g, *c),
                Op::MulConst(a, w) => {
                    for (d, (gi, wi)) in slot(&mut grads, *a, g.len()).iter_mut().zip(g.iter().zip(w)) {
                        *d += gi * wi;
                    }
                }
                Op::NormalizeSum(a) => {
                    let s: f64 = self.data(*a).iter().sum();
                    let gy = kernels::dot(&g, y);
                    for (d, gi) in slot(&mut grads, *a, g.len()).iter_mut().zip(&g) {
                        *d += (gi - gy) / s;
                    }
                }
                Op::CrossEntropy(dist, t) => {
                    let p = self.data(*dist)[*t];
                    let n = self.value(*dist).len();
                    let dd = slot(&mut grads, *dist, n);
                    if p > PROB_FLOOR {
                        dd[*t] -= g[0] / p;
                    }
                }
                Op::Sum(parts) => {
                    for &p in parts {
                        add_into(slot(&mut grads, p, g.len()), &g, 1.0);
                    }
                }
                Op::SumElements(a) => {
                    let g0 = g[0];
                    for d in slot(&mut grads, *a, self.value(*a).len()).iter_mut() {
                        *d += g0;
                    }
                }
            }
            grads[i] = Some(g);
        }

        let params = self
            .bound
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId(i), v)))
            .collect();
        Ok(Gradients { grads, params })
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64], c: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient for a node; `None` when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Dense parameter gradients; unreachable parameters get zeros.
    pub fn param_grads(&self, store: &ParamStore) -> ParamGrads {
        let mut out = ParamGrads::zeros_like(store);
        self.accumulate_into(&mut out);
        out
    }

    pub fn accumulate_into(&self, out: &mut ParamGrads) {
        for &(id, v) in &self.params {
            if let Some(g) = self.wrt(v) {
                for (d, s) in out.get_mut(id).iter_mut().zip(g) {
                    *d += s;
                }
            }
        }
    }
}
