//! Reverse-mode differentiation over row-major matrices.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters are
//! read from a borrowed [`ParameterStore`] and never copied into the tape;
//! [`Graph::backward`] walks the record in reverse and returns one gradient
//! per parameter.

use std::collections::{BTreeMap, HashMap};

use ndarray::{s, Array1, Array2, Axis};

use super::params::{Grad, Gradients, ParamId, ParameterStore};
use crate::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Probability clamp used by the cross-entropy loss.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(ParamId),
    Gather { param: ParamId, rows: Vec<usize> },
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Softmax { x: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Array2<f64>, inv_std: Array1<f64> },
    Concat(Vec<Var>),
    SliceCols { x: Var, start: usize },
    Row { x: Var, row: usize },
    Mul { x: Var, mask: Array2<f64> },
    SigmoidBce { logit: Var, label: f64, weight: f64 },
}

struct Node {
    op: Op,
    value: Option<Array2<f64>>,
    needs_grad: bool,
}

pub struct Graph<'p> {
    params: &'p ParameterStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

/// Logistic function, evaluated without overflow for large `|z|`.
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy with the probability clamped to
/// `[BCE_EPS, 1 - BCE_EPS]`.
pub fn bce_loss(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Row-wise softmax; masked columns get exactly zero weight.
pub fn masked_softmax(x: &Array2<f64>, mask: Option<&[bool]>) -> Array2<f64> {
    let mut out = Array2::zeros(x.raw_dim());
    let live = |j: usize| mask.is_none_or(|m| !m[j]);
    for (row_in, mut row_out) in x.rows().into_iter().zip(out.rows_mut()) {
        let max =
            row_in.iter().enumerate().filter(|&(j, _)| live(j)).map(|(_, &v)| v).fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            continue;
        }
        let mut sum = 0.0;
        for (j, (o, &v)) in row_out.iter_mut().zip(row_in.iter()).enumerate() {
            if live(j) {
                *o = (v - max).exp();
                sum += *o;
            }
        }
        row_out.mapv_inplace(|v| v / sum);
    }
    out
}

fn acc(slot: &mut Option<Array2<f64>>, g: Array2<f64>) {
    match slot {
        Some(s) => *s += &g,
        None => *slot = Some(g),
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParameterStore) -> Self {
        Graph { params, nodes: Vec::new(), param_vars: HashMap::new() }
    }

    pub fn params(&self) -> &ParameterStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        match &self.nodes[v.0].op {
            Op::Param(id) => self.params.value(*id),
            _ => self.nodes[v.0].value.as_ref().expect("computed node"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    fn push(&mut self, op: Op, value: Option<Array2<f64>>, needs_grad: bool) -> Var {
        self.nodes.push(Node { op, value, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input; no gradient flows into it.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(Op::Leaf, Some(value), false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let trainable = !self.params.is_frozen(id);
        let v = self.push(Op::Param(id), None, trainable);
        self.param_vars.insert(id, v);
        v
    }

    /// Rows of a parameter matrix, e.g. an embedding lookup.
    pub fn gather(&mut self, id: ParamId, rows: &[usize]) -> Result<Var> {
        let table = self.params.value(id);
        if let Some(&r) = rows.iter().find(|&&r| r >= table.nrows()) {
            return Err(Error::ShapeMismatch(format!("row {r} of a {}-row table", table.nrows())));
        }
        let value = table.select(Axis(0), rows);
        let trainable = !self.params.is_frozen(id);
        Ok(self.push(Op::Gather { param: id, rows: rows.to_vec() }, Some(value), trainable))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(Error::ShapeMismatch(format!("matmul {:?} x {:?}", va.dim(), vb.dim())));
        }
        let value = va.dot(vb);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::MatMul(a, b), Some(value), ng))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.ncols() {
            return Err(Error::ShapeMismatch(format!("matmul_t {:?} x {:?}ᵀ", va.dim(), vb.dim())));
        }
        let value = va.dot(&vb.t());
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::MatMulT(a, b), Some(value), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.dim() != vb.dim() {
            return Err(Error::ShapeMismatch(format!("add {:?} + {:?}", va.dim(), vb.dim())));
        }
        let value = va + vb;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add(a, b), Some(value), ng))
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.nrows() != 1 || vr.ncols() != va.ncols() {
            return Err(Error::ShapeMismatch(format!("add_row {:?} + {:?}", va.dim(), vr.dim())));
        }
        let value = va + vr;
        let ng = self.needs(a) || self.needs(row);
        Ok(self.push(Op::AddRow(a, row), Some(value), ng))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a) * factor;
        let ng = self.needs(a);
        self.push(Op::Scale(a, factor), Some(value), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|v| v.max(0.0));
        let ng = self.needs(a);
        self.push(Op::Relu(a), Some(value), ng)
    }

    /// Row-wise softmax. Columns flagged in `mask` receive zero weight.
    pub fn softmax_rows(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let vx = self.value(x);
        if let Some(m) = mask {
            if m.len() != vx.ncols() {
                return Err(Error::ShapeMismatch(format!("mask of {} for {} columns", m.len(), vx.ncols())));
            }
        }
        let value = masked_softmax(vx, mask);
        let ng = self.needs(x);
        Ok(self.push(Op::Softmax { x }, Some(value), ng))
    }

    /// Per-row layer normalization with `1 × n` scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let vx = self.value(x);
        let n = vx.ncols();
        if self.value(gamma).dim() != (1, n) || self.value(beta).dim() != (1, n) {
            return Err(Error::ShapeMismatch("layer norm scale/shift".into()));
        }
        let mean = vx.mean_axis(Axis(1)).expect("nonempty rows");
        let centered = vx - &mean.view().insert_axis(Axis(1));
        let var = centered.mapv(|v| v * v).mean_axis(Axis(1)).expect("nonempty rows");
        let inv_std = var.mapv(|v| 1.0 / (v + LAYER_NORM_EPS).sqrt());
        let xhat = centered * &inv_std.view().insert_axis(Axis(1));
        let value = &xhat * self.value(gamma) + self.value(beta);
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(Op::LayerNorm { x, gamma, beta, xhat, inv_std }, Some(value), ng))
    }

    /// Column-wise concatenation of equally tall inputs.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).nrows();
        if parts.iter().any(|&p| self.value(p).nrows() != rows) {
            return Err(Error::ShapeMismatch("concat row counts differ".into()));
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("checked rows");
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Op::Concat(parts.to_vec()), Some(value), ng))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let value = self.value(x).slice(s![.., start..end]).to_owned();
        let ng = self.needs(x);
        self.push(Op::SliceCols { x, start }, Some(value), ng)
    }

    /// One row as a `1 × n` matrix.
    pub fn row(&mut self, x: Var, row: usize) -> Var {
        let value = self.value(x).slice(s![row..row + 1, ..]).to_owned();
        let ng = self.needs(x);
        self.push(Op::Row { x, row }, Some(value), ng)
    }

    /// Elementwise product with a constant matrix (dropout masks).
    pub fn mul_const(&mut self, x: Var, mask: Array2<f64>) -> Result<Var> {
        if self.value(x).dim() != mask.dim() {
            return Err(Error::ShapeMismatch("mask shape".into()));
        }
        let value = self.value(x) * &mask;
        let ng = self.needs(x);
        Ok(self.push(Op::Mul { x, mask }, Some(value), ng))
    }

    /// Weighted binary cross-entropy of `σ(logit)` against `label`, with the
    /// probability clamped to `[BCE_EPS, 1 - BCE_EPS]`. The gradient with
    /// respect to the logit is `weight · (σ(logit) − label)`.
    pub fn sigmoid_bce(&mut self, logit: Var, label: f64, weight: f64) -> Result<Var> {
        let vz = self.value(logit);
        if vz.dim() != (1, 1) {
            return Err(Error::ShapeMismatch(format!("logit must be 1x1, got {:?}", vz.dim())));
        }
        let loss = weight * bce_loss(logistic(vz[[0, 0]]), label);
        let ng = self.needs(logit);
        Ok(self.push(Op::SigmoidBce { logit, label, weight }, Some(Array2::from_elem((1, 1), loss)), ng))
    }

    /// Gradients of the scalar `loss` with respect to every parameter.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::BackwardWithoutForward);
        }
        if self.value(loss).dim() != (1, 1) {
            return Err(Error::ShapeMismatch("backward needs a scalar loss".into()));
        }
        let mut grads = Gradients::empty(self.params.len());
        let mut node_grads: Vec<Option<Array2<f64>>> = vec![None; loss.0 + 1];
        node_grads[loss.0] = Some(Array2::ones((1, 1)));

        for i in (0..=loss.0).rev() {
            let Some(dy) = node_grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let needs = |v: &Var| self.nodes[v.0].needs_grad;
            let mut send = |v: Var, g: Array2<f64>| {
                if self.nodes[v.0].needs_grad {
                    acc(&mut node_grads[v.0], g);
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => grads.add(*id, Grad::Dense(dy)),
                Op::Gather { param, rows } => {
                    let mut sparse: BTreeMap<usize, Array1<f64>> = BTreeMap::new();
                    for (r, g) in rows.iter().zip(dy.rows()) {
                        match sparse.get_mut(r) {
                            Some(s) => *s += &g,
                            None => {
                                sparse.insert(*r, g.to_owned());
                            }
                        }
                    }
                    grads.add(*param, Grad::Rows(sparse));
                }
                Op::MatMul(a, b) => {
                    if needs(a) {
                        send(*a, dy.dot(&self.value(*b).t()));
                    }
                    if needs(b) {
                        send(*b, self.value(*a).t().dot(&dy));
                    }
                }
                Op::MatMulT(a, b) => {
                    if needs(a) {
                        send(*a, dy.dot(self.value(*b)));
                    }
                    if needs(b) {
                        send(*b, dy.t().dot(self.value(*a)));
                    }
                }
                Op::Add(a, b) => {
                    if needs(b) {
                        send(*b, dy.clone());
                    }
                    send(*a, dy);
                }
                Op::AddRow(a, r) => {
                    if needs(r) {
                        send(*r, dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    send(*a, dy);
                }
                Op::Scale(a, f) => send(*a, dy * *f),
                Op::Relu(a) => {
                    let mut g = dy;
                    ndarray::Zip::from(&mut g).and(self.value(*a)).for_each(|g, &x| {
                        if x <= 0.0 {
                            *g = 0.0;
                        }
                    });
                    send(*a, g);
                }
                Op::Softmax { x } => {
                    let p = node.value.as_ref().expect("softmax value");
                    let dot = (&dy * p).sum_axis(Axis(1)).insert_axis(Axis(1));
                    send(*x, p * &(dy - &dot));
                }
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    if needs(gamma) {
                        send(*gamma, (&dy * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if needs(beta) {
                        send(*beta, dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if needs(x) {
                        let dxhat = &dy * self.value(*gamma);
                        let mean_d = dxhat.mean_axis(Axis(1)).expect("rows").insert_axis(Axis(1));
                        let mean_dx = (&dxhat * xhat).mean_axis(Axis(1)).expect("rows").insert_axis(Axis(1));
                        let dx = (dxhat - &mean_d - &(xhat * &mean_dx)) * &inv_std.view().insert_axis(Axis(1));
                        send(*x, dx);
                    }
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        if needs(p) {
                            send(*p, dy.slice(s![.., start..start + w]).to_owned());
                        }
                        start += w;
                    }
                }
                Op::SliceCols { x, start } => {
                    let mut g = Array2::zeros(self.value(*x).raw_dim());
                    g.slice_mut(s![.., *start..*start + dy.ncols()]).assign(&dy);
                    send(*x, g);
                }
                Op::Row { x, row } => {
                    let mut g = Array2::zeros(self.value(*x).raw_dim());
                    g.slice_mut(s![*row..*row + 1, ..]).assign(&dy);
                    send(*x, g);
                }
                Op::Mul { x, mask } => send(*x, dy * mask),
                Op::SigmoidBce { logit, label, weight } => {
                    let p = logistic(self.value(*logit)[[0, 0]]);
                    let g = dy[[0, 0]] * weight * (p - label);
                    send(*logit, Array2::from_elem((1, 1), g));
                }
            }
        }
        Ok(grads)
    }
}
