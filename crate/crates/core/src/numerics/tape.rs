//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value; `backward`
//! walks the tape once in reverse. Nodes are only ever appended, so parents
//! always precede children and the tape is in topological order by
//! construction. A tape can be differentiated once; a second call is
//! rejected.

use std::collections::BTreeMap;

use super::kernels::{
    check_finite, dot, gelu_grad_scalar, gelu_scalar, masked_softmax_row, matmul_acc,
    matmul_at_acc, matmul_bt_acc, sigmoid_scalar,
};
use super::params::{ParamId, ParamStore};
use super::tensor::{dims2, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which keys a softmax row may attend to.
#[derive(Clone, Debug, Default)]
pub struct SoftmaxMask {
    /// Per-column validity; `None` allows every column.
    pub keys: Option<Vec<bool>>,
    /// Row `i` may only see columns `<= i`.
    pub causal: bool,
}

impl SoftmaxMask {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn causal() -> Self {
        Self {
            keys: None,
            causal: true,
        }
    }

    pub fn keys(keys: Vec<bool>) -> Self {
        Self {
            keys: Some(keys),
            causal: false,
        }
    }

    fn allows(&self, row: usize, col: usize) -> bool {
        if self.causal && col > row {
            return false;
        }
        self.keys.as_ref().map_or(true, |k| k[col])
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    Reshape(Var),
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Clone, Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation with values of every intermediate.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<ParamId, Var>,
    consumed: bool,
}

/// Gradients produced by one backward pass.
#[derive(Debug, Default)]
pub struct Gradients {
    leaves: BTreeMap<Var, Vec<f64>>,
    params: BTreeMap<ParamId, Vec<f64>>,
}

impl Gradients {
    /// Gradient with respect to a leaf created with `requires_grad`.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.leaves.get(&v).map(Vec::as_slice)
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params.get(&id).map(Vec::as_slice)
    }

    /// Adds parameter gradients into `store`. Every trainable parameter ends
    /// up with a populated gradient; unreachable ones get zeros.
    pub fn accumulate_into(&self, store: &mut ParamStore) -> Result<()> {
        for id in store.ids().collect::<Vec<_>>() {
            let t = store.get_mut(id);
            if !t.requires_grad() {
                continue;
            }
            match self.params.get(&id) {
                Some(g) => t.accumulate_grad(g)?,
                None => t.ensure_grad(),
            }
        }
        Ok(())
    }
}

fn shape_err(what: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape(format!("{what}: {a:?} vs {b:?}"))
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
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

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        dims2(&self.nodes[v.0].shape).expect("tape nodes are rank 1 or 2")
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape is consistent")
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records an input. `requires_grad` leaves receive gradients in [`Gradients::wrt`].
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let rg = t.requires_grad();
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, rg)
    }

    pub fn constant(&mut self, shape: Vec<usize>, value: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, value)?;
        Ok(self.leaf(&t))
    }

    /// Places a stored parameter on the tape (once per tape).
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.params.get(&id) {
            return *v;
        }
        let t = store.get(id);
        let v = self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Param(id),
            t.requires_grad(),
        );
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.dims(a);
        let (k2, m) = self.dims(b);
        if k != k2 {
            return Err(shape_err("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; n * m];
        matmul_acc(self.value(a), self.value(b), &mut out, n, k, m);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(vec![n, m], out, Op::MatMul(a, b), ng))
    }

    /// `a * b^T`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.dims(a);
        let (m, k2) = self.dims(b);
        if k != k2 {
            return Err(shape_err("matmul_bt", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; n * m];
        matmul_bt_acc(self.value(a), self.value(b), &mut out, n, k, m);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(vec![n, m], out, Op::MatMulBt(a, b), ng))
    }

    fn same_shape(&self, what: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(what, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a, b), ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul(a, b), ng))
    }

    /// `x[n,m] + bias[m]`, the only broadcast supported.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (n, m) = self.dims(x);
        if self.value(bias).len() != m {
            return Err(shape_err("add_bias", self.shape(x), self.shape(bias)));
        }
        let mut out = self.value(x).to_vec();
        let b = self.value(bias);
        for i in 0..n {
            add_into(&mut out[i * m..(i + 1) * m], b);
        }
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(self.shape(x).to_vec(), out, Op::AddBias(x, bias), ng))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).iter().map(|v| v * c).collect();
        let ng = self.ng(x);
        self.push(self.shape(x).to_vec(), out, Op::Scale(x, c), ng)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| gelu_scalar(v)).collect();
        let ng = self.ng(x);
        self.push(self.shape(x).to_vec(), out, Op::Gelu(x), ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|v| v.tanh()).collect();
        let ng = self.ng(x);
        self.push(self.shape(x).to_vec(), out, Op::Tanh(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| sigmoid_scalar(v)).collect();
        let ng = self.ng(x);
        self.push(self.shape(x).to_vec(), out, Op::Sigmoid(x), ng)
    }

    /// Row-wise softmax. Masked entries come out as exact zeros.
    pub fn softmax_rows(&mut self, x: Var, mask: &SoftmaxMask) -> Result<Var> {
        let (n, m) = self.dims(x);
        if let Some(k) = &mask.keys {
            if k.len() != m {
                return Err(Error::Shape(format!(
                    "softmax mask of width {} for {m} columns",
                    k.len()
                )));
            }
        }
        check_finite(self.value(x), "softmax")?;
        let mut out = vec![0.0; n * m];
        let xv = self.value(x);
        for i in 0..n {
            masked_softmax_row(&xv[i * m..(i + 1) * m], &mut out[i * m..(i + 1) * m], |j| {
                mask.allows(i, j)
            });
        }
        let ng = self.ng(x);
        Ok(self.push(self.shape(x).to_vec(), out, Op::Softmax(x), ng))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (n, m) = self.dims(x);
        if self.value(gamma).len() != m || self.value(beta).len() != m {
            return Err(shape_err("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let xv = self.value(x);
        let g = self.value(gamma);
        let b = self.value(beta);
        let mut out = vec![0.0; n * m];
        let mut xhat = vec![0.0; n * m];
        let mut inv_std = vec![0.0; n];
        for i in 0..n {
            let row = &xv[i * m..(i + 1) * m];
            let mean = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..m {
                let h = (row[j] - mean) * is;
                xhat[i * m + j] = h;
                out[i * m + j] = h * g[j] + b[j];
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(
            self.shape(x).to_vec(),
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        ))
    }

    /// Selects rows of a `[V, d]` table.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.dims(table);
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Index(format!("row {id} of table with {v} rows")));
            }
            out.extend_from_slice(&tv[id * d..(id + 1) * d]);
        }
        let ng = self.ng(table);
        Ok(self.push(
            vec![ids.len(), d],
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            ng,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(Error::Contract("concat_rows of nothing".into()));
        };
        let (_, m) = self.dims(*first);
        let mut rows = 0;
        let mut out = Vec::new();
        let mut ng = false;
        for &p in parts {
            let (r, c) = self.dims(p);
            if c != m {
                return Err(shape_err("concat_rows", self.shape(*first), self.shape(p)));
            }
            rows += r;
            out.extend_from_slice(self.value(p));
            ng |= self.ng(p);
        }
        Ok(self.push(vec![rows, m], out, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(Error::Contract("concat_cols of nothing".into()));
        };
        let (n, _) = self.dims(*first);
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims(p);
            if r != n {
                return Err(shape_err("concat_cols", self.shape(*first), self.shape(p)));
            }
            widths.push(c);
        }
        let m: usize = widths.iter().sum();
        let mut out = vec![0.0; n * m];
        let mut off = 0;
        let mut ng = false;
        for (&p, &w) in parts.iter().zip(&widths) {
            let v = self.value(p);
            for i in 0..n {
                out[i * m + off..i * m + off + w].copy_from_slice(&v[i * w..(i + 1) * w]);
            }
            off += w;
            ng |= self.ng(p);
        }
        Ok(self.push(vec![n, m], out, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, m) = self.dims(x);
        if start + len > n {
            return Err(Error::Index(format!("rows {start}..{} of {n}", start + len)));
        }
        let out = self.value(x)[start * m..(start + len) * m].to_vec();
        let ng = self.ng(x);
        Ok(self.push(vec![len, m], out, Op::SliceRows { x, start }, ng))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, m) = self.dims(x);
        if start + len > m {
            return Err(Error::Index(format!("cols {start}..{} of {m}", start + len)));
        }
        let xv = self.value(x);
        let mut out = Vec::with_capacity(n * len);
        for i in 0..n {
            out.extend_from_slice(&xv[i * m + start..i * m + start + len]);
        }
        let ng = self.ng(x);
        Ok(self.push(vec![n, len], out, Op::SliceCols { x, start }, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(shape_err("reshape", self.shape(x), &shape));
        }
        let out = self.value(x).to_vec();
        let ng = self.ng(x);
        Ok(self.push(shape, out, Op::Reshape(x), ng))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let (n, m) = self.dims(x);
        let xv = self.value(x);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = xv[i * m + j];
            }
        }
        let ng = self.ng(x);
        self.push(vec![m, n], out, Op::Transpose(x), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let ng = self.ng(x);
        self.push(vec![1], vec![s], Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.iter().sum::<f64>() / v.len() as f64;
        let ng = self.ng(x);
        self.push(vec![1], vec![s], Op::Mean(x), ng)
    }

    /// Mean over rows of `-log softmax(logits[i])[targets[i]]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (n, c) = self.dims(logits);
        if targets.len() != n {
            return Err(Error::Shape(format!(
                "{} targets for {n} logit rows",
                targets.len()
            )));
        }
        if let Some(t) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::Index(format!("target class {t} with {c} classes")));
        }
        check_finite(self.value(logits), "cross_entropy")?;
        let lv = self.value(logits);
        let mut probs = vec![0.0; n * c];
        let mut loss = 0.0;
        for i in 0..n {
            masked_softmax_row(&lv[i * c..(i + 1) * c], &mut probs[i * c..(i + 1) * c], |_| true);
            let row = &lv[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[targets[i]];
        }
        loss /= n as f64;
        let ng = self.ng(logits);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            ng,
        ))
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Contract(
                "backward already ran on this tape; build a fresh tape".into(),
            ));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    out.leaves.insert(Var(idx), g);
                }
                Op::Param(id) => {
                    out.params.insert(*id, g);
                }
                op => self.propagate(op, idx, &g, &mut grads),
            }
        }
        Ok(out)
    }

    fn acc<'g>(
        &self,
        grads: &'g mut [Option<Vec<f64>>],
        v: Var,
    ) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn propagate(&self, op: &Op, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match op {
            Op::Leaf | Op::Param(_) => unreachable!(),
            Op::MatMul(a, b) => {
                let (n, k) = self.dims(*a);
                let (_, m) = self.dims(*b);
                if let Some(da) = self.acc(grads, *a) {
                    matmul_bt_acc(g, self.value(*b), da, n, m, k);
                }
                if let Some(db) = self.acc(grads, *b) {
                    matmul_at_acc(self.value(*a), g, db, n, k, m);
                }
            }
            Op::MatMulBt(a, b) => {
                let (n, k) = self.dims(*a);
                let (m, _) = self.dims(*b);
                if let Some(da) = self.acc(grads, *a) {
                    matmul_acc(g, self.value(*b), da, n, m, k);
                }
                if let Some(db) = self.acc(grads, *b) {
                    matmul_at_acc(g, self.value(*a), db, n, m, k);
                }
            }
            Op::Add(a, b) => {
                if let Some(da) = self.acc(grads, *a) {
                    add_into(da, g);
                }
                if let Some(db) = self.acc(grads, *b) {
                    add_into(db, g);
                }
            }
            Op::Mul(a, b) => {
                if let Some(da) = self.acc(grads, *a) {
                    let bv = self.value(*b);
                    for ((d, gi), bi) in da.iter_mut().zip(g).zip(bv) {
                        *d += gi * bi;
                    }
                }
                if let Some(db) = self.acc(grads, *b) {
                    let av = self.value(*a);
                    for ((d, gi), ai) in db.iter_mut().zip(g).zip(av) {
                        *d += gi * ai;
                    }
                }
            }
            Op::AddBias(x, bias) => {
                let (n, m) = self.dims(*x);
                if let Some(dx) = self.acc(grads, *x) {
                    add_into(dx, g);
                }
                if let Some(db) = self.acc(grads, *bias) {
                    for i in 0..n {
                        add_into(db, &g[i * m..(i + 1) * m]);
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(dx) = self.acc(grads, *x) {
                    dx.iter_mut().zip(g).for_each(|(d, gi)| *d += c * gi);
                }
            }
            Op::Gelu(x) => {
                if let Some(dx) = self.acc(grads, *x) {
                    let xv = self.value(*x);
                    for ((d, gi), &xi) in dx.iter_mut().zip(g).zip(xv) {
                        *d += gi * gelu_grad_scalar(xi);
                    }
                }
            }
            Op::Tanh(x) => {
                if let Some(dx) = self.acc(grads, *x) {
                    for ((d, gi), y) in dx.iter_mut().zip(g).zip(&node.value) {
                        *d += gi * (1.0 - y * y);
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(dx) = self.acc(grads, *x) {
                    for ((d, gi), y) in dx.iter_mut().zip(g).zip(&node.value) {
                        *d += gi * y * (1.0 - y);
                    }
                }
            }
            Op::Softmax(x) => {
                let (n, m) = self.dims(*x);
                if let Some(dx) = self.acc(grads, *x) {
                    let y = &node.value;
                    for i in 0..n {
                        let yr = &y[i * m..(i + 1) * m];
                        let gr = &g[i * m..(i + 1) * m];
                        let inner = dot(yr, gr);
                        for j in 0..m {
                            dx[i * m + j] += yr[j] * (gr[j] - inner);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (n, m) = self.dims(*x);
                let gv = self.value(*gamma);
                if let Some(dgamma) = self.acc(grads, *gamma) {
                    for i in 0..n {
                        for j in 0..m {
                            dgamma[j] += g[i * m + j] * xhat[i * m + j];
                        }
                    }
                }
                if let Some(dbeta) = self.acc(grads, *beta) {
                    for i in 0..n {
                        add_into(dbeta, &g[i * m..(i + 1) * m]);
                    }
                }
                if let Some(dx) = self.acc(grads, *x) {
                    let mut gg = vec![0.0; m];
                    for i in 0..n {
                        let xh = &xhat[i * m..(i + 1) * m];
                        for j in 0..m {
                            gg[j] = g[i * m + j] * gv[j];
                        }
                        let mean_g = gg.iter().sum::<f64>() / m as f64;
                        let mean_gx = dot(&gg, xh) / m as f64;
                        for j in 0..m {
                            dx[i * m + j] += inv_std[i] * (gg[j] - mean_g - xh[j] * mean_gx);
                        }
                    }
                }
            }
            Op::Gather { table, ids } => {
                let (_, d) = self.dims(*table);
                if let Some(dt) = self.acc(grads, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut dt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if let Some(dp) = self.acc(grads, p) {
                        add_into(dp, &g[off..off + len]);
                    }
                    off += len;
                }
            }
            Op::ConcatCols(parts) => {
                let (n, m) = dims2(&node.shape).expect("rank 2");
                let mut off = 0;
                for &p in parts {
                    let (_, w) = self.dims(p);
                    if let Some(dp) = self.acc(grads, p) {
                        for i in 0..n {
                            add_into(
                                &mut dp[i * w..(i + 1) * w],
                                &g[i * m + off..i * m + off + w],
                            );
                        }
                    }
                    off += w;
                }
            }
            Op::SliceRows { x, start } => {
                let (_, m) = self.dims(*x);
                if let Some(dx) = self.acc(grads, *x) {
                    add_into(&mut dx[start * m..start * m + g.len()], g);
                }
            }
            Op::SliceCols { x, start } => {
                let (n, m) = self.dims(*x);
                let len = g.len() / n.max(1);
                if let Some(dx) = self.acc(grads, *x) {
                    for i in 0..n {
                        add_into(
                            &mut dx[i * m + start..i * m + start + len],
                            &g[i * len..(i + 1) * len],
                        );
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(dx) = self.acc(grads, *x) {
                    add_into(dx, g);
                }
            }
            Op::Transpose(x) => {
                let (n, m) = self.dims(*x);
                if let Some(dx) = self.acc(grads, *x) {
                    for i in 0..n {
                        for j in 0..m {
                            dx[i * m + j] += g[j * n + i];
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(dx) = self.acc(grads, *x) {
                    dx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(x) => {
                if let Some(dx) = self.acc(grads, *x) {
                    let c = g[0] / dx.len() as f64;
                    dx.iter_mut().for_each(|d| *d += c);
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let (n, c) = self.dims(*logits);
                if let Some(dl) = self.acc(grads, *logits) {
                    let s = g[0] / n as f64;
                    for i in 0..n {
                        for j in 0..c {
                            let onehot = if targets[i] == j { 1.0 } else { 0.0 };
                            dl[i * c + j] += s * (probs[i * c + j] - onehot);
                        }
                    }
                }
            }
        }
    }
}
