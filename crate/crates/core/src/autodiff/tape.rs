//! Define-by-run reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value and enough context
//! to apply its vector-Jacobian product. Nodes are appended in evaluation
//! order, so the node list is already topologically sorted and the backward
//! pass is a single reverse sweep.

use super::ops::{self, NormStats};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    Silu(Var),
    Softmax { x: Var },
    LayerNorm { x: Var, gain: Var, bias: Var, stats: NormStats },
    Gather { table: Var, ids: Vec<usize> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, count: usize },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation graph for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, rg)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass. A trainable leaf the loss does
    /// not depend on reports zeros.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        match self.grads.get(v.0) {
            Some(Some(g)) => Some(g.clone()),
            _ if self.nodes[v.0].requires_grad => Some(Tensor::zeros(self.nodes[v.0].value.shape())),
            _ => None,
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).matmul(self.value(b))?;
        Ok(self.derived(y, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ`; linear layers store weights as `[out × in]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).matmul_nt(self.value(b))?;
        Ok(self.derived(y, Op::MatMulNT(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).add(self.value(b))?;
        Ok(self.derived(y, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).sub(self.value(b))?;
        Ok(self.derived(y, Op::Sub(a, b), &[a, b]))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.derived(y, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let y = self.value(a).scale(c);
        self.derived(y, Op::Scale(a, c), &[a])
    }

    /// Adds a length-`cols` vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let xv = self.value(x);
        let rv = self.value(row);
        let cols = xv.cols();
        if rv.len() != cols {
            return Err(Error::Shape(format!(
                "row vector of length {} added to {cols} columns",
                rv.len()
            )));
        }
        let mut data = xv.data().to_vec();
        for chunk in data.chunks_mut(cols) {
            for (d, r) in chunk.iter_mut().zip(rv.data()) {
                *d += r;
            }
        }
        let y = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.derived(y, Op::AddRow(x, row), &[x, row]))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(ops::silu);
        self.derived(y, Op::Silu(x), &[x])
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let y = ops::softmax_kernel(self.value(x), false)?;
        Ok(self.derived(y, Op::Softmax { x }, &[x]))
    }

    /// Row softmax where row `i` only sees columns `0..=i`.
    pub fn causal_softmax(&mut self, x: Var) -> Result<Var> {
        let y = ops::softmax_kernel(self.value(x), true)?;
        Ok(self.derived(y, Op::Softmax { x }, &[x]))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (y, stats) = ops::layer_norm_kernel(self.value(x), self.value(gain), self.value(bias), eps)?;
        Ok(self.derived(y, Op::LayerNorm { x, gain, bias, stats }, &[x, gain, bias]))
    }

    /// Embedding lookup: row `ids[i]` of `table` becomes output row `i`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (n, d) = t.dims2()?;
        if ids.is_empty() {
            return Err(Error::Contract("gather with no indices".into()));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= n {
                return Err(Error::Shape(format!("row {id} outside table of {n} rows")));
            }
            data.extend_from_slice(t.row(id));
        }
        let y = Tensor::matrix(ids.len(), d, data)?;
        Ok(self.derived(
            y,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = xv.dims2()?;
        if width == 0 || start + width > c {
            return Err(Error::Shape(format!(
                "column slice {start}..{} outside {c} columns",
                start + width
            )));
        }
        let mut data = Vec::with_capacity(r * width);
        for i in 0..r {
            data.extend_from_slice(&xv.row(i)[start..start + width]);
        }
        let y = Tensor::matrix(r, width, data)?;
        Ok(self.derived(y, Op::SliceCols { x, start }, &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let rows = self.value(*first).dims2()?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = self.value(*p).dims2()?;
            if r != rows {
                return Err(Error::Shape(format!("concat rows differ: {rows} vs {r}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(i));
            }
        }
        let y = Tensor::matrix(rows, total, data)?;
        Ok(self.derived(y, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Mean next-token loss; targets equal to `ignore_index` contribute nothing.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], ignore_index: Option<usize>) -> Result<Var> {
        let lv = self.value(logits);
        if !lv.all_finite() {
            return Err(Error::NumericDomain("logits contain non-finite values".into()));
        }
        let (_, vocab) = lv.dims2()?;
        let targets = ops::loss_targets(targets, ignore_index, vocab)?;
        let loss = ops::cross_entropy_kernel(lv, &targets)?;
        let count = targets.iter().flatten().count();
        Ok(self.derived(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets,
                count,
            },
            &[logits],
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.derived(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Populates gradients of `loss` with respect to every node it depends on.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(self.value(loss).shape()));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            for (input, contrib) in self.vjp(idx, &g)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&contrib)?,
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[idx] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn vjp(&self, idx: usize, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let node = &self.nodes[idx];
        let val = |v: Var| &self.nodes[v.0].value;
        let out = match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => vec![
                (*a, g.matmul_nt(val(*b))?),
                (*b, val(*a).matmul_tn(g)?),
            ],
            Op::MatMulNT(a, b) => vec![
                (*a, g.matmul(val(*b))?),
                (*b, g.matmul_tn(val(*a))?),
            ],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.scale(-1.0))],
            Op::Mul(a, b) => vec![
                (*a, g.zip_map(val(*b), |x, y| x * y)?),
                (*b, g.zip_map(val(*a), |x, y| x * y)?),
            ],
            Op::Scale(a, c) => vec![(*a, g.scale(*c))],
            Op::AddRow(x, row) => {
                let cols = g.cols();
                let mut acc = vec![0.0; cols];
                for chunk in g.data().chunks(cols) {
                    for (a, v) in acc.iter_mut().zip(chunk) {
                        *a += v;
                    }
                }
                let rshape = val(*row).shape().to_vec();
                vec![(*x, g.clone()), (*row, Tensor::new(rshape, acc)?)]
            }
            Op::Silu(x) => {
                let dx = g.zip_map(val(*x), |gy, xv| gy * ops::silu_grad(xv))?;
                vec![(*x, dx)]
            }
            Op::Softmax { x, .. } => {
                let y = &node.value;
                let cols = y.cols();
                let mut dx = vec![0.0; y.len()];
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let inner: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..cols {
                        dx[r * cols + c] = yr[c] * (gr[c] - inner);
                    }
                }
                vec![(*x, Tensor::new(y.shape().to_vec(), dx)?)]
            }
            Op::LayerNorm { x, gain, bias, stats } => {
                let gv = val(*gain).data();
                let d = g.cols();
                let rows = g.rows();
                let mut dx = vec![0.0; g.len()];
                let mut dgain = vec![0.0; d];
                let mut dbias = vec![0.0; d];
                for r in 0..rows {
                    let gr = g.row(r);
                    let xh = stats.xhat.row(r);
                    let mut mean_dxh = 0.0;
                    let mut mean_dxh_xh = 0.0;
                    for c in 0..d {
                        let dxh = gr[c] * gv[c];
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * xh[c];
                        dgain[c] += gr[c] * xh[c];
                        dbias[c] += gr[c];
                    }
                    mean_dxh /= d as f64;
                    mean_dxh_xh /= d as f64;
                    for c in 0..d {
                        let dxh = gr[c] * gv[c];
                        dx[r * d + c] = stats.rstd[r] * (dxh - mean_dxh - xh[c] * mean_dxh_xh);
                    }
                }
                vec![
                    (*x, Tensor::new(g.shape().to_vec(), dx)?),
                    (*gain, Tensor::new(val(*gain).shape().to_vec(), dgain)?),
                    (*bias, Tensor::new(val(*bias).shape().to_vec(), dbias)?),
                ]
            }
            Op::Gather { table, ids } => {
                let tv = val(*table);
                let d = tv.cols();
                let mut dt = vec![0.0; tv.len()];
                for (i, &id) in ids.iter().enumerate() {
                    for (a, b) in dt[id * d..(id + 1) * d].iter_mut().zip(g.row(i)) {
                        *a += b;
                    }
                }
                vec![(*table, Tensor::new(tv.shape().to_vec(), dt)?)]
            }
            Op::SliceCols { x, start } => {
                let xv = val(*x);
                let (r, c) = xv.dims2()?;
                let w = g.cols();
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    dx[i * c + start..i * c + start + w].copy_from_slice(g.row(i));
                }
                vec![(*x, Tensor::matrix(r, c, dx)?)]
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let mut offset = 0;
                let mut out = Vec::with_capacity(parts.len());
                for p in parts {
                    let w = val(*p).cols();
                    let mut d = Vec::with_capacity(rows * w);
                    for i in 0..rows {
                        d.extend_from_slice(&g.row(i)[offset..offset + w]);
                    }
                    offset += w;
                    out.push((*p, Tensor::matrix(rows, w, d)?));
                }
                out
            }
            Op::CrossEntropy { logits, targets, count } => {
                let lv = val(*logits);
                let seed = g.item()? / *count as f64;
                let cols = lv.cols();
                let mut dl = vec![0.0; lv.len()];
                for (i, t) in targets.iter().enumerate() {
                    let Some(t) = *t else { continue };
                    let row = lv.row(i);
                    let lse = ops::log_sum_exp(row);
                    for c in 0..cols {
                        dl[i * cols + c] = seed * (row[c] - lse).exp();
                    }
                    dl[i * cols + t] -= seed;
                }
                vec![(*logits, Tensor::new(lv.shape().to_vec(), dl)?)]
            }
            Op::Sum(x) => {
                let s = g.item()?;
                vec![(*x, Tensor::filled(val(*x).shape(), s))]
            }
        };
        Ok(out)
    }
}
