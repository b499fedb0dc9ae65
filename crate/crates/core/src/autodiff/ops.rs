//! Forward kernels shared by the standalone API and the tape.

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_LAYER_NORM_EPS: f64 = 1e-5;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub(crate) fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Row-wise softmax with max subtraction. With `causal`, entry `(i, j)` for
/// `j > i` is masked to zero.
pub(crate) fn softmax_kernel(x: &Tensor, causal: bool) -> Result<Tensor> {
    if !x.all_finite() {
        return Err(Error::NumericDomain("softmax input contains non-finite values".into()));
    }
    let cols = x.cols();
    let rows = x.rows();
    if causal && rows > cols {
        return Err(Error::Shape(format!(
            "causal softmax needs rows <= cols, got {rows}×{cols}"
        )));
    }
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        let row = x.row(r);
        let live = if causal { r + 1 } else { cols };
        let m = row[..live].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let o = &mut out[r * cols..r * cols + live];
        let mut z = 0.0;
        for (o, &v) in o.iter_mut().zip(row) {
            *o = (v - m).exp();
            z += *o;
        }
        for o in o.iter_mut() {
            *o /= z;
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    softmax_kernel(x, false)
}

/// Per-row statistics retained for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct NormStats {
    pub xhat: Tensor,
    pub rstd: Vec<f64>,
}

pub(crate) fn layer_norm_kernel(
    x: &Tensor,
    gain: &Tensor,
    bias: &Tensor,
    eps: f64,
) -> Result<(Tensor, NormStats)> {
    let d = x.cols();
    if gain.len() != d || bias.len() != d {
        return Err(Error::Shape(format!(
            "layer norm over {d} features needs gain/bias of length {d}, got {}/{}",
            gain.len(),
            bias.len()
        )));
    }
    let rows = x.rows();
    let mut xhat = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    let mut rstd = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let denom = var + eps;
        if !(denom > 0.0) || !denom.is_finite() {
            return Err(Error::NumericDomain(format!(
                "layer norm row {r} has variance {var} with eps {eps}"
            )));
        }
        let s = 1.0 / denom.sqrt();
        rstd.push(s);
        for c in 0..d {
            let h = (row[c] - mean) * s;
            xhat[r * d + c] = h;
            out[r * d + c] = h * gain.data()[c] + bias.data()[c];
        }
    }
    let xhat = Tensor::new(x.shape().to_vec(), xhat)?;
    Ok((Tensor::new(x.shape().to_vec(), out)?, NormStats { xhat, rstd }))
}

/// Layer normalisation over the last axis.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    layer_norm_kernel(x, gain, bias, eps).map(|(y, _)| y)
}

/// `down(silu(gate(x)) ⊙ up(x))` with weights stored as `[out × in]`.
pub fn swiglu(x: &Tensor, w_gate: &Tensor, w_up: &Tensor, w_down: &Tensor) -> Result<Tensor> {
    let x2 = as_rows(x)?;
    let g = x2.matmul_nt(w_gate)?;
    let u = x2.matmul_nt(w_up)?;
    let h = g.map(silu).zip_map(&u, |a, b| a * b)?;
    let y = h.matmul_nt(w_down)?;
    let mut shape = x.shape().to_vec();
    *shape.last_mut().expect("nonempty") = y.cols();
    y.reshape(shape)
}

fn as_rows(x: &Tensor) -> Result<Tensor> {
    x.reshape(vec![x.rows(), x.cols()])
}

/// Row-wise log-sum-exp, stabilised by the row maximum.
pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Positions that contribute to the loss; `None` marks an ignored position.
pub(crate) fn loss_targets(
    targets: &[usize],
    ignore_index: Option<usize>,
    vocab: usize,
) -> Result<Vec<Option<usize>>> {
    targets
        .iter()
        .map(|&t| {
            if Some(t) == ignore_index {
                Ok(None)
            } else if t < vocab {
                Ok(Some(t))
            } else {
                Err(Error::Contract(format!("target {t} outside vocabulary of {vocab}")))
            }
        })
        .collect()
}

pub(crate) fn cross_entropy_kernel(logits: &Tensor, targets: &[Option<usize>]) -> Result<f64> {
    let (n, _) = logits.dims2()?;
    if targets.len() != n {
        return Err(Error::Shape(format!("{} targets for {n} logit rows", targets.len())));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, t) in targets.iter().enumerate() {
        if let Some(t) = *t {
            let row = logits.row(i);
            total += log_sum_exp(row) - row[t];
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::NumericDomain("every position is ignored; mean loss undefined".into()));
    }
    Ok(total / count as f64)
}

/// Mean negative log-likelihood over non-ignored rows.
pub fn cross_entropy(logits: &Tensor, targets: &[usize], ignore_index: Option<usize>) -> Result<f64> {
    if !logits.all_finite() {
        return Err(Error::NumericDomain("logits contain non-finite values".into()));
    }
    let (_, vocab) = logits.dims2()?;
    let targets = loss_targets(targets, ignore_index, vocab)?;
    cross_entropy_kernel(logits, &targets)
}
