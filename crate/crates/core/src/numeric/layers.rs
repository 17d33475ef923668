//! Layer primitives with hand-written backward rules.

use super::Matrix;
use crate::error::{Error, Result};

/// Activation pattern recorded by [`relu_forward`].
#[derive(Clone, Debug)]
pub struct ReluTrace {
    active: Vec<bool>,
    cols: usize,
}

impl ReluTrace {
    /// Whether element `i` (row-major) passed gradient.
    pub fn is_active(&self, i: usize) -> bool {
        self.active[i]
    }
}

/// `max(x, 0)` elementwise. The sub-gradient at exactly zero is zero.
pub fn relu_forward(x: &Matrix) -> (Matrix, ReluTrace) {
    let active: Vec<bool> = x.as_slice().iter().map(|&v| v > 0.0).collect();
    let y = x.map(|v| if v > 0.0 { v } else { 0.0 });
    (
        y,
        ReluTrace {
            active,
            cols: x.cols(),
        },
    )
}

pub fn relu_backward(trace: &ReluTrace, grad: &Matrix) -> Result<Matrix> {
    if grad.as_slice().len() != trace.active.len() || grad.cols() != trace.cols {
        return Err(Error::shape("relu backward gradient does not match trace"));
    }
    let mut out = grad.clone();
    for (g, &a) in out.as_mut_slice().iter_mut().zip(&trace.active) {
        if !a {
            *g = 0.0;
        }
    }
    Ok(out)
}

/// Mean softmax cross-entropy over rows, with optional class masking.
///
/// Masked classes are removed from the log-sum-exp outright, so their
/// gradient is exactly zero. Returns the loss and `d loss / d logits`.
pub fn softmax_ce(
    logits: &Matrix,
    labels: &[usize],
    class_mask: Option<&[bool]>,
) -> Result<(f64, Matrix)> {
    let (losses, mut grad) = softmax_ce_rows(logits, labels, class_mask)?;
    let n = labels.len().max(1) as f64;
    grad.as_mut_slice().iter_mut().for_each(|g| *g /= n);
    Ok((losses.iter().sum::<f64>() / n, grad))
}

/// Per-row cross-entropy losses and per-row (unscaled) logit gradients.
pub fn softmax_ce_rows(
    logits: &Matrix,
    labels: &[usize],
    class_mask: Option<&[bool]>,
) -> Result<(Vec<f64>, Matrix)> {
    let (rows, classes) = logits.shape();
    if labels.len() != rows {
        return Err(Error::shape(format!(
            "{} labels for {rows} logit rows",
            labels.len()
        )));
    }
    if let Some(mask) = class_mask {
        if mask.len() != classes {
            return Err(Error::shape(format!(
                "class mask of length {} for {classes} classes",
                mask.len()
            )));
        }
    }
    let allowed = |c: usize| class_mask.is_none_or(|m| m[c]);
    let mut losses = Vec::with_capacity(rows);
    let mut grad = Matrix::zeros(rows, classes);
    for (r, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::input(format!("label {y} outside {classes} classes")));
        }
        if !allowed(y) {
            return Err(Error::input(format!("label {y} is masked out")));
        }
        let z = logits.row(r);
        let max = (0..classes)
            .filter(|&c| allowed(c))
            .map(|c| z[c])
            .fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = (0..classes)
            .filter(|&c| allowed(c))
            .map(|c| (z[c] - max).exp())
            .sum();
        let lse = max + sum.ln();
        losses.push(lse - z[y]);
        let g = grad.row_mut(r);
        for c in (0..classes).filter(|&c| allowed(c)) {
            g[c] = (z[c] - lse).exp();
        }
        g[y] -= 1.0;
    }
    if !losses.iter().all(|l| l.is_finite()) {
        return Err(Error::NonFinite("softmax_ce"));
    }
    Ok((losses, grad))
}

/// Row-wise softmax probabilities.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Index of the largest value among `allowed` entries; ties go to the lower index.
pub fn argmax(values: &[f64], allowed: Option<&[bool]>) -> usize {
    let mut best = None;
    for (i, &v) in values.iter().enumerate() {
        if allowed.is_some_and(|m| !m[i]) {
            continue;
        }
        match best {
            Some((_, bv)) if v <= bv => {}
            _ => best = Some((i, v)),
        }
    }
    best.map_or(0, |(i, _)| i)
}
