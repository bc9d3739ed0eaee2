//! Cross-entropy, the cosine auxiliary loss and their mixture. All losses
//! are means over the batch and return gradients of that mean.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{dot, norm, Matrix};

/// Features with a norm below this have no direction.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("alpha must lie in [0, 1], got {0}")]
    InvalidAlpha(f64),
    #[error("label {label} at row {row} is out of range for {k} classes")]
    LabelOutOfRange { row: usize, label: usize, k: usize },
    #[error("{rows} rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite logits at row {0}")]
    NonFiniteLogits(usize),
    #[error("feature row {row} has norm {norm:e}; its cosine to the classifier is undefined")]
    DegenerateFeature { row: usize, norm: f64 },
    #[error("classifier is {rows}x{cols} but features have {dim} columns")]
    ShapeMismatch { rows: usize, cols: usize, dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha: f64,
}

impl LossConfig {
    pub fn new(alpha: f64) -> Result<Self, LossError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(LossError::InvalidAlpha(alpha));
        }
        Ok(Self { alpha })
    }
}

/// A loss value with its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: Matrix,
}

fn check_labels(rows: usize, k: usize, labels: &[usize]) -> Result<(), LossError> {
    if rows == 0 {
        return Err(LossError::EmptyBatch);
    }
    if labels.len() != rows {
        return Err(LossError::LengthMismatch {
            rows,
            labels: labels.len(),
        });
    }
    if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(LossError::LabelOutOfRange { row, label, k });
    }
    Ok(())
}

/// Row-wise softmax with max subtraction.
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

/// Softmax cross-entropy; the gradient is with respect to the logits.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<LossOutput, LossError> {
    let (b, k) = logits.shape();
    check_labels(b, k, labels)?;
    if let Some(r) = (0..b).find(|&r| logits.row(r).iter().any(|v| !v.is_finite())) {
        return Err(LossError::NonFiniteLogits(r));
    }
    let n = b as f64;
    let mut grad = softmax(logits);
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[y];
        let g = grad.row_mut(r);
        g[y] -= 1.0;
        g.iter_mut().for_each(|v| *v /= n);
    }
    Ok(LossOutput {
        loss: loss / n,
        grad,
    })
}

/// Cosine auxiliary loss `Σ_i (cos∠(w_i, h) − cos∠(w_i, w_y))²` per example,
/// where `w_i` is column `i` of `w`. The gradient is with respect to `h`.
pub fn cosine_aux(w: &Matrix, features: &Matrix, labels: &[usize]) -> Result<LossOutput, LossError> {
    let (b, dim) = features.shape();
    let k = w.cols();
    if w.rows() != dim {
        return Err(LossError::ShapeMismatch {
            rows: w.rows(),
            cols: k,
            dim,
        });
    }
    check_labels(b, k, labels)?;
    // Unit class directions, one per row.
    let units: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            let col = w.column(i);
            let n = norm(&col);
            col.iter().map(|v| v / n).collect()
        })
        .collect();
    let n = b as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(b, dim);
    for (r, &y) in labels.iter().enumerate() {
        let h = features.row(r);
        let h_norm = norm(h);
        if h_norm.is_nan() || h_norm < DEGENERATE_NORM {
            return Err(LossError::DegenerateFeature { row: r, norm: h_norm });
        }
        let u: Vec<f64> = h.iter().map(|v| v / h_norm).collect();
        let g = grad.row_mut(r);
        for unit in &units {
            let c = dot(unit, &u);
            let t = dot(unit, &units[y]);
            let e = c - t;
            loss += e * e;
            // ∂cos/∂h = (ŵ − cos·u)/‖h‖
            let scale = 2.0 * e / (h_norm * n);
            for ((gj, wj), uj) in g.iter_mut().zip(unit).zip(&u) {
                *gj += scale * (wj - c * uj);
            }
        }
    }
    Ok(LossOutput {
        loss: loss / n,
        grad,
    })
}

/// Mixed objective `(1 − α)·CE + α·aux` with gradients for logits and
/// features.
#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    pub loss: f64,
    pub cross_entropy: f64,
    /// Zero (and not evaluated) when α = 0.
    pub cosine_aux: f64,
    pub grad_logits: Matrix,
    pub grad_features: Matrix,
}

pub fn total_loss(
    config: LossConfig,
    w: &Matrix,
    logits: &Matrix,
    features: &Matrix,
    labels: &[usize],
) -> Result<TotalLoss, LossError> {
    let alpha = config.alpha;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(LossError::InvalidAlpha(alpha));
    }
    let ce = cross_entropy(logits, labels)?;
    let aux = if alpha > 0.0 {
        Some(cosine_aux(w, features, labels)?)
    } else {
        None
    };
    Ok(combine(alpha, ce, aux, features.shape()))
}

/// Mixes precomputed component losses with weights `1 − α` and `α`.
pub fn combine(alpha: f64, ce: LossOutput, aux: Option<LossOutput>, feature_shape: (usize, usize)) -> TotalLoss {
    let mut grad_logits = ce.grad;
    grad_logits.as_mut_slice().iter_mut().for_each(|g| *g *= 1.0 - alpha);
    let (aux_loss, grad_features) = match aux {
        Some(aux) => {
            let mut g = aux.grad;
            g.as_mut_slice().iter_mut().for_each(|v| *v *= alpha);
            (aux.loss, g)
        }
        None => (0.0, Matrix::zeros(feature_shape.0, feature_shape.1)),
    };
    TotalLoss {
        loss: (1.0 - alpha) * ce.loss + alpha * aux_loss,
        cross_entropy: ce.loss,
        cosine_aux: aux_loss,
        grad_logits,
        grad_features,
    }
}
