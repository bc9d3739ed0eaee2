//! Affine, batch-norm and parametric-rectifier layers with explicit
//! backward passes. Activations are B×features matrices, one row per example.

use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::rng::SplitMix64;

/// `y = x Wᵀ + b` with `W` of shape out×in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    /// Weights and biases uniform in `±1/sqrt(fan_in)`.
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut SplitMix64) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = Matrix::from_fn(out_dim, in_dim, |_, _| rng.uniform(-bound, bound));
        let bias = (0..out_dim).map(|_| rng.uniform(-bound, bound)).collect();
        Self { weight, bias }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        let mut y = x.matmul_t(&self.weight);
        for b in 0..y.rows() {
            for (v, bias) in y.row_mut(b).iter_mut().zip(&self.bias) {
                *v += bias;
            }
        }
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `∂L/∂x`.
    pub fn backward(&self, x: &Matrix, dy: &Matrix, grad: &mut Linear) -> Matrix {
        let dw = dy.t_matmul(x);
        for (g, d) in grad.weight.as_mut_slice().iter_mut().zip(dw.as_slice()) {
            *g += d;
        }
        for b in 0..dy.rows() {
            for (g, d) in grad.bias.iter_mut().zip(dy.row(b)) {
                *g += d;
            }
        }
        dy.matmul(&self.weight)
    }
}

/// Learned scale and shift of a batch-norm layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Running statistics used in evaluation mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            var: vec![1.0; width],
        }
    }

    /// Exponential moving average with the unbiased batch variance.
    pub fn update(&mut self, batch: &BatchNormCache, momentum: f64) {
        let n = batch.batch_size as f64;
        let correction = n / (n - 1.0);
        for j in 0..self.mean.len() {
            self.mean[j] = (1.0 - momentum) * self.mean[j] + momentum * batch.mean[j];
            self.var[j] = (1.0 - momentum) * self.var[j] + momentum * batch.var[j] * correction;
        }
    }
}

/// Batch statistics and normalized activations from a training-mode pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormCache {
    pub batch_size: usize,
    pub mean: Vec<f64>,
    /// Biased batch variance.
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
    /// Normalized input before scale and shift.
    pub normalized: Matrix,
}

impl BatchNorm {
    pub fn new(width: usize) -> Self {
        Self {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
        }
    }

    pub fn zeros(width: usize) -> Self {
        Self {
            gamma: vec![0.0; width],
            beta: vec![0.0; width],
        }
    }

    /// Training mode: normalize with batch statistics. Needs `B ≥ 2`.
    pub fn forward_train(&self, x: &Matrix, eps: f64) -> (Matrix, BatchNormCache) {
        let (b, width) = x.shape();
        debug_assert!(b >= 2);
        let n = b as f64;
        let mut mean = vec![0.0; width];
        for r in 0..b {
            for (m, v) in mean.iter_mut().zip(x.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; width];
        for r in 0..b {
            for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let normalized = Matrix::from_fn(b, width, |r, j| (x[(r, j)] - mean[j]) * inv_std[j]);
        let y = self.affine(&normalized);
        (
            y,
            BatchNormCache {
                batch_size: b,
                mean,
                var,
                inv_std,
                normalized,
            },
        )
    }

    pub fn forward_eval(&self, x: &Matrix, stats: &RunningStats, eps: f64) -> Matrix {
        let (b, width) = x.shape();
        let normalized = Matrix::from_fn(b, width, |r, j| {
            (x[(r, j)] - stats.mean[j]) / (stats.var[j] + eps).sqrt()
        });
        self.affine(&normalized)
    }

    fn affine(&self, normalized: &Matrix) -> Matrix {
        let (b, width) = normalized.shape();
        Matrix::from_fn(b, width, |r, j| self.gamma[j] * normalized[(r, j)] + self.beta[j])
    }

    pub fn backward(&self, cache: &BatchNormCache, dy: &Matrix, grad: &mut BatchNorm) -> Matrix {
        let (b, width) = dy.shape();
        let n = b as f64;
        let xhat = &cache.normalized;
        let mut sum_dxhat = vec![0.0; width];
        let mut sum_dxhat_xhat = vec![0.0; width];
        for r in 0..b {
            for j in 0..width {
                let d = dy[(r, j)];
                grad.gamma[j] += d * xhat[(r, j)];
                grad.beta[j] += d;
                let dxhat = d * self.gamma[j];
                sum_dxhat[j] += dxhat;
                sum_dxhat_xhat[j] += dxhat * xhat[(r, j)];
            }
        }
        Matrix::from_fn(b, width, |r, j| {
            let dxhat = dy[(r, j)] * self.gamma[j];
            cache.inv_std[j] / n * (n * dxhat - sum_dxhat[j] - xhat[(r, j)] * sum_dxhat_xhat[j])
        })
    }
}

/// Parametric rectifier with one scalar negative slope.
pub fn prelu(x: &Matrix, slope: f64) -> Matrix {
    Matrix::from_fn(x.rows(), x.cols(), |r, c| {
        let v = x[(r, c)];
        if v > 0.0 {
            v
        } else {
            slope * v
        }
    })
}

/// Returns `(∂L/∂x, ∂L/∂slope)`.
pub fn prelu_backward(x: &Matrix, slope: f64, dy: &Matrix) -> (Matrix, f64) {
    let mut dslope = 0.0;
    let dx = Matrix::from_fn(x.rows(), x.cols(), |r, c| {
        let v = x[(r, c)];
        let d = dy[(r, c)];
        if v > 0.0 {
            d
        } else {
            dslope += d * v;
            slope * d
        }
    });
    (dx, dslope)
}

pub fn relu(x: &Matrix) -> Matrix {
    prelu(x, 0.0)
}

pub fn relu_backward(x: &Matrix, dy: &Matrix) -> Matrix {
    Matrix::from_fn(x.rows(), x.cols(), |r, c| if x[(r, c)] > 0.0 { dy[(r, c)] } else { 0.0 })
}
