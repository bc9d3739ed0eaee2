//! Hierarchy-aware frames.
//!
//! LCA heights are mapped to target cosines with
//! `S_ij = (1 − s_min)·exp(−γ·d_ij / d_max) + s_min`, the smallest `s_min`
//! on a 0.02-spaced grid that keeps `S` positive definite is selected, and
//! the classifier matrix is recovered as `W = U D^{1/2} Qᵀ` from the
//! eigendecomposition `S = Q D Qᵀ` and a random orthonormal `U`, so that
//! `WᵀW = S` and every column of `W` has unit norm.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::DistanceMatrix;
use crate::linalg::{self, cosine, householder_qr, LinalgError, Matrix};
use crate::rng::SplitMix64;

/// `λ_min > PD_TOLERANCE · λ_max` counts as positive definite.
pub const PD_TOLERANCE: f64 = 1e-8;
/// Maximum `‖WᵀW − S‖_F / ‖S‖_F` accepted from the factorization.
pub const RECONSTRUCTION_TOLERANCE: f64 = 1e-8;
/// Maximum deviation of a frame column norm from 1.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-9;
/// Spacing of the `s_min` search grid.
pub const S_MIN_STEP: f64 = 0.02;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrameError {
    #[error("invalid mapping parameters: {0}")]
    InvalidParams(String),
    #[error("no s_min on the grid [-1.00, 0.98] makes the similarity matrix positive definite (gamma = {gamma})")]
    InfeasibleMapping { gamma: f64 },
    #[error("similarity matrix is not positive definite (lambda_min = {min_eigenvalue:e}, lambda_max = {max_eigenvalue:e})")]
    NotPositiveDefinite {
        min_eigenvalue: f64,
        max_eigenvalue: f64,
    },
    #[error("frame needs at least {min} classes, got {k}")]
    TooFewClasses { k: usize, min: usize },
    #[error("frame invariant violated: {0}")]
    InvariantViolation(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MappingParams {
    pub gamma: f64,
    pub s_min: f64,
}

impl MappingParams {
    pub fn new(gamma: f64, s_min: f64) -> Result<Self, FrameError> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(FrameError::InvalidParams(format!("gamma must be > 0, got {gamma}")));
        }
        if !(-1.0..1.0).contains(&s_min) {
            return Err(FrameError::InvalidParams(format!(
                "s_min must lie in [-1, 1), got {s_min}"
            )));
        }
        Ok(Self { gamma, s_min })
    }

    /// Mapped cosine for an LCA height `d` in a tree of height `d_max`.
    pub fn map(&self, d: f64, d_max: f64) -> f64 {
        (1.0 - self.s_min) * (-self.gamma * d / d_max).exp() + self.s_min
    }
}

/// Spectral evidence that a matrix is positive definite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdCertificate {
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
}

impl PdCertificate {
    pub fn from_eigenvalues(values: &[f64]) -> Self {
        let min_eigenvalue = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max_eigenvalue = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self {
            min_eigenvalue,
            max_eigenvalue,
        }
    }

    pub fn is_positive_definite(&self) -> bool {
        self.max_eigenvalue > 0.0 && self.min_eigenvalue > PD_TOLERANCE * self.max_eigenvalue
    }
}

/// Matrix of target pairwise cosines.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    values: Matrix,
    params: Option<MappingParams>,
    certificate: Option<PdCertificate>,
}

impl SimilarityMatrix {
    /// Wraps an arbitrary symmetric matrix with unit diagonal (not yet
    /// certified).
    pub fn from_matrix(values: Matrix) -> Self {
        Self {
            values,
            params: None,
            certificate: None,
        }
    }

    /// Constant off-diagonal cosine `c`: the simplex ETF target when
    /// `c = −1/(K−1)`.
    pub fn uniform(k: usize, off_diagonal: f64) -> Self {
        Self::from_matrix(Matrix::from_fn(k, k, |i, j| {
            if i == j {
                1.0
            } else {
                off_diagonal
            }
        }))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.values
    }

    pub fn num_classes(&self) -> usize {
        self.values.rows()
    }

    pub fn params(&self) -> Option<MappingParams> {
        self.params
    }

    pub fn certificate(&self) -> Option<PdCertificate> {
        self.certificate
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    /// Computes the spectrum and attaches the certificate if the matrix is
    /// positive definite.
    pub fn certify(mut self) -> Result<Self, FrameError> {
        let cert = spectrum_certificate(&self.values)?;
        if !cert.is_positive_definite() {
            return Err(FrameError::NotPositiveDefinite {
                min_eigenvalue: cert.min_eigenvalue,
                max_eigenvalue: cert.max_eigenvalue,
            });
        }
        self.certificate = Some(cert);
        Ok(self)
    }
}

fn spectrum_certificate(m: &Matrix) -> Result<PdCertificate, FrameError> {
    Ok(PdCertificate::from_eigenvalues(&linalg::symmetric_eigenvalues(m)?))
}

/// Applies the exponential mapping to every pair. The diagonal is exactly 1.
pub fn map_similarity(d: &DistanceMatrix, params: MappingParams) -> SimilarityMatrix {
    let k = d.num_classes();
    let d_max = f64::from(d.max_depth().max(1));
    let values = Matrix::from_fn(k, k, |i, j| {
        if i == j {
            1.0
        } else {
            params.map(f64::from(d.get(i, j)), d_max)
        }
    });
    SimilarityMatrix {
        values,
        params: Some(params),
        certificate: None,
    }
}

/// The `s_min` search grid: −1.00, −0.98, …, 0.98.
pub fn s_min_grid() -> impl DoubleEndedIterator<Item = f64> + Clone {
    // Integer steps divided once keep each value the nearest double to its
    // decimal.
    (-50i32..50).map(|i| f64::from(i) / 50.0)
}

/// Whether the mapping with `(gamma, s_min)` passes the positive-definite
/// certificate.
pub fn is_feasible(d: &DistanceMatrix, gamma: f64, s_min: f64) -> Result<bool, FrameError> {
    let params = MappingParams::new(gamma, s_min)?;
    let s = map_similarity(d, params);
    Ok(spectrum_certificate(s.matrix())?.is_positive_definite())
}

/// Smallest grid `s_min` whose mapped similarity matrix is positive
/// definite, together with that certified matrix.
pub fn search_s_min(d: &DistanceMatrix, gamma: f64) -> Result<SimilarityMatrix, FrameError> {
    MappingParams::new(gamma, 0.0)?;
    for s_min in s_min_grid() {
        let s = map_similarity(d, MappingParams { gamma, s_min });
        let cert = spectrum_certificate(s.matrix())?;
        if cert.is_positive_definite() {
            return Ok(SimilarityMatrix {
                certificate: Some(cert),
                ..s
            });
        }
    }
    Err(FrameError::InfeasibleMapping { gamma })
}

/// Random orthonormal K×K matrix: Householder QR of a standard-normal
/// matrix with `R`'s diagonal made nonnegative.
pub fn random_rotation(k: usize, seed: u64) -> Matrix {
    let mut rng = SplitMix64::new(seed);
    let g = Matrix::from_fn(k, k, |_, _| rng.normal());
    let (q, _r) = householder_qr(&g).expect("square input");
    q
}

/// Fixed classifier matrix whose columns are unit-norm class vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HaFrame {
    /// Column `j` is the classifier vector of class `j`.
    weights: Matrix,
    /// The Gram matrix the frame was solved for.
    target: Matrix,
    params: Option<MappingParams>,
    certificate: Option<PdCertificate>,
    seed: u64,
    bounds: FrameBounds,
    reconstruction_error: f64,
}

/// Frame bounds `A = λ_min(WWᵀ)`, `B = λ_max(WWᵀ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameBounds {
    pub lower: f64,
    pub upper: f64,
}

impl HaFrame {
    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn target(&self) -> &Matrix {
        &self.target
    }

    pub fn num_classes(&self) -> usize {
        self.weights.cols()
    }

    pub fn params(&self) -> Option<MappingParams> {
        self.params
    }

    pub fn certificate(&self) -> Option<PdCertificate> {
        self.certificate
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn bounds(&self) -> FrameBounds {
        self.bounds
    }

    /// `‖WᵀW − S‖_F / ‖S‖_F` measured at solve time.
    pub fn reconstruction_error(&self) -> f64 {
        self.reconstruction_error
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.weights.column(j)
    }

    /// Pairwise cosines between frame columns.
    pub fn cosines(&self) -> Matrix {
        let cols: Vec<Vec<f64>> = (0..self.num_classes()).map(|j| self.column(j)).collect();
        let k = cols.len();
        Matrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { cosine(&cols[i], &cols[j]) })
    }
}

/// `W = U D^{1/2} Qᵀ` for a certified similarity matrix.
pub fn solve_haframe(s: &SimilarityMatrix, seed: u64) -> Result<HaFrame, FrameError> {
    let certified = match s.certificate {
        Some(_) => s.clone(),
        None => s.clone().certify()?,
    };
    if certified.num_classes() < 1 {
        return Err(FrameError::TooFewClasses { k: 0, min: 1 });
    }
    factorize(&certified, seed, true)
}

/// Simplex ETF: K unit vectors with all pairwise cosines `−1/(K−1)`.
///
/// The ETF Gram matrix is singular (its smallest eigenvalue is 0), so it is
/// factorized with the positive-definite gate relaxed to
/// positive-semidefinite; the resulting lower frame bound is ≈ 0.
pub fn solve_etf(k: usize, seed: u64) -> Result<HaFrame, FrameError> {
    if k < 2 {
        return Err(FrameError::TooFewClasses { k, min: 2 });
    }
    let s = SimilarityMatrix::uniform(k, -1.0 / (k as f64 - 1.0));
    factorize(&s, seed, false)
}

fn factorize(s: &SimilarityMatrix, seed: u64, require_pd: bool) -> Result<HaFrame, FrameError> {
    let k = s.num_classes();
    let eig = linalg::symmetric_eigen(s.matrix())?;
    let u = random_rotation(k, seed);
    // U D^{1/2}: scale column j of U by sqrt(max(λ_j, 0)).
    let scaled = Matrix::from_fn(k, k, |i, j| u[(i, j)] * eig.values[j].max(0.0).sqrt());
    let weights = scaled.matmul_t(&eig.vectors);

    let gram = weights.t_matmul(&weights);
    let reconstruction_error = gram.sub(s.matrix()).frobenius_norm() / s.matrix().frobenius_norm();
    if reconstruction_error.is_nan() || reconstruction_error > RECONSTRUCTION_TOLERANCE {
        return Err(FrameError::InvariantViolation(format!(
            "reconstruction error {reconstruction_error:e} exceeds {RECONSTRUCTION_TOLERANCE:e}"
        )));
    }
    for j in 0..k {
        let n = linalg::norm(&weights.column(j));
        if (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(FrameError::InvariantViolation(format!(
                "column {j} has norm {n}"
            )));
        }
    }

    let mut frame = HaFrame {
        weights,
        target: s.matrix().clone(),
        params: s.params(),
        certificate: s.certificate(),
        seed,
        bounds: FrameBounds {
            lower: 0.0,
            upper: 0.0,
        },
        reconstruction_error,
    };
    frame.bounds = frame_bounds(&frame)?;
    if require_pd && (frame.bounds.lower.is_nan() || frame.bounds.lower <= 0.0) {
        return Err(FrameError::InvariantViolation(format!(
            "lower frame bound {} is not positive",
            frame.bounds.lower
        )));
    }
    Ok(frame)
}

/// Frame bounds from the spectrum of `WWᵀ`: for every `x`,
/// `A‖x‖² ≤ Σ_i ⟨x, w_i⟩² ≤ B‖x‖²`.
pub fn frame_bounds(frame: &HaFrame) -> Result<FrameBounds, FrameError> {
    let w = &frame.weights;
    let outer = w.matmul_t(w);
    let eig = linalg::symmetric_eigen(&outer)?;
    Ok(FrameBounds {
        lower: eig.min_value(),
        upper: eig.max_value(),
    })
}

/// `Σ_i ⟨x, w_i⟩²`, the frame operator's quadratic form.
pub fn frame_energy(frame: &HaFrame, x: &[f64]) -> f64 {
    let w = &frame.weights;
    (0..w.cols())
        .map(|i| {
            let ip: f64 = (0..w.rows()).map(|r| w[(r, i)] * x[r]).sum();
            ip * ip
        })
        .sum()
}

/// Samples of the exponential mapping (and the linear reference
/// `1 − d/d_max`) at every integer height.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MappingCurve {
    pub label: String,
    pub gamma: Option<f64>,
    pub s_min: Option<f64>,
    /// `(d, S)` pairs for `d = 0..=d_max`.
    pub points: Vec<(u32, f64)>,
}

pub fn linear_curve(d_max: u32) -> MappingCurve {
    let dm = f64::from(d_max.max(1));
    MappingCurve {
        label: "linear".into(),
        gamma: None,
        s_min: None,
        points: (0..=d_max).map(|d| (d, 1.0 - f64::from(d) / dm)).collect(),
    }
}

pub fn exponential_curve(d_max: u32, params: MappingParams) -> MappingCurve {
    let dm = f64::from(d_max.max(1));
    MappingCurve {
        label: format!("gamma_{}", params.gamma),
        gamma: Some(params.gamma),
        s_min: Some(params.s_min),
        points: (0..=d_max)
            .map(|d| {
                let s = if d == 0 { 1.0 } else { params.map(f64::from(d), dm) };
                (d, s)
            })
            .collect(),
    }
}
