//! Hierarchical evaluation metrics, neural-collapse diagnostics and
//! conditional-risk reranking.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::DistanceMatrix;
use crate::linalg::{cosine, norm, Matrix};

/// Cut-offs reported by [`evaluate_standard`].
pub const STANDARD_KS: [usize; 3] = [1, 5, 20];

/// Allowed deviation of a probability row's sum from 1.
pub const PROBABILITY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("k = {k} exceeds the number of classes {num_classes}")]
    KTooLarge { k: usize, num_classes: usize },
    #[error("k must be at least 1")]
    KZero,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("label {label} at row {row} is out of range for {k} classes")]
    LabelOutOfRange { row: usize, label: usize, k: usize },
    #[error("no examples")]
    Empty,
    #[error("non-finite score at row {0}")]
    NonFinite(usize),
    #[error("vector {0} is zero; its direction is undefined")]
    ZeroVector(usize),
    #[error("need at least 2 vectors, got {0}")]
    TooFewVectors(usize),
    #[error("classes without examples: {0:?}")]
    EmptyClasses(Vec<usize>),
    #[error("class-mean matrix has zero Frobenius norm")]
    ZeroMeans,
    #[error("probability row {row} sums to {sum}")]
    NotNormalized { row: usize, sum: f64 },
}

/// Average LCA height over the top `k` ranked classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HierDist {
    /// The cut-off that was asked for.
    pub k: usize,
    /// The cut-off actually used; smaller than `k` only when clamped to K.
    pub k_used: usize,
    pub clamped: bool,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub top1_accuracy: f64,
    /// Mean LCA height over mistakes; `None` when there are no mistakes.
    pub mistake_severity: Option<f64>,
    pub hier_dist: Vec<HierDist>,
    pub num_examples: usize,
    pub num_mistakes: usize,
}

impl EvalReport {
    pub fn hier_dist_at(&self, k: usize) -> Option<f64> {
        self.hier_dist.iter().find(|h| h.k == k).map(|h| h.value)
    }
}

fn check_aligned(scores: &Matrix, labels: &[usize], k: usize) -> Result<(), MetricsError> {
    if scores.rows() == 0 {
        return Err(MetricsError::Empty);
    }
    if scores.rows() != labels.len() || scores.cols() != k {
        return Err(MetricsError::ShapeMismatch(format!(
            "scores {:?}, {} labels, {} classes",
            scores.shape(),
            labels.len(),
            k
        )));
    }
    if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(MetricsError::LabelOutOfRange { row, label, k });
    }
    if let Some(r) = (0..scores.rows()).find(|&r| scores.row(r).iter().any(|v| !v.is_finite())) {
        return Err(MetricsError::NonFinite(r));
    }
    Ok(())
}

/// Class indices by descending score; equal scores keep ascending index.
/// `-0.0` and `0.0` count as equal.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    // Adding +0.0 maps -0.0 to 0.0 so total_cmp sees a tie.
    idx.sort_by(|&a, &b| (scores[b] + 0.0).total_cmp(&(scores[a] + 0.0)));
    idx
}

/// Metrics at the given cut-offs; any `k > K` is an error.
pub fn evaluate(scores: &Matrix, labels: &[usize], d: &DistanceMatrix, ks: &[usize]) -> Result<EvalReport, MetricsError> {
    let k_classes = d.num_classes();
    for &k in ks {
        if k == 0 {
            return Err(MetricsError::KZero);
        }
        if k > k_classes {
            return Err(MetricsError::KTooLarge {
                k,
                num_classes: k_classes,
            });
        }
    }
    evaluate_inner(scores, labels, d, ks.iter().map(|&k| (k, k)))
}

/// Metrics at 1, 5 and 20, clamping cut-offs above K to K and flagging them.
pub fn evaluate_standard(scores: &Matrix, labels: &[usize], d: &DistanceMatrix) -> Result<EvalReport, MetricsError> {
    let k_classes = d.num_classes();
    evaluate_inner(
        scores,
        labels,
        d,
        STANDARD_KS.iter().map(|&k| (k, k.min(k_classes))),
    )
}

fn evaluate_inner(
    scores: &Matrix,
    labels: &[usize],
    d: &DistanceMatrix,
    ks: impl Iterator<Item = (usize, usize)>,
) -> Result<EvalReport, MetricsError> {
    let k_classes = d.num_classes();
    check_aligned(scores, labels, k_classes)?;
    let ks: Vec<(usize, usize)> = ks.collect();
    let n = labels.len();
    let mut correct = 0usize;
    let mut severity_sum = 0u64;
    let mut sums = vec![0.0; ks.len()];
    for (r, &y) in labels.iter().enumerate() {
        let order = ranking(scores.row(r));
        if order[0] == y {
            correct += 1;
        } else {
            severity_sum += u64::from(d.get(order[0], y));
        }
        for (s, &(_, k_used)) in sums.iter_mut().zip(&ks) {
            let total: u32 = order[..k_used].iter().map(|&c| d.get(c, y)).sum();
            *s += f64::from(total) / k_used as f64;
        }
    }
    let mistakes = n - correct;
    Ok(EvalReport {
        top1_accuracy: correct as f64 / n as f64,
        mistake_severity: (mistakes > 0).then(|| severity_sum as f64 / mistakes as f64),
        hier_dist: ks
            .iter()
            .zip(sums)
            .map(|(&(k, k_used), s)| HierDist {
                k,
                k_used,
                clamped: k_used < k,
                value: s / n as f64,
            })
            .collect(),
        num_examples: n,
        num_mistakes: mistakes,
    })
}

/// Target geometry for collapse diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CollapseTarget {
    Haframe,
    Etf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    pub angular_mean: f64,
    pub angular_std: f64,
    pub self_duality: f64,
    pub target: CollapseTarget,
    pub centered: bool,
}

/// Mean and population standard deviation of `|cos∠(x_i, x_j) − Ŝ_ij|` over
/// pairs `i < j`, with `x_i` the columns of `x`.
pub fn angular_collapse(x: &Matrix, target: &Matrix) -> Result<(f64, f64), MetricsError> {
    let k = x.cols();
    if k < 2 {
        return Err(MetricsError::TooFewVectors(k));
    }
    if target.shape() != (k, k) {
        return Err(MetricsError::ShapeMismatch(format!(
            "target {:?} for {k} vectors",
            target.shape()
        )));
    }
    let cols: Vec<Vec<f64>> = (0..k).map(|j| x.column(j)).collect();
    if let Some(j) = cols.iter().position(|c| norm(c) == 0.0) {
        return Err(MetricsError::ZeroVector(j));
    }
    let mut devs = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in i + 1..k {
            devs.push((cosine(&cols[i], &cols[j]) - target[(i, j)]).abs());
        }
    }
    let n = devs.len() as f64;
    let mean = devs.iter().sum::<f64>() / n;
    let var = devs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Per-class feature means as columns of a dim×K matrix. With `centered`,
/// the global mean of all features is subtracted first.
pub fn class_means(features: &Matrix, labels: &[usize], k: usize, centered: bool) -> Result<Matrix, MetricsError> {
    let (b, dim) = features.shape();
    if b == 0 {
        return Err(MetricsError::Empty);
    }
    if labels.len() != b {
        return Err(MetricsError::ShapeMismatch(format!("{b} rows, {} labels", labels.len())));
    }
    if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(MetricsError::LabelOutOfRange { row, label, k });
    }
    let mut sums = Matrix::zeros(dim, k);
    let mut counts = vec![0usize; k];
    let mut global = vec![0.0; dim];
    for (r, &y) in labels.iter().enumerate() {
        counts[y] += 1;
        for (j, &v) in features.row(r).iter().enumerate() {
            sums.row_mut(j)[y] += v;
            global[j] += v;
        }
    }
    let empty: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
    if !empty.is_empty() {
        return Err(MetricsError::EmptyClasses(empty));
    }
    global.iter_mut().for_each(|g| *g /= b as f64);
    Ok(Matrix::from_fn(dim, k, |j, c| {
        let mean = sums[(j, c)] / counts[c] as f64;
        if centered {
            mean - global[j]
        } else {
            mean
        }
    }))
}

/// `‖W/‖W‖_F − H/‖H‖_F‖_F`.
pub fn self_duality(w: &Matrix, h: &Matrix) -> Result<f64, MetricsError> {
    if w.shape() != h.shape() {
        return Err(MetricsError::ShapeMismatch(format!(
            "W {:?}, H {:?}",
            w.shape(),
            h.shape()
        )));
    }
    let hn = h.frobenius_norm();
    if hn == 0.0 {
        return Err(MetricsError::ZeroMeans);
    }
    let wn = w.frobenius_norm();
    if wn == 0.0 {
        return Err(MetricsError::ZeroVector(0));
    }
    Ok(w.scale(1.0 / wn).sub(&h.scale(1.0 / hn)).frobenius_norm())
}

/// Class means, angular collapse against `target` and self-duality
/// against `w`.
pub fn collapse_report(
    w: &Matrix,
    features: &Matrix,
    labels: &[usize],
    target: &Matrix,
    kind: CollapseTarget,
    centered: bool,
) -> Result<CollapseReport, MetricsError> {
    let h = class_means(features, labels, w.cols(), centered)?;
    let (angular_mean, angular_std) = angular_collapse(&h, target)?;
    Ok(CollapseReport {
        angular_mean,
        angular_std,
        self_duality: self_duality(w, &h)?,
        target: kind,
        centered,
    })
}

/// One row of the per-epoch collapse series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapsePoint {
    pub epoch: usize,
    pub report: CollapseReport,
}

pub fn collapse_csv(series: &[CollapsePoint]) -> String {
    let mut out = String::from("epoch,mean,std,self_duality\n");
    for p in series {
        let _ = writeln!(
            out,
            "{},{:.17e},{:.17e},{:.17e}",
            p.epoch, p.report.angular_mean, p.report.angular_std, p.report.self_duality
        );
    }
    out
}

/// Expected LCA height of predicting each class: `risk[b][i] = Σ_j p_j d_ij`.
pub fn conditional_risk(probs: &Matrix, d: &DistanceMatrix) -> Result<Matrix, MetricsError> {
    let (b, k) = probs.shape();
    if k != d.num_classes() {
        return Err(MetricsError::ShapeMismatch(format!(
            "{k} probability columns, {} classes",
            d.num_classes()
        )));
    }
    for r in 0..b {
        let row = probs.row(r);
        if row.iter().any(|v| !v.is_finite()) {
            return Err(MetricsError::NonFinite(r));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > PROBABILITY_TOLERANCE {
            return Err(MetricsError::NotNormalized { row: r, sum });
        }
    }
    Ok(Matrix::from_fn(b, k, |r, i| {
        probs
            .row(r)
            .iter()
            .zip(d.row(i))
            .map(|(p, &dist)| p * f64::from(dist))
            .sum()
    }))
}

/// Minimum-risk class per row; ties go to the lowest index.
pub fn crm_rerank(probs: &Matrix, d: &DistanceMatrix) -> Result<Vec<usize>, MetricsError> {
    let risk = conditional_risk(probs, d)?;
    Ok((0..risk.rows())
        .map(|r| {
            let row = risk.row(r);
            let mut best = 0;
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v < row[best] {
                    best = i;
                }
            }
            best
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::LabelTree;

    fn two_level() -> DistanceMatrix {
        LabelTree::parse("ab\troot\ncd\troot\nA\tab\nB\tab\nC\tcd\nD\tcd\n")
            .unwrap()
            .distance_matrix()
    }

    #[test]
    fn all_correct() {
        let d = two_level();
        let scores = Matrix::identity(4);
        let r = evaluate(&scores, &[0, 1, 2, 3], &d, &[1, 4]).unwrap();
        assert_eq!(r.top1_accuracy, 1.0);
        assert_eq!(r.mistake_severity, None);
        assert_eq!(r.hier_dist_at(1), Some(0.0));
        // top-4 covers every class: (0 + 1 + 2 + 2)/4
        assert_eq!(r.hier_dist_at(4), Some(1.25));
    }

    #[test]
    fn k_too_large_is_error() {
        let d = two_level();
        assert_eq!(
            evaluate(&Matrix::identity(4), &[0, 1, 2, 3], &d, &[5]),
            Err(MetricsError::KTooLarge { k: 5, num_classes: 4 })
        );
        let r = evaluate_standard(&Matrix::identity(4), &[0, 1, 2, 3], &d).unwrap();
        assert_eq!(r.hier_dist[2], HierDist { k: 20, k_used: 4, clamped: true, value: 1.25 });
        assert!(!r.hier_dist[0].clamped);
    }

    #[test]
    fn single_pair_collapse() {
        let x = Matrix::identity(2);
        let target = Matrix::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]);
        assert_eq!(angular_collapse(&x, &target).unwrap(), (1.0, 0.0));
        assert_eq!(
            angular_collapse(&Matrix::zeros(2, 2), &target),
            Err(MetricsError::ZeroVector(0))
        );
    }

    #[test]
    fn self_duality_values() {
        let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, -1.0]]);
        assert_eq!(self_duality(&w, &w).unwrap(), 0.0);
        assert!(self_duality(&w, &w.scale(5.0)).unwrap() < 1e-15);
        assert!((self_duality(&w, &w.scale(-1.0)).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(self_duality(&w, &Matrix::zeros(2, 2)), Err(MetricsError::ZeroMeans));
    }

    #[test]
    fn class_means_errors_list_empty_classes() {
        let f = Matrix::from_rows(&[vec![1.0, 0.0, 0.0]]);
        assert_eq!(
            class_means(&f, &[1], 3, false),
            Err(MetricsError::EmptyClasses(vec![0, 2]))
        );
    }

    #[test]
    fn crm_examples() {
        let d = two_level();
        let uniform = Matrix::from_fn(1, 4, |_, _| 0.25);
        let risk = conditional_risk(&uniform, &d).unwrap();
        assert!(risk.row(0).iter().all(|&r| r == 1.25));
        assert_eq!(crm_rerank(&uniform, &d).unwrap(), vec![0]);
        let onehot = Matrix::from_rows(&[vec![0.0, 0.0, 1.0, 0.0]]);
        assert_eq!(crm_rerank(&onehot, &d).unwrap(), vec![2]);
        let bad = Matrix::from_rows(&[vec![0.5, 0.0, 0.0, 0.0]]);
        assert!(matches!(crm_rerank(&bad, &d), Err(MetricsError::NotNormalized { row: 0, .. })));
    }

    #[test]
    fn csv_header() {
        assert_eq!(collapse_csv(&[]), "epoch,mean,std,self_duality\n");
    }
}
