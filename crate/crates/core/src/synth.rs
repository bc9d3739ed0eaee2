//! Hierarchy-respecting synthetic classification data.
//!
//! Every non-root node gets a Gaussian offset with scale `σ_level[depth−1]`.
//! A class mean is the sum of offsets along its root-to-leaf path, so
//! siblings share all but their last offset and mean distances grow with LCA
//! height. Examples are the class mean plus isotropic noise.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::LabelTree;
use crate::linalg::Matrix;
use crate::rng::SplitMix64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("ambient dimension {dim} is smaller than the number of classes {k}")]
    DimensionTooSmall { dim: usize, k: usize },
    #[error("need one level scale per tree depth ({depth}), got {given}")]
    LevelCount { depth: usize, given: usize },
    #[error("scales must be positive and finite: {0}")]
    BadScale(String),
    #[error("every split needs at least one example per class")]
    EmptySplit,
    #[error("dataset file line {line}: {reason}")]
    Format { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub dim: usize,
    /// Offset scale per depth, starting with the root's children.
    pub sigma_level: Vec<f64>,
    pub sigma_noise: f64,
    /// Examples per class in each split.
    pub per_class: SplitSizes,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self, tree: &LabelTree) -> Result<(), SynthError> {
        let k = tree.num_classes();
        if self.dim < k {
            return Err(SynthError::DimensionTooSmall { dim: self.dim, k });
        }
        if self.sigma_level.len() != tree.max_depth() {
            return Err(SynthError::LevelCount {
                depth: tree.max_depth(),
                given: self.sigma_level.len(),
            });
        }
        let good = |s: f64| s > 0.0 && s.is_finite();
        if !self.sigma_level.iter().all(|&s| good(s)) {
            return Err(SynthError::BadScale(format!("sigma_level {:?}", self.sigma_level)));
        }
        if !good(self.sigma_noise) {
            return Err(SynthError::BadScale(format!("sigma_noise {}", self.sigma_noise)));
        }
        let p = self.per_class;
        if p.train == 0 || p.val == 0 || p.test == 0 {
            return Err(SynthError::EmptySplit);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: Split,
    /// One example per row.
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    /// Position of each row in the generated pool.
    pub pool_index: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    /// Row `y` is the mean of class `y`.
    pub class_means: Matrix,
}

/// Class means from the tree's random walk, K×dim.
pub fn class_means(tree: &LabelTree, cfg: &SynthConfig) -> Matrix {
    let mut rng = SplitMix64::derive(cfg.seed, 0);
    let nodes = tree.nodes();
    // Offsets are drawn in node-name order so file line order is irrelevant.
    let mut order: Vec<usize> = (0..nodes.len()).filter(|&n| n != tree.root()).collect();
    order.sort_by(|&a, &b| nodes[a].name.cmp(&nodes[b].name));
    let mut offsets = vec![Vec::new(); nodes.len()];
    for n in order {
        let scale = cfg.sigma_level[tree.depth(n) - 1];
        offsets[n] = (0..cfg.dim).map(|_| scale * rng.normal()).collect();
    }
    let leaves = tree.leaf_nodes();
    let mut means = Matrix::zeros(leaves.len(), cfg.dim);
    for (y, &leaf) in leaves.iter().enumerate() {
        for n in tree.path_from_root(leaf) {
            for (m, o) in means.row_mut(y).iter_mut().zip(&offsets[n]) {
                *m += o;
            }
        }
    }
    means
}

/// Deterministic in `cfg.seed`. The pool is laid out class by class; each
/// class's examples are shuffled before being cut into train, val and test.
pub fn generate(tree: &LabelTree, cfg: &SynthConfig) -> Result<SynthData, SynthError> {
    cfg.validate(tree)?;
    let k = tree.num_classes();
    let means = class_means(tree, cfg);
    let per = cfg.per_class.total();
    let mut noise = SplitMix64::derive(cfg.seed, 1);
    let mut split_rng = SplitMix64::derive(cfg.seed, 2);
    let pool = Matrix::from_fn(k * per, cfg.dim, |r, j| {
        means[(r / per, j)] + cfg.sigma_noise * noise.normal()
    });

    let mut assignment: [Vec<usize>; 3] = Default::default();
    for y in 0..k {
        let mut idx: Vec<usize> = (y * per..(y + 1) * per).collect();
        split_rng.shuffle(&mut idx);
        let p = cfg.per_class;
        assignment[0].extend_from_slice(&idx[..p.train]);
        assignment[1].extend_from_slice(&idx[p.train..p.train + p.val]);
        assignment[2].extend_from_slice(&idx[p.train + p.val..]);
    }
    let [train, val, test] = assignment;
    let take = |split, rows: Vec<usize>| Dataset {
        split,
        features: Matrix::from_fn(rows.len(), cfg.dim, |r, j| pool[(rows[r], j)]),
        labels: rows.iter().map(|&r| r / per).collect(),
        num_classes: k,
        pool_index: rows,
    };
    Ok(SynthData {
        train: take(Split::Train, train),
        val: take(Split::Val, val),
        test: take(Split::Test, test),
        class_means: means,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> (Matrix, Vec<usize>) {
        let x = Matrix::from_fn(indices.len(), self.dim(), |r, j| self.features[(indices[r], j)]);
        (x, indices.iter().map(|&i| self.labels[i]).collect())
    }

    /// First line `dim,K,count`, then `label,f1,…,fdim` per row. Floats use
    /// the shortest representation that round-trips.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{},{},{}\n", self.dim(), self.num_classes, self.len());
        for (r, &y) in self.labels.iter().enumerate() {
            let _ = write!(out, "{y}");
            for v in self.features.row(r) {
                let _ = write!(out, ",{v:?}");
            }
            out.push('\n');
        }
        out
    }

    /// Parses [`Dataset::to_csv`] output. Rows get their file order as pool
    /// index.
    pub fn from_csv(text: &str, split: Split) -> Result<Self, SynthError> {
        let err = |line: usize, reason: String| SynthError::Format { line, reason };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| err(1, "missing header".into()))?;
        let head: Vec<usize> = header
            .split(',')
            .map(|f| usize::from_str(f.trim()))
            .collect::<Result<_, _>>()
            .map_err(|e| err(1, format!("header {header:?}: {e}")))?;
        let [dim, k, count] = head[..] else {
            return Err(err(1, format!("header needs dim,K,count, got {header:?}")));
        };
        if k == 0 || dim == 0 {
            return Err(err(1, "dim and K must be positive".into()));
        }
        let mut data = Vec::with_capacity(count * dim);
        let mut labels = Vec::with_capacity(count);
        for (i, line) in lines {
            let lineno = i + 1;
            let mut fields = line.split(',');
            let label: usize = fields
                .next()
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|e| err(lineno, format!("label: {e}")))?;
            if label >= k {
                return Err(err(lineno, format!("label {label} out of range for K={k}")));
            }
            let before = data.len();
            for f in fields {
                let v: f64 = f.trim().parse().map_err(|e| err(lineno, format!("feature {f:?}: {e}")))?;
                if !v.is_finite() {
                    return Err(err(lineno, format!("non-finite feature {f:?}")));
                }
                data.push(v);
            }
            if data.len() - before != dim {
                return Err(err(lineno, format!("expected {dim} features, got {}", data.len() - before)));
            }
            labels.push(label);
        }
        if labels.len() != count {
            return Err(err(1, format!("header says {count} rows, found {}", labels.len())));
        }
        let mut seen = vec![false; k];
        labels.iter().for_each(|&y| seen[y] = true);
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(err(1, format!("class {missing} has no examples")));
        }
        Ok(Dataset {
            split,
            features: Matrix::from_vec(count, dim, data),
            pool_index: (0..count).collect(),
            labels,
            num_classes: k,
        })
    }
}
