mod common;

use std::collections::BTreeSet;

use common::*;
use haframe::hierarchy::LabelTree;
use haframe::linalg::Matrix;
use haframe::synth::{class_means, generate, Dataset, Split, SplitSizes, SynthConfig, SynthError};

fn cfg(dim: usize, sigma_level: Vec<f64>, sigma_noise: f64, seed: u64) -> SynthConfig {
    SynthConfig {
        dim,
        sigma_level,
        sigma_noise,
        per_class: SplitSizes {
            train: 6,
            val: 3,
            test: 4,
        },
        seed,
    }
}

fn sq_dist(m: &Matrix, a: usize, b: usize) -> f64 {
    m.row(a).iter().zip(m.row(b)).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Average ranks, ties sharing the mean rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        for &p in &idx[i..=j] {
            out[p] = (i + j) as f64 / 2.0;
        }
        i = j + 1;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn vanishing_noise_collapses_each_class() {
    let data = generate(&two_level(), &cfg(8, vec![1.0, 0.5], 1e-300, 3)).unwrap();
    for ds in [&data.train, &data.val, &data.test] {
        for (r, &y) in ds.labels.iter().enumerate() {
            assert_eq!(ds.features.row(r), data.class_means.row(y));
        }
    }
}

#[test]
fn same_seed_same_bits() {
    let c = cfg(6, vec![1.0, 0.5], 0.3, 11);
    let a = generate(&two_level(), &c).unwrap();
    let b = generate(&two_level(), &c).unwrap();
    assert_eq!(a, b);
    let other = generate(&two_level(), &SynthConfig { seed: 12, ..c }).unwrap();
    assert_ne!(a.train.features, other.train.features);
}

#[test]
fn validation_errors() {
    let t = two_level();
    assert_eq!(
        generate(&t, &cfg(3, vec![1.0, 0.5], 0.3, 0)).unwrap_err(),
        SynthError::DimensionTooSmall { dim: 3, k: 4 }
    );
    assert!(matches!(
        generate(&t, &cfg(4, vec![1.0], 0.3, 0)),
        Err(SynthError::LevelCount { .. })
    ));
    assert!(matches!(
        generate(&t, &cfg(4, vec![1.0, 0.5], 0.0, 0)),
        Err(SynthError::BadScale(_))
    ));
}

#[test]
fn splits_partition_the_pool() {
    let data = generate(&two_level(), &cfg(5, vec![1.0, 0.5], 0.3, 9)).unwrap();
    let mut all = BTreeSet::new();
    for ds in [&data.train, &data.val, &data.test] {
        for &i in &ds.pool_index {
            assert!(all.insert(i), "pool row {i} used twice");
        }
        let classes: BTreeSet<usize> = ds.labels.iter().copied().collect();
        assert_eq!(classes.len(), 4);
    }
    assert_eq!(all, (0..4 * 13).collect());
    assert_eq!((data.train.len(), data.val.len(), data.test.len()), (24, 12, 16));
}

#[test]
fn csv_round_trip() {
    let data = generate(&two_level(), &cfg(5, vec![1.0, 0.5], 0.3, 2)).unwrap();
    let text = data.test.to_csv();
    assert!(text.starts_with("5,4,16\n"));
    let back = Dataset::from_csv(&text, Split::Test).unwrap();
    assert_eq!(back.features, data.test.features);
    assert_eq!(back.labels, data.test.labels);
    assert!(matches!(
        Dataset::from_csv("2,2,1\n3,0.1,0.2\n", Split::Test),
        Err(SynthError::Format { line: 2, .. })
    ));
}

#[test]
fn expected_mean_distances_follow_level_scales() {
    let dim = 16;
    let tree = two_level();
    let (mut sib, mut cousin) = (0.0, 0.0);
    let runs = 200;
    for seed in 0..runs {
        let m = class_means(&tree, &cfg(dim, vec![2.0, 0.5], 0.1, seed));
        sib += sq_dist(&m, 0, 1) / runs as f64;
        cousin += sq_dist(&m, 0, 2) / runs as f64;
    }
    let sib_expected = 2.0 * 0.25 * dim as f64;
    let cousin_expected = 2.0 * 4.25 * dim as f64;
    assert!((sib / sib_expected - 1.0).abs() < 0.1, "{sib} vs {sib_expected}");
    assert!((cousin / cousin_expected - 1.0).abs() < 0.1, "{cousin} vs {cousin_expected}");
    assert!(sib < cousin);
}

/// Root-to-leaf spine: `L1` hangs off the root, `L_i` off `n_{i-1}`, and
/// `n_{k-2}` holds the last two leaves. LCA heights run 1..k-1.
fn caterpillar(k: usize) -> LabelTree {
    let mut text = String::from("L1\troot\nn1\troot\n");
    for i in 1..k - 2 {
        text += &format!("L{}\tn{i}\nn{}\tn{i}\n", i + 1, i + 1);
    }
    text += &format!("L{}\tn{}\nL{}\tn{}\n", k - 1, k - 2, k, k - 2);
    LabelTree::parse(&text).unwrap()
}

/// Seed-averaged distance between class means, keyed by LCA height.
fn averaged_distances(tree: &LabelTree, sigma_level: &[f64], runs: u64) -> (Vec<f64>, Vec<f64>) {
    let d = tree.distance_matrix();
    let k = tree.num_classes();
    let mut avg = vec![vec![0.0; k]; k];
    for seed in 0..runs {
        let m = class_means(tree, &cfg(16, sigma_level.to_vec(), 0.1, seed));
        for i in 0..k {
            for j in i + 1..k {
                avg[i][j] += sq_dist(&m, i, j).sqrt() / runs as f64;
            }
        }
    }
    let (mut hs, mut ds) = (Vec::new(), Vec::new());
    for i in 0..k {
        for j in i + 1..k {
            hs.push(f64::from(d.get(i, j)));
            ds.push(avg[i][j]);
        }
    }
    (hs, ds)
}

#[test]
fn mean_distance_rank_correlates_with_lca_height() {
    let tree = caterpillar(8);
    assert_eq!(tree.max_depth(), 7);
    let levels: Vec<f64> = (0..7).map(|i| 2.0 * 0.6f64.powi(i)).collect();
    let (hs, ds) = averaged_distances(&tree, &levels, 200);
    let rho = pearson(&ranks(&hs), &ranks(&ds));
    assert!(rho > 0.9, "spearman {rho}");
}

#[test]
fn balanced_tree_distances_separate_by_height() {
    // Three heights over 28 pairs cap the rank correlation near 0.888, so
    // check the ordering directly: every pair at height h is closer than
    // every pair at height h + 1.
    let tree = LabelTree::parse(&binary_tree_text(3)).unwrap();
    let (hs, ds) = averaged_distances(&tree, &[1.0, 0.7, 0.5], 200);
    for h in 1..3 {
        let below = hs.iter().zip(&ds).filter(|(x, _)| **x == h as f64).map(|(_, d)| *d);
        let above = hs.iter().zip(&ds).filter(|(x, _)| **x == (h + 1) as f64).map(|(_, d)| *d);
        let max_below = below.fold(f64::MIN, f64::max);
        let min_above = above.fold(f64::MAX, f64::min);
        assert!(max_below < min_above, "height {h}: {max_below} vs {min_above}");
    }
}
