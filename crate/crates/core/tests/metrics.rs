mod common;

use common::*;
use haframe::frame::solve_etf;
use haframe::hierarchy::DistanceMatrix;
use haframe::linalg::{cosine, Matrix};
use haframe::losses::softmax;
use haframe::metrics::{
    angular_collapse, class_means, conditional_risk, crm_rerank, evaluate, evaluate_standard, self_duality,
    MetricsError,
};
use haframe::rng::SplitMix64;
use proptest::prelude::*;

/// Top-k by repeated selection of the maximum, lowest index first on ties.
fn brute_top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut taken = vec![false; scores.len()];
    let mut out = Vec::new();
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for (i, &s) in scores.iter().enumerate() {
            if !taken[i] && best.is_none_or(|b| s > scores[b]) {
                best = Some(i);
            }
        }
        taken[best.unwrap()] = true;
        out.push(best.unwrap());
    }
    out
}

/// (top1, severity, hd@k for each k) by direct table lookup.
fn brute_metrics(scores: &Matrix, labels: &[usize], d: &DistanceMatrix, ks: &[usize]) -> (f64, Option<f64>, Vec<f64>) {
    let n = labels.len() as f64;
    let mut correct = 0.0;
    let mut sev = Vec::new();
    let mut hd = vec![0.0; ks.len()];
    for (r, &y) in labels.iter().enumerate() {
        let pred = brute_top_k(scores.row(r), 1)[0];
        if pred == y {
            correct += 1.0;
        } else {
            sev.push(f64::from(d.get(pred, y)));
        }
        for (h, &k) in hd.iter_mut().zip(ks) {
            let top = brute_top_k(scores.row(r), k);
            *h += top.iter().map(|&c| f64::from(d.get(c, y))).sum::<f64>() / k as f64 / n;
        }
    }
    let severity = (!sev.is_empty()).then(|| sev.iter().sum::<f64>() / sev.len() as f64);
    (correct / n, severity, hd)
}

fn random_probs(rng: &mut SplitMix64, b: usize, k: usize) -> Matrix {
    softmax(&random_matrix(rng, b, k).scale(2.0))
}

#[test]
fn all_correct_has_no_severity() {
    let d = two_level().distance_matrix();
    let scores = Matrix::from_rows(&[vec![5.0, 0.0, 0.0, 0.0], vec![0.0, 0.0, 3.0, 1.0]]);
    let r = evaluate(&scores, &[0, 2], &d, &[1, 2]).unwrap();
    assert_eq!(r.top1_accuracy, 1.0);
    assert_eq!(r.mistake_severity, None);
    assert_eq!(r.hier_dist_at(1), Some(0.0));
    assert_eq!(r.num_mistakes, 0);
}

#[test]
fn toy_set_matches_exhaustive_oracle() {
    let d = two_level().distance_matrix();
    // Correct; sibling mistake; cousin mistake with the sibling second.
    let scores = Matrix::from_rows(&[
        vec![4.0, 3.0, 2.0, 1.0],
        vec![1.0, 0.5, 3.0, 2.0],
        vec![0.2, 0.1, 0.9, 0.8],
    ]);
    let labels = [0, 3, 0];
    let ks = [1, 2, 3, 4];
    let r = evaluate(&scores, &labels, &d, &ks).unwrap();
    let (top1, sev, hd) = brute_metrics(&scores, &labels, &d, &ks);
    assert_eq!(r.top1_accuracy, top1);
    assert_eq!(r.mistake_severity, sev);
    for (h, v) in r.hier_dist.iter().zip(hd) {
        assert!((h.value - v).abs() < 1e-12);
    }
    assert!((top1 - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(sev, Some(1.5));
    assert!((r.hier_dist_at(1).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn k_beyond_classes() {
    let d = two_level().distance_matrix();
    let scores = Matrix::zeros(1, 4);
    assert_eq!(
        evaluate(&scores, &[0], &d, &[5]).unwrap_err(),
        MetricsError::KTooLarge { k: 5, num_classes: 4 }
    );
    let r = evaluate_standard(&scores, &[0], &d).unwrap();
    let hd20 = r.hier_dist.iter().find(|h| h.k == 20).unwrap();
    assert!(hd20.clamped && hd20.k_used == 4);
    assert!(!r.hier_dist[0].clamped);
}

#[test]
fn reference_triple_satisfies_identity() {
    let top1: f64 = 0.7918;
    let severity = 2.12;
    assert!(((1.0 - top1) * severity - 0.44).abs() < 0.005);
}

#[test]
fn angular_collapse_examples() {
    let frame = haframe_for(&two_level(), 2.0, 3);
    let (m, s) = angular_collapse(frame.weights(), &frame.cosines()).unwrap();
    assert_eq!((m, s), (0.0, 0.0));
    let target = frame.target();
    let (m, s) = angular_collapse(frame.weights(), target).unwrap();
    assert!(m <= 1e-12 && s <= 1e-12);

    let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]);
    let (m, s) = angular_collapse(&x, &Matrix::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]])).unwrap();
    assert_eq!((m, s), (1.0, 0.0));

    let z = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]);
    assert_eq!(angular_collapse(&z, &Matrix::identity(2)), Err(MetricsError::ZeroVector(1)));
}

#[test]
fn class_means_examples() {
    let h = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 7.0]]);
    let raw = class_means(&h, &[0, 1, 2], 3, false).unwrap();
    assert_eq!(raw, h.transpose());
    let centered = class_means(&h, &[0, 1, 2], 3, true).unwrap();
    for j in 0..2 {
        assert!(centered.row(j).iter().sum::<f64>().abs() < 1e-12);
    }
    assert_eq!(
        class_means(&h, &[0, 0, 2], 3, false).unwrap_err(),
        MetricsError::EmptyClasses(vec![1])
    );
}

#[test]
fn self_duality_examples() {
    let w = solve_etf(4, 2).unwrap().weights().clone();
    assert!(self_duality(&w, &w).unwrap() < 1e-15);
    assert!(self_duality(&w, &w.scale(5.0)).unwrap() < 1e-12);
    assert!((self_duality(&w, &w.scale(-1.0)).unwrap() - 2.0).abs() < 1e-12);
    assert_eq!(self_duality(&w, &Matrix::zeros(4, 4)), Err(MetricsError::ZeroMeans));
}

#[test]
fn crm_examples() {
    let d = two_level().distance_matrix();
    let one_hot = Matrix::from_rows(&[vec![0.0, 0.0, 1.0, 0.0]]);
    assert_eq!(crm_rerank(&one_hot, &d).unwrap(), vec![2]);
    let uniform = Matrix::from_fn(1, 4, |_, _| 0.25);
    let risk = conditional_risk(&uniform, &d).unwrap();
    assert!(risk.row(0).iter().all(|&r| (r - 1.25).abs() < 1e-15));
    assert_eq!(crm_rerank(&uniform, &d).unwrap(), vec![0]);
    let flat5 = flat(5).distance_matrix();
    let risk = conditional_risk(&Matrix::from_fn(1, 5, |_, _| 0.2), &flat5).unwrap();
    assert!(risk.row(0).iter().all(|&r| (r - 0.8).abs() < 1e-15));
    let bad = Matrix::from_fn(1, 4, |_, _| 0.3);
    assert!(matches!(crm_rerank(&bad, &d), Err(MetricsError::NotNormalized { row: 0, .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn hier_dist_at_one_is_error_rate_times_severity(seed in any::<u64>()) {
        let mut rng = SplitMix64::new(seed);
        let tree = random_tree(&mut rng, 10);
        let d = tree.distance_matrix();
        let k = tree.num_classes();
        let n = 1 + rng.below(40);
        // Coarse scores make ties common.
        let scores = Matrix::from_fn(n, k, |_, _| (rng.normal() * 2.0).round());
        let labels: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
        let ks: Vec<usize> = (1..=k).collect();
        let r = evaluate(&scores, &labels, &d, &ks).unwrap();
        let (top1, sev, hd) = brute_metrics(&scores, &labels, &d, &ks);
        prop_assert_eq!(r.top1_accuracy, top1);
        prop_assert_eq!(r.mistake_severity, sev);
        for (h, v) in r.hier_dist.iter().zip(hd) {
            prop_assert!((h.value - v).abs() < 1e-12);
        }
        let identity = (1.0 - r.top1_accuracy) * r.mistake_severity.unwrap_or(0.0);
        prop_assert!((r.hier_dist_at(1).unwrap() - identity).abs() <= 1e-9);
        if let Some(s) = r.mistake_severity {
            prop_assert!(s >= 1.0 && s <= tree.max_depth() as f64);
        }
    }

    #[test]
    fn metrics_depend_only_on_rank_order(seed in any::<u64>()) {
        let mut rng = SplitMix64::new(seed);
        let d = two_level().distance_matrix();
        let scores = random_matrix(&mut rng, 20, 4);
        let labels: Vec<usize> = (0..20).map(|_| rng.below(4)).collect();
        let warped = Matrix::from_fn(20, 4, |r, c| (3.0 * scores[(r, c)]).exp() + 7.0);
        let a = evaluate(&scores, &labels, &d, &[1, 2, 3, 4]).unwrap();
        let b = evaluate(&warped, &labels, &d, &[1, 2, 3, 4]).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn crm_commutes_with_relabeling(seed in any::<u64>()) {
        let mut rng = SplitMix64::new(seed);
        let tree = random_tree(&mut rng, 9);
        let d = tree.distance_matrix();
        let k = tree.num_classes();
        let probs = random_probs(&mut rng, 12, k);
        let mut perm: Vec<usize> = (0..k).collect();
        rng.shuffle(&mut perm);
        let pd = DistanceMatrix::from_rows(
            &(0..k).map(|i| (0..k).map(|j| d.get(perm[i], perm[j])).collect::<Vec<_>>()).collect::<Vec<_>>(),
            d.max_depth(),
        );
        let pp = Matrix::from_fn(12, k, |r, i| probs[(r, perm[i])]);
        let base = conditional_risk(&probs, &d).unwrap();
        let permuted = conditional_risk(&pp, &pd).unwrap();
        for r in 0..12 {
            for i in 0..k {
                prop_assert!((permuted[(r, i)] - base[(r, perm[i])]).abs() < 1e-12);
            }
        }
        let picks = crm_rerank(&probs, &d).unwrap();
        let ppicks = crm_rerank(&pp, &pd).unwrap();
        for r in 0..12 {
            // Ties may resolve to different classes; the risk must match.
            prop_assert!((base[(r, perm[ppicks[r]])] - base[(r, picks[r])]).abs() < 1e-12);
        }
    }

    #[test]
    fn angular_collapse_matches_double_loop(seed in any::<u64>()) {
        let mut rng = SplitMix64::new(seed);
        let k = 2 + rng.below(9);
        let x = random_matrix(&mut rng, 6, k);
        let target = random_matrix(&mut rng, k, k).symmetrized();
        let (m, s) = angular_collapse(&x, &target).unwrap();
        let mut devs = Vec::new();
        for j in 0..k {
            for i in 0..j {
                devs.push((cosine(&x.column(i), &x.column(j)) - target[(j, i)]).abs());
            }
        }
        let n = devs.len() as f64;
        let mean = devs.iter().sum::<f64>() / n;
        let std = (devs.iter().map(|v| v * v).sum::<f64>() / n - mean * mean).max(0.0).sqrt();
        prop_assert!((m - mean).abs() <= 1e-12);
        prop_assert!((s - std).abs() <= 1e-7);
        prop_assert!(m >= 0.0 && s >= 0.0);
    }

    #[test]
    fn class_means_match_two_pass_oracle(seed in any::<u64>(), centered in any::<bool>()) {
        let mut rng = SplitMix64::new(seed);
        let k = 2 + rng.below(5);
        let per = 1 + rng.below(6);
        let labels: Vec<usize> = (0..k * per).map(|i| i % k).collect();
        let h = random_matrix(&mut rng, k * per, 5);
        let got = class_means(&h, &labels, k, centered).unwrap();
        for j in 0..5 {
            let global: f64 = (0..k * per).map(|r| h[(r, j)]).sum::<f64>() / (k * per) as f64;
            for c in 0..k {
                let rows: Vec<usize> = (0..k * per).filter(|&r| labels[r] == c).collect();
                let mean = rows.iter().map(|&r| h[(r, j)]).sum::<f64>() / rows.len() as f64;
                let expected = if centered { mean - global } else { mean };
                prop_assert!((got[(j, c)] - expected).abs() <= 1e-12);
            }
            if centered {
                prop_assert!(got.row(j).iter().sum::<f64>().abs() <= 1e-12);
            }
        }
        let sd = self_duality(&random_matrix(&mut rng, 5, k), &got);
        if let Ok(v) = sd {
            prop_assert!((0.0..=2.0).contains(&v));
        }
    }
}
