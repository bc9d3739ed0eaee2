mod common;

use common::*;
use haframe::frame::solve_etf;
use haframe::hierarchy::LabelTree;
use haframe::linalg::{cosine, Matrix};
use haframe::losses::{cosine_aux, cross_entropy, total_loss, LossConfig};
use haframe::rng::SplitMix64;
use proptest::prelude::*;

fn frame8() -> Matrix {
    let tree = LabelTree::parse(&binary_tree_text(3)).unwrap();
    haframe_for(&tree, 2.0, 1).weights().clone()
}

#[test]
fn cross_entropy_matches_direct_summation() {
    let mut rng = SplitMix64::new(4);
    let logits = random_matrix(&mut rng, 3, 5);
    let labels = [4, 0, 2];
    let out = cross_entropy(&logits, &labels).unwrap();
    let mut expected = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let z: f64 = logits.row(r).iter().map(|v| v.exp()).sum();
        expected += z.ln() - logits[(r, y)];
    }
    expected /= 3.0;
    assert!((out.loss - expected).abs() < 1e-12);
    for (r, &y) in labels.iter().enumerate() {
        let z: f64 = logits.row(r).iter().map(|v| v.exp()).sum();
        for i in 0..5 {
            let p = logits[(r, i)].exp() / z;
            let g = (p - f64::from(u8::from(i == y))) / 3.0;
            assert!((out.grad[(r, i)] - g).abs() < 1e-15);
        }
    }
}

#[test]
fn uniform_logits_cross_entropy_is_log_k() {
    let out = cross_entropy(&Matrix::zeros(1, 4), &[2]).unwrap();
    assert!((out.loss - 1.386294).abs() < 1e-6);
    assert!((out.loss - 4f64.ln()).abs() < 1e-12);
}

#[test]
fn auxiliary_loss_vanishes_on_class_direction() {
    let w = frame8();
    for y in 0..8 {
        let wy = Matrix::from_vec(1, 8, w.column(y));
        for c in [1.0, 0.01, 37.5] {
            let out = cosine_aux(&w, &wy.scale(c), &[y]).unwrap();
            assert!(out.loss <= 1e-12, "{y} {c}: {}", out.loss);
        }
    }
}

#[test]
fn antipodal_etf_orthogonal_feature() {
    let w = solve_etf(2, 3).unwrap().weights().clone();
    let w0 = w.column(0);
    let h = Matrix::from_vec(1, 2, vec![-w0[1], w0[0]]);
    let out = cosine_aux(&w, &h, &[0]).unwrap();
    assert!((out.loss - 2.0).abs() < 1e-12);
}

#[test]
fn mixture_at_point_four() {
    let w = frame8();
    let mut rng = SplitMix64::new(2);
    let h = random_matrix(&mut rng, 4, 8);
    let logits = h.matmul(&w);
    let y = [0, 3, 5, 7];
    let ce = cross_entropy(&logits, &y).unwrap().loss;
    let aux = cosine_aux(&w, &h, &y).unwrap().loss;
    let mixed = total_loss(LossConfig::new(0.4).unwrap(), &w, &logits, &h, &y).unwrap();
    assert!((mixed.loss - (0.6 * ce + 0.4 * aux)).abs() < 1e-12);
    let pure_ce = total_loss(LossConfig::new(0.0).unwrap(), &w, &logits, &h, &y).unwrap();
    assert_eq!(pure_ce.loss, ce);
    let pure_aux = total_loss(LossConfig::new(1.0).unwrap(), &w, &logits, &h, &y).unwrap();
    assert_eq!(pure_aux.loss, aux);
}

#[test]
fn gradient_descent_reaches_class_direction() {
    let w = frame8();
    let mut rng = SplitMix64::new(6);
    for y in [0usize, 3, 6] {
        let mut h = random_matrix(&mut rng, 1, 8);
        for _ in 0..5000 {
            let out = cosine_aux(&w, &h, &[y]).unwrap();
            for (v, g) in h.as_mut_slice().iter_mut().zip(out.grad.as_slice()) {
                *v -= 0.2 * g;
            }
        }
        let c = cosine(h.row(0), &w.column(y));
        assert!(c > 1.0 - 1e-6, "class {y}: cos = {c}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn auxiliary_gradient_matches_finite_differences(seed in any::<u64>()) {
        let w = frame8();
        let mut rng = SplitMix64::new(seed);
        let h = random_matrix(&mut rng, 3, 8);
        let y = [rng.below(8), rng.below(8), rng.below(8)];
        let out = cosine_aux(&w, &h, &y).unwrap();
        let step = 1e-6;
        for i in 0..h.as_slice().len() {
            let mut p = h.clone();
            p.as_mut_slice()[i] += step;
            let mut m = h.clone();
            m.as_mut_slice()[i] -= step;
            let numeric = (cosine_aux(&w, &p, &y).unwrap().loss - cosine_aux(&w, &m, &y).unwrap().loss) / (2.0 * step);
            prop_assert!(fd_close(out.grad.as_slice()[i], numeric, 1e-5, 1e-9),
                "{i}: {} vs {numeric}", out.grad.as_slice()[i]);
        }
    }

    #[test]
    fn auxiliary_loss_is_scale_invariant_and_nonnegative(seed in any::<u64>(), scale in 1e-3f64..1e3) {
        let w = frame8();
        let mut rng = SplitMix64::new(seed);
        let h = random_matrix(&mut rng, 5, 8);
        let y: Vec<usize> = (0..5).map(|_| rng.below(8)).collect();
        let a = cosine_aux(&w, &h, &y).unwrap().loss;
        let b = cosine_aux(&w, &h.scale(scale), &y).unwrap().loss;
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn mixture_is_linear_in_alpha(seed in any::<u64>(), alpha in 0.0f64..=1.0) {
        let w = frame8();
        let mut rng = SplitMix64::new(seed);
        let h = random_matrix(&mut rng, 4, 8);
        let logits = h.matmul(&w);
        let y: Vec<usize> = (0..4).map(|_| rng.below(8)).collect();
        let at = |a: f64| total_loss(LossConfig::new(a).unwrap(), &w, &logits, &h, &y).unwrap().loss;
        let (l0, l1) = (at(0.0), at(1.0));
        prop_assert!((at(alpha) - (l0 + alpha * (l1 - l0))).abs() <= 1e-12);
    }
}
