#![allow(dead_code)]

use haframe::frame::{search_s_min, solve_haframe, HaFrame};
use haframe::hierarchy::LabelTree;
use haframe::linalg::Matrix;
use haframe::losses::{total_loss, LossConfig};
use haframe::nn::{ClassifierMode, Mode, ModelConfig, ModelState};
use haframe::rng::SplitMix64;

pub const TWO_LEVEL: &str = "ab\troot\ncd\troot\nA\tab\nB\tab\nC\tcd\nD\tcd\n";

pub fn two_level() -> LabelTree {
    LabelTree::parse(TWO_LEVEL).unwrap()
}

pub fn flat(k: usize) -> LabelTree {
    let text: String = (0..k).map(|i| format!("c{i:02}\troot\n")).collect();
    LabelTree::parse(&text).unwrap()
}

/// Balanced binary tree with 2^depth leaves.
pub fn binary_tree_text(depth: usize) -> String {
    let mut text = String::new();
    let mut level = vec!["r".to_string()];
    for _ in 0..depth {
        let mut next = Vec::new();
        for p in &level {
            for side in ["0", "1"] {
                let child = format!("{p}{side}");
                text.push_str(&format!("{child}\t{p}\n"));
                next.push(child);
            }
        }
        level = next;
    }
    text
}

/// Random tree with between 2 and `max_leaves` leaves: leaves are split
/// recursively into 2–4 groups, with an occasional unary link.
pub fn random_tree(rng: &mut SplitMix64, max_leaves: usize) -> LabelTree {
    let n = 2 + rng.below(max_leaves - 1);
    let leaves: Vec<String> = (0..n).map(|i| format!("leaf{i:02}")).collect();
    let mut text = String::new();
    let mut counter = 0usize;
    build(rng, &leaves, "root", &mut text, &mut counter);
    LabelTree::parse(&text).unwrap()
}

fn build(rng: &mut SplitMix64, leaves: &[String], parent: &str, text: &mut String, counter: &mut usize) {
    if leaves.len() == 1 {
        text.push_str(&format!("{}\t{parent}\n", leaves[0]));
        return;
    }
    let mut parent = parent.to_string();
    if rng.next_f64() < 0.1 {
        *counter += 1;
        let chain = format!("u{counter}");
        text.push_str(&format!("{chain}\t{parent}\n"));
        parent = chain;
    }
    let groups = 2 + rng.below(3.min(leaves.len() - 1));
    let mut shuffled = leaves.to_vec();
    rng.shuffle(&mut shuffled);
    // Cut points give `groups` nonempty parts.
    let mut cuts: Vec<usize> = (1..shuffled.len()).collect();
    rng.shuffle(&mut cuts);
    let mut cuts: Vec<usize> = cuts[..groups - 1].to_vec();
    cuts.sort_unstable();
    let mut start = 0;
    for end in cuts.into_iter().chain(std::iter::once(shuffled.len())) {
        let part = &shuffled[start..end];
        if part.len() == 1 {
            text.push_str(&format!("{}\t{parent}\n", part[0]));
        } else {
            *counter += 1;
            let node = format!("n{counter}");
            text.push_str(&format!("{node}\t{parent}\n"));
            build(rng, part, &node, text, counter);
        }
        start = end;
    }
}

pub fn haframe_for(tree: &LabelTree, gamma: f64, seed: u64) -> HaFrame {
    let s = search_s_min(&tree.distance_matrix(), gamma).unwrap();
    solve_haframe(&s, seed).unwrap()
}

pub fn random_matrix(rng: &mut SplitMix64, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.normal())
}

/// Small model with random parameters everywhere, including BN scales,
/// shifts and slopes, so no gradient is trivially zero.
pub fn toy_model(mode: ClassifierMode, classifier: Matrix, seed: u64) -> ModelState {
    let k = classifier.cols();
    let cfg = ModelConfig::new(4, vec![6, 5], k, mode);
    let mut rng = SplitMix64::new(seed);
    let mut state = ModelState::new(cfg, classifier, &mut rng).unwrap();
    for b in &mut state.params.blocks {
        for bn in [&mut b.bn1, &mut b.bn2] {
            bn.gamma.iter_mut().for_each(|g| *g = rng.uniform(0.5, 1.5));
            bn.beta.iter_mut().for_each(|g| *g = rng.uniform(-0.5, 0.5));
        }
    }
    state.params.slopes = vec![0.2, 0.3, 0.1];
    state
}

/// Mixed loss of a training-mode forward pass.
pub fn model_loss(state: &ModelState, x: &Matrix, y: &[usize], alpha: f64) -> f64 {
    let cache = state.forward(x, Mode::Train).unwrap();
    total_loss(LossConfig::new(alpha).unwrap(), state.classifier(), &cache.logits, &cache.features, y)
        .unwrap()
        .loss
}

/// Tolerances of the finite-difference checks: pass if within the
/// absolute floor or the relative bound.
pub fn fd_close(analytic: f64, numeric: f64, rel: f64, abs: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= abs || diff <= rel * analytic.abs().max(numeric.abs())
}

pub struct GradCheck {
    pub checked: usize,
    /// `(tensor, index, analytic, numeric)` for every failure.
    pub failures: Vec<(String, usize, f64, f64)>,
}

/// Central differences of `loss` over every entry of every tensor in
/// `groups`, compared with the analytic gradient from `backward`.
pub fn check_model_gradients(state: &ModelState, x: &Matrix, y: &[usize], alpha: f64, include_classifier: bool) -> GradCheck {
    let cache = state.forward(x, Mode::Train).unwrap();
    let loss = total_loss(LossConfig::new(alpha).unwrap(), state.classifier(), &cache.logits, &cache.features, y).unwrap();
    let grads = state.backward(&cache, &loss.grad_features, &loss.grad_logits).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = grads
        .tensors()
        .into_iter()
        .map(|(m, g)| (m.name.to_string(), g.to_vec()))
        .collect();
    let step = 1e-6;
    let mut out = GradCheck {
        checked: 0,
        failures: Vec::new(),
    };
    for (t, (name, g)) in analytic.iter().enumerate() {
        if name == "classifier" && !include_classifier {
            continue;
        }
        for i in 0..g.len() {
            let mut plus = state.clone();
            plus.params.tensors_mut()[t].1[i] += step;
            let mut minus = state.clone();
            minus.params.tensors_mut()[t].1[i] -= step;
            let numeric = (model_loss(&plus, x, y, alpha) - model_loss(&minus, x, y, alpha)) / (2.0 * step);
            out.checked += 1;
            if !fd_close(g[i], numeric, 1e-4, 1e-6) {
                out.failures.push((name.clone(), i, g[i], numeric));
            }
        }
    }
    out
}
