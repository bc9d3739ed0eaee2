use serde::{Deserialize, Serialize};

use super::model::{ModelError, ModelState, ParamGroup, ParamKind, Params};

/// Cosine annealing from `lr0` towards 0 over `total_epochs`.
pub fn cosine_lr(epoch: usize, total_epochs: usize, lr0: f64) -> f64 {
    if total_epochs == 0 {
        return lr0;
    }
    lr0 * (1.0 + (std::f64::consts::PI * epoch as f64 / total_epochs as f64).cos()) / 2.0
}

/// Per-group learning rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    /// Backbone, projection and transformation layer.
    pub body: f64,
    /// Used only when the classifier is learnable.
    pub classifier: f64,
}

impl LearningRates {
    pub fn uniform(lr: f64) -> Self {
        Self {
            body: lr,
            classifier: lr,
        }
    }

    pub fn annealed(&self, epoch: usize, total_epochs: usize) -> Self {
        Self {
            body: cosine_lr(epoch, total_epochs, self.body),
            classifier: cosine_lr(epoch, total_epochs, self.classifier),
        }
    }
}

/// SGD with heavy-ball momentum and L2 weight decay on affine weights:
/// `v ← μv + (g + λp)`, `p ← p − lr·v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Params,
}

impl Sgd {
    pub fn new(state: &ModelState, momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: Params::zeros_like(&state.params),
        }
    }

    /// One update of every trainable tensor. A frozen classifier is never
    /// touched. Non-finite gradients abort the step before anything is
    /// modified.
    pub fn step(&mut self, state: &mut ModelState, grads: &Params, lrs: LearningRates) -> Result<(), ModelError> {
        let frozen = state.config.classifier.is_frozen();
        for (meta, g) in grads.tensors() {
            if frozen && meta.group == ParamGroup::Classifier {
                continue;
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFiniteGradient(meta.name.to_string()));
            }
        }
        let params = state.params.tensors_mut();
        let velocity = self.velocity.tensors_mut();
        let grads = grads.tensors();
        for (((meta, p), (_, v)), (_, g)) in params.into_iter().zip(velocity).zip(grads) {
            let lr = match meta.group {
                ParamGroup::Classifier if frozen => continue,
                ParamGroup::Classifier => lrs.classifier,
                ParamGroup::Body => lrs.body,
            };
            let decay = if meta.kind == ParamKind::Weight {
                self.weight_decay
            } else {
                0.0
            };
            for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                *v = self.momentum * *v + g + decay * *p;
                *p -= lr * *v;
            }
        }
        state.version += 1;
        Ok(())
    }
}
