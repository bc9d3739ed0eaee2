//! Desk-scale classifier with a fixed (or learnable) bias-free head.
//!
//! The network is a fully connected ReLU backbone, an affine projection to K
//! channels, and a transformation layer of two residual blocks
//! (`affine → BN → PReLU → affine → BN`, identity skip added after the
//! second BN) followed by a final PReLU. Its output `h` is the penultimate
//! feature; logits are `Wᵀh`. Gradients are derived by hand.

mod layers;
mod model;
mod optim;

pub use layers::{BatchNorm, BatchNormCache, Linear, RunningStats};
pub use model::{
    argmax, predict, BlockCache, ClassifierMode, ForwardCache, Mode, ModelConfig, ModelError,
    ModelState, ParamGroup, ParamKind, ParamMeta, Params, ResidualBlock, TRANSFORM_BLOCKS,
};
pub use optim::{cosine_lr, LearningRates, Sgd};
