use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::layers::{
    prelu, prelu_backward, relu, relu_backward, BatchNorm, BatchNormCache, Linear, RunningStats,
};
use crate::linalg::Matrix;
use crate::rng::SplitMix64;

/// Number of residual blocks in the transformation layer. Each block has two
/// K→K affine stages, so the layer has four.
pub const TRANSFORM_BLOCKS: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("batch norm needs at least 2 examples in training mode, got {0}")]
    BatchTooSmall(usize),
    #[error("forward cache is stale: computed at parameter version {cache}, model is at {model}")]
    StaleCache { cache: u64, model: u64 },
    #[error("backward needs a training-mode forward cache")]
    EvalCache,
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassifierMode {
    /// Classifier fixed to a hierarchy-aware frame.
    FrozenHaframe,
    /// Classifier fixed to a simplex ETF.
    FrozenEtf,
    /// Ordinary trainable bias-free linear classifier.
    Learnable,
}

impl ClassifierMode {
    pub fn is_frozen(self) -> bool {
        !matches!(self, ClassifierMode::Learnable)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// Widths of the fully connected backbone's hidden layers.
    pub hidden: Vec<usize>,
    pub num_classes: usize,
    pub classifier: ClassifierMode,
    #[serde(default = "default_bn_eps")]
    pub bn_eps: f64,
    #[serde(default = "default_bn_momentum")]
    pub bn_momentum: f64,
    #[serde(default = "default_prelu_slope")]
    pub prelu_init: f64,
}

fn default_bn_eps() -> f64 {
    1e-5
}

fn default_bn_momentum() -> f64 {
    0.1
}

fn default_prelu_slope() -> f64 {
    0.25
}

impl ModelConfig {
    pub fn new(input_dim: usize, hidden: Vec<usize>, num_classes: usize, classifier: ClassifierMode) -> Self {
        Self {
            input_dim,
            hidden,
            num_classes,
            classifier,
            bn_eps: default_bn_eps(),
            bn_momentum: default_bn_momentum(),
            prelu_init: default_prelu_slope(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim == 0 || self.num_classes == 0 || self.hidden.contains(&0) {
            return Err(ModelError::InvalidConfig("all widths must be >= 1".into()));
        }
        if self.bn_eps.is_nan() || self.bn_eps <= 0.0 || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(ModelError::InvalidConfig("bad batch-norm settings".into()));
        }
        Ok(())
    }

    /// Number of parametric rectifiers: one inside each block plus the final one.
    pub fn num_slopes(&self) -> usize {
        TRANSFORM_BLOCKS + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualBlock {
    pub fc1: Linear,
    pub bn1: BatchNorm,
    pub fc2: Linear,
    pub bn2: BatchNorm,
}

/// Every parameter of the model, trainable or not. Also used as the
/// gradient and momentum buffer layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub backbone: Vec<Linear>,
    /// Reduction of backbone features to K channels.
    pub projection: Linear,
    pub blocks: Vec<ResidualBlock>,
    /// Negative slopes: one per block rectifier, then the final rectifier.
    pub slopes: Vec<f64>,
    /// K×K bias-free classifier, column `i` is the class vector `w_i`.
    pub classifier: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    /// Backbone, projection and transformation layer.
    Body,
    Classifier,
}

/// What kind of tensor a slice holds; weight decay only applies to affine
/// weight matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamMeta {
    pub name: &'static str,
    pub group: ParamGroup,
    pub kind: ParamKind,
}

impl Params {
    pub fn zeros_like(other: &Params) -> Params {
        Params {
            backbone: other
                .backbone
                .iter()
                .map(|l| Linear::zeros(l.in_dim(), l.out_dim()))
                .collect(),
            projection: Linear::zeros(other.projection.in_dim(), other.projection.out_dim()),
            blocks: other
                .blocks
                .iter()
                .map(|b| ResidualBlock {
                    fc1: Linear::zeros(b.fc1.in_dim(), b.fc1.out_dim()),
                    bn1: BatchNorm::zeros(b.bn1.gamma.len()),
                    fc2: Linear::zeros(b.fc2.in_dim(), b.fc2.out_dim()),
                    bn2: BatchNorm::zeros(b.bn2.gamma.len()),
                })
                .collect(),
            slopes: vec![0.0; other.slopes.len()],
            classifier: Matrix::zeros(other.classifier.rows(), other.classifier.cols()),
        }
    }

    /// All tensors as flat slices, in a fixed order.
    pub fn tensors(&self) -> Vec<(ParamMeta, &[f64])> {
        use ParamGroup::*;
        use ParamKind::*;
        let meta = |name, group, kind| ParamMeta { name, group, kind };
        let mut out: Vec<(ParamMeta, &[f64])> = Vec::new();
        for l in &self.backbone {
            out.push((meta("backbone.weight", Body, Weight), l.weight.as_slice()));
            out.push((meta("backbone.bias", Body, Other), &l.bias));
        }
        out.push((meta("projection.weight", Body, Weight), self.projection.weight.as_slice()));
        out.push((meta("projection.bias", Body, Other), &self.projection.bias));
        for b in &self.blocks {
            out.push((meta("block.fc1.weight", Body, Weight), b.fc1.weight.as_slice()));
            out.push((meta("block.fc1.bias", Body, Other), &b.fc1.bias));
            out.push((meta("block.bn1.gamma", Body, Other), &b.bn1.gamma));
            out.push((meta("block.bn1.beta", Body, Other), &b.bn1.beta));
            out.push((meta("block.fc2.weight", Body, Weight), b.fc2.weight.as_slice()));
            out.push((meta("block.fc2.bias", Body, Other), &b.fc2.bias));
            out.push((meta("block.bn2.gamma", Body, Other), &b.bn2.gamma));
            out.push((meta("block.bn2.beta", Body, Other), &b.bn2.beta));
        }
        out.push((meta("slopes", Body, Other), &self.slopes));
        out.push((meta("classifier", Classifier, Weight), self.classifier.as_slice()));
        out
    }

    /// Mutable counterpart of [`Params::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<(ParamMeta, &mut [f64])> {
        use ParamGroup::*;
        use ParamKind::*;
        let meta = |name, group, kind| ParamMeta { name, group, kind };
        let mut out: Vec<(ParamMeta, &mut [f64])> = Vec::new();
        for l in &mut self.backbone {
            out.push((meta("backbone.weight", Body, Weight), l.weight.as_mut_slice()));
            out.push((meta("backbone.bias", Body, Other), &mut l.bias));
        }
        out.push((meta("projection.weight", Body, Weight), self.projection.weight.as_mut_slice()));
        out.push((meta("projection.bias", Body, Other), &mut self.projection.bias));
        for b in &mut self.blocks {
            out.push((meta("block.fc1.weight", Body, Weight), b.fc1.weight.as_mut_slice()));
            out.push((meta("block.fc1.bias", Body, Other), &mut b.fc1.bias));
            out.push((meta("block.bn1.gamma", Body, Other), &mut b.bn1.gamma));
            out.push((meta("block.bn1.beta", Body, Other), &mut b.bn1.beta));
            out.push((meta("block.fc2.weight", Body, Weight), b.fc2.weight.as_mut_slice()));
            out.push((meta("block.fc2.bias", Body, Other), &mut b.fc2.bias));
            out.push((meta("block.bn2.gamma", Body, Other), &mut b.bn2.gamma));
            out.push((meta("block.bn2.beta", Body, Other), &mut b.bn2.beta));
        }
        out.push((meta("slopes", Body, Other), &mut self.slopes));
        out.push((meta("classifier", Classifier, Weight), self.classifier.as_mut_slice()));
        out
    }
}

/// Model parameters plus batch-norm running statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub config: ModelConfig,
    pub params: Params,
    /// Two entries per residual block.
    pub running: Vec<RunningStats>,
    /// Bumped on every optimizer step; forward caches record it.
    pub version: u64,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub mode: Mode,
    pub version: u64,
    pub input: Matrix,
    /// Backbone pre-activations and post-ReLU activations per hidden layer.
    pub hidden_pre: Vec<Matrix>,
    pub hidden_post: Vec<Matrix>,
    pub projected: Matrix,
    pub blocks: Vec<BlockCache>,
    /// Output of the last residual block, before the final rectifier.
    pub pre_final: Matrix,
    /// Penultimate features, B×K.
    pub features: Matrix,
    /// `Wᵀh` per row, B×K.
    pub logits: Matrix,
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    pub input: Matrix,
    pub bn1: Option<BatchNormCache>,
    /// Batch-norm output feeding the block's rectifier.
    pub pre_act: Matrix,
    pub act: Matrix,
    pub bn2: Option<BatchNormCache>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }
}

impl ModelState {
    /// Fresh model with a given K×K classifier (frozen frame or initial
    /// learnable weights).
    pub fn new(config: ModelConfig, classifier: Matrix, rng: &mut SplitMix64) -> Result<Self, ModelError> {
        config.validate()?;
        let k = config.num_classes;
        if classifier.shape() != (k, k) {
            return Err(ModelError::DimensionMismatch(format!(
                "classifier is {:?}, expected {k}x{k}",
                classifier.shape()
            )));
        }
        let mut backbone = Vec::with_capacity(config.hidden.len());
        let mut width = config.input_dim;
        for &h in &config.hidden {
            backbone.push(Linear::init(width, h, rng));
            width = h;
        }
        let projection = Linear::init(width, k, rng);
        let blocks = (0..TRANSFORM_BLOCKS)
            .map(|_| ResidualBlock {
                fc1: Linear::init(k, k, rng),
                bn1: BatchNorm::new(k),
                fc2: Linear::init(k, k, rng),
                bn2: BatchNorm::new(k),
            })
            .collect();
        let slopes = vec![config.prelu_init; config.num_slopes()];
        let running = (0..2 * TRANSFORM_BLOCKS).map(|_| RunningStats::new(k)).collect();
        Ok(Self {
            config,
            params: Params {
                backbone,
                projection,
                blocks,
                slopes,
                classifier,
            },
            running,
            version: 0,
        })
    }

    /// Learnable-classifier initialization: uniform in `±1/sqrt(K)`.
    pub fn random_classifier(k: usize, rng: &mut SplitMix64) -> Matrix {
        let bound = 1.0 / (k as f64).sqrt();
        Matrix::from_fn(k, k, |_, _| rng.uniform(-bound, bound))
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn classifier(&self) -> &Matrix {
        &self.params.classifier
    }

    pub fn forward(&self, batch: &Matrix, mode: Mode) -> Result<ForwardCache, ModelError> {
        let b = batch.rows();
        if b == 0 {
            return Err(ModelError::EmptyBatch);
        }
        if batch.cols() != self.config.input_dim {
            return Err(ModelError::DimensionMismatch(format!(
                "batch has {} features, model expects {}",
                batch.cols(),
                self.config.input_dim
            )));
        }
        if mode == Mode::Train && b < 2 {
            return Err(ModelError::BatchTooSmall(b));
        }
        let eps = self.config.bn_eps;
        let p = &self.params;

        let mut hidden_pre = Vec::with_capacity(p.backbone.len());
        let mut hidden_post = Vec::with_capacity(p.backbone.len());
        let mut a = batch.clone();
        for layer in &p.backbone {
            let z = layer.forward(&a);
            a = relu(&z);
            hidden_pre.push(z);
            hidden_post.push(a.clone());
        }
        let projected = p.projection.forward(&a);

        let mut blocks = Vec::with_capacity(p.blocks.len());
        let mut x = projected.clone();
        for (bi, block) in p.blocks.iter().enumerate() {
            let u1 = block.fc1.forward(&x);
            let (pre_act, bn1) = match mode {
                Mode::Train => {
                    let (y, c) = block.bn1.forward_train(&u1, eps);
                    (y, Some(c))
                }
                Mode::Eval => (block.bn1.forward_eval(&u1, &self.running[2 * bi], eps), None),
            };
            let act = prelu(&pre_act, p.slopes[bi]);
            let u2 = block.fc2.forward(&act);
            let (n2, bn2) = match mode {
                Mode::Train => {
                    let (y, c) = block.bn2.forward_train(&u2, eps);
                    (y, Some(c))
                }
                Mode::Eval => (block.bn2.forward_eval(&u2, &self.running[2 * bi + 1], eps), None),
            };
            let mut out = n2;
            for (o, s) in out.as_mut_slice().iter_mut().zip(x.as_slice()) {
                *o += s;
            }
            blocks.push(BlockCache {
                input: x,
                bn1,
                pre_act,
                act,
                bn2,
            });
            x = out;
        }
        let final_slope = p.slopes[p.blocks.len()];
        let features = prelu(&x, final_slope);
        let logits = features.matmul(&p.classifier);

        Ok(ForwardCache {
            mode,
            version: self.version,
            input: batch.clone(),
            hidden_pre,
            hidden_post,
            projected,
            blocks,
            pre_final: x,
            features,
            logits,
        })
    }

    /// Folds a training batch's statistics into the running estimates.
    pub fn update_running_stats(&mut self, cache: &ForwardCache) -> Result<(), ModelError> {
        if cache.mode != Mode::Train {
            return Err(ModelError::EvalCache);
        }
        let momentum = self.config.bn_momentum;
        for (bi, block) in cache.blocks.iter().enumerate() {
            let bn1 = block.bn1.as_ref().ok_or(ModelError::EvalCache)?;
            let bn2 = block.bn2.as_ref().ok_or(ModelError::EvalCache)?;
            self.running[2 * bi].update(bn1, momentum);
            self.running[2 * bi + 1].update(bn2, momentum);
        }
        Ok(())
    }

    /// Reverse-mode pass given `∂L/∂h` and `∂L/∂logits`. The classifier
    /// gradient stays zero in frozen modes.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_features: &Matrix,
        grad_logits: &Matrix,
    ) -> Result<Params, ModelError> {
        if cache.mode != Mode::Train {
            return Err(ModelError::EvalCache);
        }
        if cache.version != self.version {
            return Err(ModelError::StaleCache {
                cache: cache.version,
                model: self.version,
            });
        }
        let shape = cache.features.shape();
        if grad_features.shape() != shape || grad_logits.shape() != shape {
            return Err(ModelError::DimensionMismatch(format!(
                "loss gradients must be {shape:?}"
            )));
        }
        let p = &self.params;
        let mut grads = Params::zeros_like(p);

        if !self.config.classifier.is_frozen() {
            grads.classifier = cache.features.t_matmul(grad_logits);
        }
        // dh = ∂L/∂h + ∂L/∂logits · Wᵀ
        let mut dh = grad_logits.matmul_t(&p.classifier);
        for (d, g) in dh.as_mut_slice().iter_mut().zip(grad_features.as_slice()) {
            *d += g;
        }

        let nb = p.blocks.len();
        let (mut dx, dslope) = prelu_backward(&cache.pre_final, p.slopes[nb], &dh);
        grads.slopes[nb] = dslope;

        for bi in (0..nb).rev() {
            let block = &p.blocks[bi];
            let bc = &cache.blocks[bi];
            let g = &mut grads.blocks[bi];
            let bn2 = bc.bn2.as_ref().ok_or(ModelError::EvalCache)?;
            let bn1 = bc.bn1.as_ref().ok_or(ModelError::EvalCache)?;
            // Residual: out = x + bn2(fc2(prelu(bn1(fc1(x)))))
            let d_u2 = block.bn2.backward(bn2, &dx, &mut g.bn2);
            let d_act = block.fc2.backward(&bc.act, &d_u2, &mut g.fc2);
            let (d_pre, dslope) = prelu_backward(&bc.pre_act, p.slopes[bi], &d_act);
            grads.slopes[bi] = dslope;
            let d_u1 = block.bn1.backward(bn1, &d_pre, &mut g.bn1);
            let d_in = block.fc1.backward(&bc.input, &d_u1, &mut g.fc1);
            for (d, r) in dx.as_mut_slice().iter_mut().zip(d_in.as_slice()) {
                *d += r;
            }
        }

        let proj_in = cache.hidden_post.last().unwrap_or(&cache.input);
        let mut da = p.projection.backward(proj_in, &dx, &mut grads.projection);
        for li in (0..p.backbone.len()).rev() {
            let dz = relu_backward(&cache.hidden_pre[li], &da);
            let layer_in = if li == 0 {
                &cache.input
            } else {
                &cache.hidden_post[li - 1]
            };
            da = p.backbone[li].backward(layer_in, &dz, &mut grads.backbone[li]);
        }
        Ok(grads)
    }
}

/// Row-wise argmax; ties go to the lowest index.
pub fn predict(logits: &Matrix) -> Vec<usize> {
    (0..logits.rows()).map(|r| argmax(logits.row(r))).collect()
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
