use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::nn::{ClassifierMode, LearningRates};
use crate::synth::SplitSizes;

/// Everything needed to reproduce a set of training runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// `child<TAB>parent` hierarchy file.
    pub hierarchy: PathBuf,
    pub classifier: ClassifierMode,
    /// Mapping steepness; ignored outside the frozen-HAFrame mode.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Weight of the cosine auxiliary loss.
    #[serde(default)]
    pub alpha: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: LearningRates,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    /// Backbone hidden widths.
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
    /// One full run per seed.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub data: DataSource,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    /// Generated from the hierarchy; shared by every seed.
    Synth(SynthSpec),
    /// Dataset CSV files.
    Files { train: PathBuf, val: PathBuf, test: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub dim: usize,
    pub sigma_level: Vec<f64>,
    pub sigma_noise: f64,
    pub per_class: SplitSizes,
    pub data_seed: u64,
}

fn default_gamma() -> f64 {
    1.0
}

fn default_epochs() -> usize {
    100
}

fn default_batch_size() -> usize {
    64
}

fn default_lr() -> LearningRates {
    LearningRates {
        body: 0.01,
        classifier: 0.1,
    }
}

fn default_momentum() -> f64 {
    0.9
}

fn default_weight_decay() -> f64 {
    5e-4
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}

fn default_checkpoint_every() -> usize {
    5
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl RunConfig {
    pub fn new(hierarchy: PathBuf, classifier: ClassifierMode, data: DataSource, output_dir: PathBuf) -> Self {
        Self {
            hierarchy,
            classifier,
            gamma: default_gamma(),
            alpha: 0.0,
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            lr: default_lr(),
            momentum: default_momentum(),
            weight_decay: default_weight_decay(),
            hidden: default_hidden(),
            checkpoint_every: default_checkpoint_every(),
            seeds: default_seeds(),
            data,
            output_dir,
        }
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = super::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2 for batch norm".into());
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be positive".into());
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        let lr_ok = |v: f64| v >= 0.0 && v.is_finite();
        if !lr_ok(self.lr.body) || !lr_ok(self.lr.classifier) || !lr_ok(self.momentum) || !lr_ok(self.weight_decay) {
            return bad("learning rates, momentum and weight decay must be finite and non-negative".into());
        }
        if self.classifier == ClassifierMode::Learnable && self.alpha > 0.0 {
            // The auxiliary loss targets a fixed frame geometry.
            return bad("alpha > 0 requires a frozen classifier".into());
        }
        Ok(())
    }

    /// Copy restricted to one seed, as stored in each run directory.
    pub fn for_seed(&self, seed: u64) -> RunConfig {
        RunConfig {
            seeds: vec![seed],
            ..self.clone()
        }
    }
}
