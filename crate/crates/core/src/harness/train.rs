use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{DataSource, RunConfig};
use super::{read_to_string, write_atomic, write_json, HarnessError};
use crate::frame::{search_s_min, solve_etf, solve_haframe, FrameBounds, HaFrame};
use crate::hierarchy::{DistanceMatrix, LabelTree};
use crate::linalg::Matrix;
use crate::losses::{softmax, total_loss, LossConfig};
use crate::metrics::{
    collapse_csv, collapse_report, conditional_risk, evaluate_standard, CollapsePoint, CollapseTarget, EvalReport,
};
use crate::nn::{ClassifierMode, Mode, ModelConfig, ModelState, Sgd};
use crate::rng::SplitMix64;
use crate::synth::{generate, Dataset, Split, SynthConfig};

pub const CHECKPOINT_FORMAT: u32 = 1;

/// Rows per forward pass during evaluation.
const EVAL_CHUNK: usize = 1024;

/// RNG stream ids derived from the run seed.
const STREAM_INIT: u64 = 10;
const STREAM_SHUFFLE: u64 = 11;

pub fn load_hierarchy(path: &Path) -> Result<LabelTree, HarnessError> {
    Ok(LabelTree::parse(&read_to_string(path)?)?)
}

/// Hierarchy and datasets shared by every seed of a config.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub tree: LabelTree,
    pub distances: DistanceMatrix,
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared, HarnessError> {
    cfg.validate()?;
    let tree = load_hierarchy(&cfg.hierarchy)?;
    let (train, val, test) = match &cfg.data {
        DataSource::Synth(spec) => {
            let data = generate(
                &tree,
                &SynthConfig {
                    dim: spec.dim,
                    sigma_level: spec.sigma_level.clone(),
                    sigma_noise: spec.sigma_noise,
                    per_class: spec.per_class,
                    seed: spec.data_seed,
                },
            )?;
            (data.train, data.val, data.test)
        }
        DataSource::Files { train, val, test } => (
            load_dataset(train, Split::Train)?,
            load_dataset(val, Split::Val)?,
            load_dataset(test, Split::Test)?,
        ),
    };
    let k = tree.num_classes();
    for d in [&train, &val, &test] {
        if d.num_classes != k {
            return Err(HarnessError::Data(format!(
                "{:?} split has {} classes, hierarchy has {k}",
                d.split, d.num_classes
            )));
        }
        if d.dim() != train.dim() {
            return Err(HarnessError::Data("splits disagree on feature dimension".into()));
        }
    }
    Ok(Prepared {
        distances: tree.distance_matrix(),
        tree,
        train,
        val,
        test,
    })
}

pub(crate) fn load_dataset(path: &Path, split: Split) -> Result<Dataset, HarnessError> {
    Dataset::from_csv(&read_to_string(path)?, split)
        .map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))
}

/// Classifier matrix plus the geometry collapse is measured against.
#[derive(Debug, Clone)]
pub struct Head {
    pub classifier: Matrix,
    pub frame: Option<HaFrame>,
    pub collapse_target: Matrix,
    pub target_kind: CollapseTarget,
    /// Class means are centered for ETF-style targets only.
    pub centered: bool,
}

fn etf_target(k: usize) -> Matrix {
    let c = -1.0 / (k as f64 - 1.0);
    Matrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { c })
}

/// The frame is re-randomized per seed through its rotation; its Gram
/// matrix does not depend on the seed.
pub fn build_head(cfg: &RunConfig, d: &DistanceMatrix, seed: u64) -> Result<Head, HarnessError> {
    let k = d.num_classes();
    Ok(match cfg.classifier {
        ClassifierMode::FrozenHaframe => {
            let s = search_s_min(d, cfg.gamma)?;
            let frame = solve_haframe(&s, seed)?;
            Head {
                classifier: frame.weights().clone(),
                collapse_target: frame.target().clone(),
                frame: Some(frame),
                target_kind: CollapseTarget::Haframe,
                centered: false,
            }
        }
        ClassifierMode::FrozenEtf => {
            let frame = solve_etf(k, seed)?;
            Head {
                classifier: frame.weights().clone(),
                collapse_target: etf_target(k),
                frame: Some(frame),
                target_kind: CollapseTarget::Etf,
                centered: true,
            }
        }
        ClassifierMode::Learnable => {
            let mut rng = SplitMix64::derive(seed, STREAM_INIT + 1);
            Head {
                classifier: ModelState::random_classifier(k, &mut rng),
                collapse_target: etf_target(k),
                frame: None,
                target_kind: CollapseTarget::Etf,
                centered: true,
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    /// Number of completed training epochs.
    pub epoch: usize,
    pub seed: u64,
    pub state: ModelState,
    pub optimizer: Sgd,
    /// Batch-shuffling generator, positioned for the next epoch.
    pub rng: SplitMix64,
}

impl Checkpoint {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let ckpt: Checkpoint = serde_json::from_str(&read_to_string(path)?)
            .map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(HarnessError::Data(format!(
                "{}: unsupported checkpoint format {}",
                path.display(),
                ckpt.format
            )));
        }
        Ok(ckpt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Body learning rate used during this epoch; absent for epoch 0.
    pub lr: Option<f64>,
    /// Example-weighted means over the epoch's batches.
    pub train_loss: Option<f64>,
    pub train_cross_entropy: Option<f64>,
    pub train_cosine_aux: Option<f64>,
    pub val: EvalReport,
}

/// Outcome of one seed. Serialized as `report.json`; wall-clock time is
/// kept out of it so that identical runs give identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub classifier: ClassifierMode,
    pub gamma: f64,
    pub alpha: f64,
    pub s_min: Option<f64>,
    pub frame_bounds: Option<FrameBounds>,
    pub epochs: Vec<EpochRecord>,
    pub collapse: Vec<CollapsePoint>,
    /// Relative to the run directory.
    pub checkpoints: Vec<String>,
    pub best_epoch: usize,
    pub best_val_top1: f64,
    pub test: EvalReport,
    /// Test metrics after conditional-risk reranking of the softmax.
    pub test_crm: EvalReport,
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

/// Eval-mode features and logits for every row.
pub(crate) fn infer(state: &ModelState, x: &Matrix) -> Result<(Matrix, Matrix), HarnessError> {
    let (n, k) = (x.rows(), state.num_classes());
    let mut features = Vec::with_capacity(n * k);
    let mut logits = Vec::with_capacity(n * k);
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let rows: Vec<usize> = (start..end).collect();
        let chunk = Matrix::from_fn(rows.len(), x.cols(), |r, j| x[(rows[r], j)]);
        let cache = state.forward(&chunk, Mode::Eval)?;
        features.extend_from_slice(cache.features.as_slice());
        logits.extend_from_slice(cache.logits.as_slice());
        start = end;
    }
    Ok((Matrix::from_vec(n, k, features), Matrix::from_vec(n, k, logits)))
}

/// Standard report plus the conditional-risk reranked report.
pub(crate) fn evaluate_with_crm(
    state: &ModelState,
    data: &Dataset,
    d: &DistanceMatrix,
) -> Result<(EvalReport, EvalReport), HarnessError> {
    let (_, logits) = infer(state, &data.features)?;
    let report = evaluate_standard(&logits, &data.labels, d)?;
    let risk = conditional_risk(&softmax(&logits), d)?;
    let crm = evaluate_standard(&risk.scale(-1.0), &data.labels, d)?;
    Ok((report, crm))
}

fn checkpoint_name(epoch: usize) -> String {
    format!("checkpoints/epoch_{epoch:03}.json")
}

/// Trains one seed. With `out`, writes the run directory: `config.json`,
/// `frame.csv` (frozen heads), `checkpoints/`, `collapse.csv`,
/// `report.json` and `timing.json`.
pub fn train_seed(cfg: &RunConfig, prep: &Prepared, seed: u64, out: Option<&Path>) -> Result<RunRecord, HarnessError> {
    let started = Instant::now();
    let d = &prep.distances;
    let k = d.num_classes();
    let head = build_head(cfg, d, seed)?;
    let model_cfg = ModelConfig::new(prep.train.dim(), cfg.hidden.clone(), k, cfg.classifier);
    let mut init_rng = SplitMix64::derive(seed, STREAM_INIT);
    let mut state = ModelState::new(model_cfg, head.classifier.clone(), &mut init_rng)?;
    let mut sgd = Sgd::new(&state, cfg.momentum, cfg.weight_decay);
    let mut shuffle_rng = SplitMix64::derive(seed, STREAM_SHUFFLE);
    let loss_cfg = LossConfig::new(cfg.alpha)?;

    if let Some(dir) = out {
        write_json(&dir.join("config.json"), &cfg.for_seed(seed))?;
        if let Some(frame) = &head.frame {
            write_atomic(&dir.join("frame.csv"), &super::commands::frame_csv(frame))?;
        }
    }

    let mut epochs = Vec::with_capacity(cfg.epochs + 1);
    let mut collapse = Vec::new();
    let mut checkpoints = Vec::new();

    let (val0, _) = evaluate_with_crm(&state, &prep.val, d)?;
    let mut best = (0usize, val0.top1_accuracy, state.clone());
    epochs.push(EpochRecord {
        epoch: 0,
        lr: None,
        train_loss: None,
        train_cross_entropy: None,
        train_cosine_aux: None,
        val: val0,
    });

    let save_checkpoint = |epoch: usize, name: &str, state: &ModelState, sgd: &Sgd, rng: &SplitMix64| {
        match out {
            Some(dir) => write_json(
                &dir.join(name),
                &Checkpoint {
                    format: CHECKPOINT_FORMAT,
                    epoch,
                    seed,
                    state: state.clone(),
                    optimizer: sgd.clone(),
                    rng: rng.clone(),
                },
            ),
            None => Ok(()),
        }
    };
    let checkpoint_at = |epoch: usize,
                         state: &ModelState,
                         sgd: &Sgd,
                         rng: &SplitMix64,
                         collapse: &mut Vec<CollapsePoint>,
                         checkpoints: &mut Vec<String>|
     -> Result<(), HarnessError> {
        let (features, _) = infer(state, &prep.train.features)?;
        let report = collapse_report(
            state.classifier(),
            &features,
            &prep.train.labels,
            &head.collapse_target,
            head.target_kind,
            head.centered,
        )?;
        collapse.push(CollapsePoint { epoch, report });
        let name = checkpoint_name(epoch);
        save_checkpoint(epoch, &name, state, sgd, rng)?;
        checkpoints.push(name);
        Ok(())
    };

    checkpoint_at(0, &state, &sgd, &shuffle_rng, &mut collapse, &mut checkpoints)?;
    save_checkpoint(0, "checkpoints/best.json", &state, &sgd, &shuffle_rng)?;

    let n = prep.train.len();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=cfg.epochs {
        let lrs = cfg.lr.annealed(epoch - 1, cfg.epochs);
        shuffle_rng.shuffle(&mut order);
        let (mut sum_loss, mut sum_ce, mut sum_aux, mut seen) = (0.0, 0.0, 0.0, 0usize);
        // A trailing batch of one cannot be batch-normalized and is skipped.
        for batch in order.chunks(cfg.batch_size).filter(|b| b.len() >= 2) {
            let (x, y) = prep.train.subset(batch);
            let cache = state.forward(&x, Mode::Train)?;
            let loss = total_loss(loss_cfg, state.classifier(), &cache.logits, &cache.features, &y)?;
            if !loss.loss.is_finite() {
                return Err(HarnessError::NonFiniteLoss { epoch, seed });
            }
            let grads = state.backward(&cache, &loss.grad_features, &loss.grad_logits)?;
            state.update_running_stats(&cache)?;
            sgd.step(&mut state, &grads, lrs)?;
            let b = batch.len() as f64;
            sum_loss += loss.loss * b;
            sum_ce += loss.cross_entropy * b;
            sum_aux += loss.cosine_aux * b;
            seen += batch.len();
        }
        let seen_f = seen.max(1) as f64;
        let (val, _) = evaluate_with_crm(&state, &prep.val, d)?;
        if val.top1_accuracy > best.1 {
            best = (epoch, val.top1_accuracy, state.clone());
            save_checkpoint(epoch, "checkpoints/best.json", &state, &sgd, &shuffle_rng)?;
        }
        epochs.push(EpochRecord {
            epoch,
            lr: Some(lrs.body),
            train_loss: Some(sum_loss / seen_f),
            train_cross_entropy: Some(sum_ce / seen_f),
            train_cosine_aux: Some(sum_aux / seen_f),
            val,
        });
        if epoch % cfg.checkpoint_every == 0 {
            checkpoint_at(epoch, &state, &sgd, &shuffle_rng, &mut collapse, &mut checkpoints)?;
        }
    }
    if out.is_some() {
        checkpoints.push("checkpoints/best.json".into());
    }

    let (best_epoch, best_val_top1, best_state) = best;
    let (test, test_crm) = evaluate_with_crm(&best_state, &prep.test, d)?;
    let record = RunRecord {
        seed,
        classifier: cfg.classifier,
        gamma: cfg.gamma,
        alpha: cfg.alpha,
        s_min: head.frame.as_ref().and_then(|f| f.params()).map(|p| p.s_min),
        frame_bounds: head.frame.as_ref().map(|f| f.bounds()),
        epochs,
        collapse,
        checkpoints,
        best_epoch,
        best_val_top1,
        test,
        test_crm,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    if let Some(dir) = out {
        write_atomic(&dir.join("collapse.csv"), &collapse_csv(&record.collapse))?;
        write_json(&dir.join("report.json"), &record)?;
        write_json(
            &dir.join("timing.json"),
            &serde_json::json!({ "seed": seed, "wall_clock_seconds": record.wall_clock_seconds }),
        )?;
    }
    Ok(record)
}

pub(crate) fn run_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed_{seed}"))
}
