use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::stats::{summarize, SeedSummary};
use super::train::{evaluate_with_crm, load_dataset, load_hierarchy, prepare, run_dir, train_seed, Checkpoint, RunRecord};
use super::{create_dir, write_atomic, write_json, HarnessError};
use crate::frame::{
    exponential_curve, frame_bounds, linear_curve, map_similarity, search_s_min, solve_haframe, FrameBounds, HaFrame,
    MappingCurve, PdCertificate,
};
use crate::metrics::EvalReport;
use crate::synth::Split;

/// Sidecar of a solved frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOutput {
    pub gamma: f64,
    pub s_min: f64,
    pub seed: u64,
    #[serde(rename = "K")]
    pub num_classes: usize,
    pub classes: Vec<String>,
    pub pd_certificate: PdCertificate,
    /// `‖WᵀW − S‖_F / ‖S‖_F`.
    pub reconstruction_error: f64,
    pub reconstruction_ok: bool,
    pub bounds: FrameBounds,
}

/// The K×K matrix `W` as written, so column `j` is `w_j`; 17 significant
/// digits. Class names live in the JSON sidecar.
pub(crate) fn frame_csv(frame: &HaFrame) -> String {
    let w = frame.weights();
    let mut out = String::new();
    for r in 0..w.rows() {
        let row: Vec<String> = w.row(r).iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Hierarchy → distances → `s_min` search → mapping → factorization →
/// bounds. Writes `frame.csv` and `frame.json` into `out` only after every
/// step succeeded.
pub fn cmd_solve(hierarchy: &Path, gamma: f64, seed: u64, out: &Path) -> Result<SolveOutput, HarnessError> {
    let tree = load_hierarchy(hierarchy)?;
    let d = tree.distance_matrix();
    let searched = search_s_min(&d, gamma)?;
    let params = searched.params().expect("searched matrices carry their parameters");
    let s = map_similarity(&d, params);
    let frame = solve_haframe(&s, seed)?;
    let bounds = frame_bounds(&frame)?;
    let output = SolveOutput {
        gamma,
        s_min: params.s_min,
        seed,
        num_classes: frame.num_classes(),
        classes: tree.class_names().iter().map(|s| s.to_string()).collect(),
        pd_certificate: frame.certificate().expect("solved frames are certified"),
        reconstruction_error: frame.reconstruction_error(),
        reconstruction_ok: frame.reconstruction_error() <= crate::frame::RECONSTRUCTION_TOLERANCE,
        bounds,
    };
    let csv = frame_csv(&frame);
    let json = serde_json::to_string_pretty(&output).map_err(|e| HarnessError::Data(e.to_string()))? + "\n";
    create_dir(out)?;
    let csv_path = out.join("frame.csv");
    write_atomic(&csv_path, &csv)?;
    if let Err(e) = write_atomic(&out.join("frame.json"), &json) {
        let _ = std::fs::remove_file(&csv_path);
        return Err(e);
    }
    Ok(output)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub records: Vec<RunRecord>,
    pub summary: SeedSummary,
    pub run_dirs: Vec<PathBuf>,
}

/// Trains every seed into `output_dir/seed_<s>/` and writes the across-seed
/// summary to `output_dir/summary.json`. Synthetic splits are saved under
/// `output_dir/data/` for later evaluation.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutput, HarnessError> {
    let prep = prepare(cfg)?;
    let root = &cfg.output_dir;
    create_dir(root)?;
    write_json(&root.join("config.json"), cfg)?;
    for (name, data) in [("train", &prep.train), ("val", &prep.val), ("test", &prep.test)] {
        write_atomic(&root.join("data").join(format!("{name}.csv")), &data.to_csv())?;
    }
    let mut records = Vec::with_capacity(cfg.seeds.len());
    let mut run_dirs = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let dir = run_dir(root, seed);
        records.push(train_seed(cfg, &prep, seed, Some(&dir))?);
        run_dirs.push(dir);
    }
    let summary = summarize(&records);
    write_json(&root.join("summary.json"), &summary)?;
    Ok(TrainOutput {
        records,
        summary,
        run_dirs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub epoch: usize,
    pub report: EvalReport,
    /// Same data, classes chosen by minimum expected LCA height.
    pub crm: EvalReport,
}

pub fn cmd_eval(checkpoint: &Path, dataset: &Path, hierarchy: &Path) -> Result<EvalOutput, HarnessError> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let tree = load_hierarchy(hierarchy)?;
    let data = load_dataset(dataset, Split::Test)?;
    let k = tree.num_classes();
    if ckpt.state.num_classes() != k || data.num_classes != k {
        return Err(HarnessError::Data(format!(
            "class count mismatch: checkpoint {}, dataset {}, hierarchy {k}",
            ckpt.state.num_classes(),
            data.num_classes
        )));
    }
    if data.dim() != ckpt.state.config.input_dim {
        return Err(HarnessError::Data(format!(
            "dataset has {} features, checkpoint expects {}",
            data.dim(),
            ckpt.state.config.input_dim
        )));
    }
    let (report, crm) = evaluate_with_crm(&ckpt.state, &data, &tree.distance_matrix())?;
    Ok(EvalOutput {
        epoch: ckpt.epoch,
        report,
        crm,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub gamma: f64,
    pub alpha: f64,
    pub seeds: Vec<u64>,
    /// Validation HierDist@1 of each run's selected model.
    pub val_hier_dist_1: Vec<f64>,
    pub mean_val_hier_dist_1: f64,
    pub mean_val_top1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub cells: Vec<SweepCell>,
    /// Index of the cell with the lowest mean validation HierDist@1; the
    /// first one in grid order on ties.
    pub best: usize,
}

impl SweepTable {
    pub fn best_cell(&self) -> &SweepCell {
        &self.cells[self.best]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("gamma,alpha,runs,mean_val_hier_dist_1,mean_val_top1,selected\n");
        for (i, c) in self.cells.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{:.17e},{:.17e},{}",
                c.gamma,
                c.alpha,
                c.seeds.len(),
                c.mean_val_hier_dist_1,
                c.mean_val_top1,
                u8::from(i == self.best)
            );
        }
        out
    }
}

/// Grid search over `(γ, α)`; run `r` of every cell uses seed
/// `seeds[0] + r`. Writes `sweep.csv` and `sweep.json` into the config's
/// output directory.
pub fn cmd_sweep(cfg: &RunConfig, gammas: &[f64], alphas: &[f64], runs_per_cell: usize) -> Result<SweepTable, HarnessError> {
    if gammas.is_empty() || alphas.is_empty() || runs_per_cell == 0 {
        return Err(HarnessError::Config("sweep grid is empty".into()));
    }
    let prep = prepare(cfg)?;
    let seeds: Vec<u64> = (0..runs_per_cell as u64).map(|r| cfg.seeds[0] + r).collect();
    let mut cells = Vec::with_capacity(gammas.len() * alphas.len());
    for &gamma in gammas {
        for &alpha in alphas {
            let cell_cfg = RunConfig {
                gamma,
                alpha,
                ..cfg.clone()
            };
            cell_cfg.validate()?;
            let mut hd = Vec::with_capacity(seeds.len());
            let mut top1 = Vec::with_capacity(seeds.len());
            for &seed in &seeds {
                let rec = train_seed(&cell_cfg, &prep, seed, None)?;
                let val = &rec.epochs[rec.best_epoch].val;
                hd.push(val.hier_dist_at(1).expect("standard reports include k = 1"));
                top1.push(val.top1_accuracy);
            }
            let n = seeds.len() as f64;
            cells.push(SweepCell {
                gamma,
                alpha,
                seeds: seeds.clone(),
                mean_val_hier_dist_1: hd.iter().sum::<f64>() / n,
                mean_val_top1: top1.iter().sum::<f64>() / n,
                val_hier_dist_1: hd,
            });
        }
    }
    let mut best = 0;
    for (i, c) in cells.iter().enumerate() {
        if c.mean_val_hier_dist_1 < cells[best].mean_val_hier_dist_1 {
            best = i;
        }
    }
    let table = SweepTable { cells, best };
    create_dir(&cfg.output_dir)?;
    write_atomic(&cfg.output_dir.join("sweep.csv"), &table.to_csv())?;
    write_json(&cfg.output_dir.join("sweep.json"), &table)?;
    Ok(table)
}

/// Exponential curves at the searched `s_min` for each γ, then the linear
/// reference.
pub fn cmd_curves(hierarchy: &Path, gammas: &[f64]) -> Result<Vec<MappingCurve>, HarnessError> {
    let tree = load_hierarchy(hierarchy)?;
    let d = tree.distance_matrix();
    let mut curves = Vec::with_capacity(gammas.len() + 1);
    for &gamma in gammas {
        let s = search_s_min(&d, gamma)?;
        let params = s.params().expect("searched matrices carry their parameters");
        curves.push(exponential_curve(d.max_depth(), params));
    }
    curves.push(linear_curve(d.max_depth()));
    Ok(curves)
}

pub fn curves_csv(curves: &[MappingCurve]) -> String {
    let mut out = String::from("curve,gamma,s_min,d,s\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for c in curves {
        for &(d, s) in &c.points {
            let _ = writeln!(out, "{},{},{},{d},{s:.17e}", c.label, opt(c.gamma), opt(c.s_min));
        }
    }
    out
}
