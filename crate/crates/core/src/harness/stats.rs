use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::RunRecord;

/// Two-sided quantile `t_{1−(1−level)/2, dof}`.
pub fn student_t_quantile(level: f64, dof: usize) -> f64 {
    let t = StudentsT::new(0.0, 1.0, dof as f64).expect("positive degrees of freedom");
    t.inverse_cdf(0.5 + level / 2.0)
}

/// Mean and 95% confidence half-width across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub values: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; `None` for a single run.
    pub std: Option<f64>,
    /// `t · std / sqrt(n)` with `n − 1` degrees of freedom.
    pub ci95: Option<f64>,
}

impl MetricSummary {
    pub fn from_values(values: Vec<f64>) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let (std, ci95) = if n >= 2 {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
            let sd = var.sqrt();
            (Some(sd), Some(student_t_quantile(0.95, n - 1) * sd / (n as f64).sqrt()))
        } else {
            (None, None)
        };
        Self {
            values,
            mean,
            std,
            ci95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seeds: Vec<u64>,
    /// Test-set metrics keyed by name; severity skips runs without mistakes.
    pub test: BTreeMap<String, MetricSummary>,
}

pub fn summarize(records: &[RunRecord]) -> SeedSummary {
    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records {
        columns
            .entry("top1_accuracy".into())
            .or_default()
            .push(r.test.top1_accuracy);
        if let Some(s) = r.test.mistake_severity {
            columns.entry("mistake_severity".into()).or_default().push(s);
        }
        for h in &r.test.hier_dist {
            columns.entry(format!("hier_dist@{}", h.k)).or_default().push(h.value);
        }
    }
    SeedSummary {
        seeds: records.iter().map(|r| r.seed).collect(),
        test: columns
            .into_iter()
            .map(|(k, v)| (k, MetricSummary::from_values(v)))
            .collect(),
    }
}
