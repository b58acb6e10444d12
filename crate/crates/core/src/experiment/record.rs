use serde::{Deserialize, Serialize};

use super::config::{Command, ExperimentConfig};
use crate::activations::ActivationKind;
use crate::attacks::{AccuracyPoint, SurrogatePoint};
use crate::diagnostics::{LogitStats, LossSurfaceGrid, OperatorNormTable};
use crate::nn::TrainReport;
use crate::theoremlab::{CheckResult, TheoremSuiteReport};

pub const TOOL: &str = "blflab";

/// The identity-hook comparison model trained alongside a bounded one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwinRun {
    pub hook: ActivationKind,
    pub train: TrainReport,
    pub clean_accuracy: f64,
    pub logit_stats: LogitStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRun {
    pub repeat: usize,
    pub seed: u64,
    pub hook: ActivationKind,
    pub gamma: f64,
    /// Absent when the model came from a checkpoint.
    pub train: Option<TrainReport>,
    pub clean_accuracy: f64,
    pub robust_accuracy: Vec<AccuracyPoint>,
    pub surrogate: Vec<SurrogatePoint>,
    /// Measured on the clean test split.
    pub logit_stats: LogitStats,
    pub operator_norms: OperatorNormTable,
    pub twin: Option<TwinRun>,
}

/// One grid point of the logit-norm versus robustness sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub index: usize,
    pub family: String,
    /// α, λ or γ; absent for the baseline.
    pub value: Option<f64>,
    pub clean_accuracy: Option<f64>,
    pub robust_accuracy: Option<f64>,
    pub mean_logit_l2: Option<f64>,
    pub mean_logit_linf: Option<f64>,
    pub mean_prelogit_l2: Option<f64>,
    pub mean_prelogit_linf: Option<f64>,
    pub error: Option<String>,
}

/// Mean accuracy across repeats per ε.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub epsilon: f64,
    pub accuracy: f64,
    /// Binomial standard error for one run, otherwise the standard error of the mean across runs.
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub tool: String,
    pub version: String,
    pub command: Command,
    /// Effective config after overrides; rerunning it reproduces this record.
    pub config: ExperimentConfig,
    pub passed: bool,
    pub aborted: bool,
    pub checks: Vec<CheckResult>,
    pub theorems: Option<TheoremSuiteReport>,
    pub runs: Vec<ModelRun>,
    pub accuracy: Vec<AccuracySummary>,
    pub sweep: Vec<SweepRow>,
    pub surfaces: Vec<LossSurfaceGrid>,
    pub wall_clock_seconds: f64,
}

impl RunRecord {
    pub fn new(command: Command, config: ExperimentConfig) -> Self {
        Self {
            tool: TOOL.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command,
            config,
            passed: true,
            aborted: false,
            checks: Vec::new(),
            theorems: None,
            runs: Vec::new(),
            accuracy: Vec::new(),
            sweep: Vec::new(),
            surfaces: Vec::new(),
            wall_clock_seconds: 0.0,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("records serialize");
        s.push('\n');
        s
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const ACCURACY_CSV_HEADER: &str = "epsilon,accuracy,stderr";
pub const SCATTER_CSV_HEADER: &str = "index,family,value,clean_accuracy,robust_accuracy,mean_logit_l2,mean_logit_linf,mean_prelogit_l2,mean_prelogit_linf,error";

pub fn accuracy_csv(points: &[AccuracySummary]) -> String {
    let mut out = format!("{ACCURACY_CSV_HEADER}\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.epsilon, p.accuracy, p.stderr));
    }
    out
}

pub fn scatter_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SCATTER_CSV_HEADER}\n");
    for r in rows {
        let error = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.index,
            r.family,
            opt(r.value),
            opt(r.clean_accuracy),
            opt(r.robust_accuracy),
            opt(r.mean_logit_l2),
            opt(r.mean_logit_linf),
            opt(r.mean_prelogit_l2),
            opt(r.mean_prelogit_linf),
            error
        ));
    }
    out
}

/// Per-ε summary over repeats.
pub fn summarize(runs: &[Vec<AccuracyPoint>]) -> Vec<AccuracySummary> {
    let Some(first) = runs.first() else { return Vec::new() };
    if runs.len() == 1 {
        return first.iter().map(|p| AccuracySummary { epsilon: p.epsilon, accuracy: p.accuracy, stderr: p.stderr }).collect();
    }
    let r = runs.len() as f64;
    (0..first.len())
        .map(|k| {
            let accs: Vec<f64> = runs.iter().map(|run| run[k].accuracy).collect();
            let mean = accs.iter().sum::<f64>() / r;
            let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (r - 1.0);
            AccuracySummary { epsilon: first[k].epsilon, accuracy: mean, stderr: (var / r).sqrt() }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(epsilon: f64, accuracy: f64) -> AccuracyPoint {
        AccuracyPoint { epsilon, accuracy, stderr: 0.01, correct: 0, total: 100 }
    }

    #[test]
    fn summary_over_repeats() {
        let one = summarize(&[vec![point(0.0, 0.9)]]);
        assert_eq!(one[0].stderr, 0.01);
        let two = summarize(&[vec![point(0.1, 0.8)], vec![point(0.1, 0.6)]]);
        assert!((two[0].accuracy - 0.7).abs() < 1e-15);
        assert!((two[0].stderr - 0.1).abs() < 1e-15);
        assert!(summarize(&[]).is_empty());
    }

    #[test]
    fn csv_layouts() {
        let csv = accuracy_csv(&summarize(&[vec![point(0.0, 1.0), point(0.1, 0.5)]]));
        assert_eq!(csv.lines().next().unwrap(), "epsilon,accuracy,stderr");
        assert_eq!(csv.lines().count(), 3);
        let row = SweepRow {
            index: 0,
            family: "blf".into(),
            value: Some(0.5),
            clean_accuracy: None,
            robust_accuracy: None,
            mean_logit_l2: None,
            mean_logit_linf: None,
            mean_prelogit_l2: None,
            mean_prelogit_linf: None,
            error: Some("bad, worse".into()),
        };
        let csv = scatter_csv(&[row]);
        let line = csv.lines().nth(1).unwrap();
        assert_eq!(line.split(',').count(), SCATTER_CSV_HEADER.split(',').count());
    }
}
