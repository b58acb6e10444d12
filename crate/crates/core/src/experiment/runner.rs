use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde_json::json;

use super::config::{Arch, Command, DataSource, ExperimentConfig, IdxSpec};
use super::record::{accuracy_csv, scatter_csv, summarize, ModelRun, RunRecord, SweepRow, TwinRun};
use crate::activations::ActivationKind;
use crate::attacks::{clean_accuracy, evaluate_robust_accuracy, evaluate_surrogate, AttackConfig, AttackKind};
use crate::data::{load_idx, synth_blobs, Dataset};
use crate::diagnostics::{logit_stats, loss_surface, operator_norms};
use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::nn::{load_checkpoint, train, write_checkpoint, GammaMode, Model, TrainConfig};
use crate::theoremlab::{run_theorem_suite, CheckResult};

/// A finished command: the record plus every file to write into the output directory.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub record: RunRecord,
    pub files: Vec<(String, Vec<u8>)>,
}

/// Upper bound on |γ·g(z)| for the BLF hook.
pub fn blf_logit_bound(gamma: f64) -> f64 {
    gamma * (5f64.sqrt() + 1.0) / 2.0
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
}

fn blobs_splits(b: &super::config::BlobsSpec) -> Result<Splits> {
    let dim: usize = b.image_shape.iter().product();
    let all = synth_blobs(b.classes, b.train_per_class + b.test_per_class, dim, b.spread, b.seed)?;
    let cut = b.classes * b.train_per_class;
    let train_idx: Vec<usize> = (0..cut).collect();
    let test_idx: Vec<usize> = (cut..all.len()).collect();
    Ok(Splits {
        train: all.select(&train_idx).reshape_samples(&b.image_shape)?,
        test: all.select(&test_idx).reshape_samples(&b.image_shape)?,
    })
}

fn idx_splits(spec: &IdxSpec, seed: u64) -> Result<Splits> {
    let paths = [&spec.train_images, &spec.train_labels, &spec.test_images, &spec.test_labels];
    if let Some(fallback) = &spec.fallback {
        if paths.iter().any(|p| !Path::new(p.as_str()).exists()) {
            return blobs_splits(fallback);
        }
    }
    let train = load_idx(&spec.train_images, &spec.train_labels)?;
    let test = load_idx(&spec.test_images, &spec.test_labels)?;
    let cut = |ds: Dataset, n: Option<usize>, salt: u64| match n {
        Some(n) => ds.subset(n.min(ds.len()), seed ^ salt),
        None => Ok(ds),
    };
    Ok(Splits { train: cut(train, spec.train_subset, 0)?, test: cut(test, spec.test_subset, 1)? })
}

pub fn load_splits(source: &DataSource, seed: u64) -> Result<Splits> {
    match source {
        DataSource::Blobs(b) => blobs_splits(b),
        DataSource::Idx(spec) => idx_splits(spec, seed),
    }
}

/// Builds the configured architecture for `input_shape` and `classes`.
pub fn build_model(cfg: &ExperimentConfig, input_shape: &[usize], classes: usize, seed: u64) -> Result<Model> {
    let base = match &cfg.model.arch {
        Arch::Mlp { hidden } => Model::mlp(input_shape.to_vec(), hidden, classes, seed)?,
        Arch::Cnn { channels, kernel, hidden, dropout } => {
            Model::small_cnn(input_shape.to_vec(), *channels, *kernel, *hidden, classes, *dropout, seed)?
        }
    };
    base.with_hook(cfg.model.hook, cfg.model.gamma)
}

fn train_config(cfg: &ExperimentConfig, seed: u64) -> TrainConfig {
    let mut t = cfg.train.clone();
    t.seed = seed;
    if let Some(a) = t.attack.as_mut() {
        a.seed = seed;
    }
    t
}

fn eval_attack(cfg: &ExperimentConfig, seed: u64) -> AttackConfig {
    AttackConfig { seed, ..cfg.attack.clone() }
}

fn check(name: &str, passed: bool, details: serde_json::Value) -> CheckResult {
    CheckResult { name: name.to_string(), passed, details }
}

fn classes_of(splits: &Splits) -> usize {
    splits.train.classes().max(splits.test.classes()).max(2)
}

/// Robust accuracy, surrogate transfer, logit statistics and operator norms of `model` on `test`.
fn evaluate_model(
    cfg: &ExperimentConfig,
    model: &Model,
    test: &Dataset,
    seed: u64,
    repeat: usize,
    train_report: Option<crate::nn::TrainReport>,
) -> Result<ModelRun> {
    let attack = eval_attack(cfg, seed);
    let robust_accuracy = evaluate_robust_accuracy(model, test, &cfg.eval_epsilons, &attack, cfg.eval_batch_size)?;
    let surrogate_hook = match (attack.surrogate, model.hook()) {
        (Some(h), _) => Some(h),
        (None, ActivationKind::Blf) => Some(ActivationKind::Tanh),
        _ => None,
    };
    let surrogate = match surrogate_hook {
        Some(h) if attack.kind == AttackKind::Pgd => {
            let eps: Vec<f64> = cfg.eval_epsilons.iter().copied().filter(|e| *e > 0.0).collect();
            evaluate_surrogate(model, h, test, &eps, &attack, cfg.eval_batch_size)?
        }
        _ => Vec::new(),
    };
    Ok(ModelRun {
        repeat,
        seed,
        hook: model.hook(),
        gamma: model.gamma(),
        train: train_report,
        clean_accuracy: clean_accuracy(model, test)?,
        robust_accuracy,
        surrogate,
        logit_stats: logit_stats(model, test)?,
        operator_norms: operator_norms(model),
        twin: None,
    })
}

fn train_run(cfg: &ExperimentConfig, splits: &Splits, repeat: usize) -> Result<(Model, ModelRun)> {
    let seed = cfg.seed.wrapping_add(repeat as u64);
    let input_shape = splits.train.sample_shape().to_vec();
    let classes = classes_of(splits);
    let mut model = build_model(cfg, &input_shape, classes, seed)?;
    let tcfg = train_config(cfg, seed);
    let twin_start = model.with_hook_replaced(ActivationKind::Identity);
    let report = train(&mut model, &splits.train, &tcfg)?;
    let aborted = report.aborted.is_some();
    let mut run = evaluate_model(cfg, &model, &splits.test, seed, repeat, Some(report))?;
    if cfg.twin && !aborted {
        let mut twin = twin_start;
        *twin.gamma_mode_mut() = GammaMode::Fixed { gamma: 1.0 };
        let twin_report = train(&mut twin, &splits.train, &tcfg)?;
        run.twin = Some(TwinRun {
            hook: ActivationKind::Identity,
            clean_accuracy: clean_accuracy(&twin, &splits.test)?,
            logit_stats: logit_stats(&twin, &splits.test)?,
            train: twin_report,
        });
    }
    Ok((model, run))
}

fn run_aborted(run: &ModelRun) -> bool {
    let own = run.train.as_ref().is_some_and(|t| t.aborted.is_some());
    let twin = run.twin.as_ref().is_some_and(|t| t.train.aborted.is_some());
    own || twin
}

/// Checks tied to the bounded hook: the logit bound holds, and the identity twin exceeds it.
fn hook_checks(run: &ModelRun) -> Vec<CheckResult> {
    let mut checks = Vec::new();
    if run.hook == ActivationKind::Blf {
        let bound = blf_logit_bound(run.gamma);
        let linf = run.logit_stats.mean_linf;
        checks.push(check(
            "blf_mean_logit_linf_within_bound",
            linf <= bound,
            json!({"repeat": run.repeat, "mean_linf": linf, "bound": bound}),
        ));
        if let Some(twin) = &run.twin {
            let t = twin.logit_stats.mean_linf;
            checks.push(check(
                "identity_twin_exceeds_bound",
                t > bound,
                json!({"repeat": run.repeat, "mean_linf": t, "bound": bound}),
            ));
        }
    }
    checks
}

fn trained_or_loaded(cfg: &ExperimentConfig, splits: &Splits, record: &mut RunRecord) -> Result<Model> {
    match &cfg.checkpoint {
        Some(path) => load_checkpoint(path),
        None => {
            let (model, run) = train_run(cfg, splits, 0)?;
            record.aborted |= run_aborted(&run);
            record.runs.push(run);
            Ok(model)
        }
    }
}

fn sweep_points(cfg: &ExperimentConfig) -> Vec<(&'static str, Option<f64>)> {
    let s = &cfg.sweep;
    let mut points = Vec::new();
    if s.baseline {
        points.push(("cross_entropy", None));
    }
    points.extend(s.label_smoothing.iter().map(|v| ("label_smoothing", Some(*v))));
    points.extend(s.logit_squeezing.iter().map(|v| ("logit_squeezing", Some(*v))));
    points.extend(s.tanh.iter().map(|v| ("tanh", Some(*v))));
    points.extend(s.blf.iter().map(|v| ("blf", Some(*v))));
    points
}

fn sweep_row(cfg: &ExperimentConfig, splits: &Splits, index: usize, family: &str, value: Option<f64>) -> SweepRow {
    let mut row = SweepRow {
        index,
        family: family.to_string(),
        value,
        clean_accuracy: None,
        robust_accuracy: None,
        mean_logit_l2: None,
        mean_logit_linf: None,
        mean_prelogit_l2: None,
        mean_prelogit_linf: None,
        error: None,
    };
    let outcome = (|| -> Result<()> {
        let mut point = cfg.clone();
        point.model.hook = ActivationKind::Identity;
        point.model.gamma = GammaMode::Fixed { gamma: 1.0 };
        point.train.loss = LossSpec::CrossEntropy;
        let v = value.unwrap_or(0.0);
        match family {
            "label_smoothing" => point.train.loss = LossSpec::LabelSmoothing { alpha: v },
            "logit_squeezing" => point.train.loss = LossSpec::LogitSqueezing { lambda: v },
            "tanh" => (point.model.hook, point.model.gamma) = (ActivationKind::Tanh, GammaMode::Fixed { gamma: v }),
            "blf" => (point.model.hook, point.model.gamma) = (ActivationKind::Blf, GammaMode::Fixed { gamma: v }),
            _ => {}
        }
        let seed = cfg.seed;
        let mut model = build_model(&point, splits.train.sample_shape(), classes_of(splits), seed)?;
        let report = train(&mut model, &splits.train, &train_config(&point, seed))?;
        if let Some(reason) = report.aborted {
            return Err(Error::NonFinite(reason));
        }
        let attack = AttackConfig { epsilon: cfg.sweep.epsilon, ..eval_attack(cfg, seed) };
        let robust = evaluate_robust_accuracy(&model, &splits.test, &[cfg.sweep.epsilon], &attack, cfg.eval_batch_size)?;
        let stats = logit_stats(&model, &splits.test)?;
        row.clean_accuracy = Some(clean_accuracy(&model, &splits.test)?);
        row.robust_accuracy = Some(robust[0].accuracy);
        row.mean_logit_l2 = Some(stats.mean_l2);
        row.mean_logit_linf = Some(stats.mean_linf);
        row.mean_prelogit_l2 = Some(stats.mean_prelogit_l2);
        row.mean_prelogit_linf = Some(stats.mean_prelogit_linf);
        Ok(())
    })();
    if let Err(e) = outcome {
        row.error = Some(e.to_string());
    }
    row
}

/// Runs `command` on a validated config. Nothing is written to disk here.
pub fn run_command(command: Command, cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate(command)?;
    let start = Instant::now();
    let mut record = RunRecord::new(command, cfg.clone());
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();

    match command {
        Command::Theorems => {
            let report = run_theorem_suite(&cfg.theorems)?;
            record.passed = report.passed;
            record.theorems = Some(report);
        }
        Command::Train => {
            let splits = load_splits(&cfg.data, cfg.seed)?;
            for repeat in 0..cfg.repeats {
                let (model, run) = train_run(cfg, &splits, repeat)?;
                record.aborted |= run_aborted(&run);
                record.checks.extend(hook_checks(&run));
                if repeat == 0 {
                    files.push(("model.ckpt".into(), write_checkpoint(&model)?));
                }
                record.runs.push(run);
            }
        }
        Command::Evaluate => {
            let splits = load_splits(&cfg.data, cfg.seed)?;
            let model = trained_or_loaded(cfg, &splits, &mut record)?;
            let run = evaluate_model(cfg, &model, &splits.test, cfg.seed, 0, None)?;
            record.checks.extend(hook_checks(&run));
            record.runs.push(run);
        }
        Command::Sweep => {
            let splits = load_splits(&cfg.data, cfg.seed)?;
            let points = sweep_points(cfg);
            record.sweep = points
                .par_iter()
                .enumerate()
                .map(|(i, (family, value))| sweep_row(cfg, &splits, i, family, *value))
                .collect();
            record.aborted = record.sweep.iter().any(|r| r.error.is_some());
            files.push(("scatter.csv".into(), scatter_csv(&record.sweep).into_bytes()));
        }
        Command::Surface => {
            let splits = load_splits(&cfg.data, cfg.seed)?;
            let model = trained_or_loaded(cfg, &splits, &mut record)?;
            for (i, &point) in cfg.surface.datapoints.iter().enumerate() {
                let grid = loss_surface(&model, &splits.test, point, cfg.surface.direction_seeds)?;
                files.push((format!("surface_{i}.csv"), grid.to_csv().into_bytes()));
                record.surfaces.push(grid);
            }
        }
        Command::Opnorms => {
            let splits = load_splits(&cfg.data, cfg.seed)?;
            let model = trained_or_loaded(cfg, &splits, &mut record)?;
            if cfg.checkpoint.is_some() {
                let run = evaluate_model(cfg, &model, &splits.test, cfg.seed, 0, None)?;
                record.runs.push(run);
            }
        }
    }

    if matches!(command, Command::Train | Command::Evaluate) {
        let per_run: Vec<_> = record.runs.iter().map(|r| r.robust_accuracy.clone()).collect();
        record.accuracy = summarize(&per_run);
        files.push(("accuracy_vs_eps.csv".into(), accuracy_csv(&record.accuracy).into_bytes()));
    }
    if command != Command::Theorems {
        record.passed = record.checks.iter().all(|c| c.passed) && !record.aborted;
    }
    record.wall_clock_seconds = start.elapsed().as_secs_f64();
    files.insert(0, ("record.json".into(), record.to_json().into_bytes()));
    Ok(RunOutput { record, files })
}
