use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::activations::ActivationKind;
use crate::attacks::AttackConfig;
use crate::error::{Error, Result};
use crate::nn::{GammaMode, TrainConfig};
use crate::theoremlab::TheoremSuiteConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Theorems,
    Train,
    Evaluate,
    Sweep,
    Surface,
    Opnorms,
}

impl Command {
    pub const ALL: [Command; 6] =
        [Command::Theorems, Command::Train, Command::Evaluate, Command::Sweep, Command::Surface, Command::Opnorms];

    pub fn name(self) -> &'static str {
        match self {
            Command::Theorems => "theorems",
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::Sweep => "sweep",
            Command::Surface => "surface",
            Command::Opnorms => "opnorms",
        }
    }
}

/// Gaussian blobs; train and test share centers and are split by position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobsSpec {
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Per-sample shape, e.g. `[16]` or `[1, 16, 16]`.
    pub image_shape: Vec<usize>,
    #[serde(default = "default_spread")]
    pub spread: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_spread() -> f64 {
    0.15
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxSpec {
    pub train_images: String,
    pub train_labels: String,
    pub test_images: String,
    pub test_labels: String,
    #[serde(default)]
    pub train_subset: Option<usize>,
    #[serde(default)]
    pub test_subset: Option<usize>,
    /// Used when any of the IDX files is missing.
    #[serde(default)]
    pub fallback: Option<BlobsSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Idx(IdxSpec),
    Blobs(BlobsSpec),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Blobs(BlobsSpec {
            classes: 4,
            train_per_class: 50,
            test_per_class: 25,
            image_shape: vec![16],
            spread: default_spread(),
            seed: 0,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Arch {
    Mlp {
        hidden: Vec<usize>,
    },
    /// conv → pool → ReLU → conv → pool → ReLU → dense → ReLU → dense.
    Cnn {
        channels: [usize; 2],
        kernel: usize,
        hidden: usize,
        #[serde(default)]
        dropout: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub arch: Arch,
    pub hook: ActivationKind,
    pub gamma: GammaMode,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self { arch: Arch::Mlp { hidden: vec![32] }, hook: ActivationKind::Identity, gamma: GammaMode::default() }
    }
}

/// Hyperparameter grid for the logit-norm versus robustness scatter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Attack budget for the robust-accuracy column.
    pub epsilon: f64,
    pub baseline: bool,
    pub label_smoothing: Vec<f64>,
    pub logit_squeezing: Vec<f64>,
    pub tanh: Vec<f64>,
    pub blf: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            baseline: true,
            label_smoothing: vec![0.1],
            logit_squeezing: vec![0.1],
            tanh: vec![1.0],
            blf: vec![1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurfaceConfig {
    /// Test-set indices; one grid per entry.
    pub datapoints: Vec<usize>,
    /// Seeds of the two ±1 directions, shared by every model.
    pub direction_seeds: [u64; 2],
}

impl Default for SurfaceConfig {
    fn default() -> Self {
        Self { datapoints: vec![0], direction_seeds: [1, 2] }
    }
}

fn default_epsilons() -> Vec<f64> {
    vec![0.0, 0.05, 0.1]
}

fn default_eval_batch() -> usize {
    100
}

fn default_repeats() -> usize {
    1
}

/// Everything a command needs. The top-level `seed` drives model
/// initialization, shuffling, dropout and attacks; nested seeds are overwritten.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub command: Option<Command>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub data: DataSource,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    /// Evaluation attack.
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default = "default_epsilons")]
    pub eval_epsilons: Vec<f64>,
    #[serde(default = "default_eval_batch")]
    pub eval_batch_size: usize,
    /// Also train an identity-hook model with the same initialization and data.
    #[serde(default)]
    pub twin: bool,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub surface: SurfaceConfig,
    #[serde(default)]
    pub theorems: TheoremSuiteConfig,
    /// Model to load for evaluate, surface and opnorms instead of training one.
    #[serde(default)]
    pub checkpoint: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

fn finite_nonneg(v: f64) -> bool {
    v >= 0.0 && v.is_finite()
}

impl ExperimentConfig {
    pub fn from_value(value: Value) -> Result<Self> {
        serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_value(value)
    }

    /// Range checks that serde cannot express.
    pub fn validate(&self, command: Command) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if let Some(c) = self.command {
            if c != command {
                return bad(format!("config is for `{}` but `{}` was requested", c.name(), command.name()));
            }
        }
        self.train.validate().map_err(|e| Error::Config(format!("train: {e}")))?;
        self.attack.validate().map_err(|e| Error::Config(format!("attack: {e}")))?;
        if let Some(e) = self.eval_epsilons.iter().find(|e| !finite_nonneg(**e)) {
            return bad(format!("eval epsilon {e} must be nonnegative"));
        }
        if self.eval_batch_size == 0 || self.repeats == 0 {
            return bad("eval_batch_size and repeats must be positive".into());
        }
        let g = self.model.gamma.effective();
        if !(g > 0.0 && g.is_finite()) {
            return bad(format!("model gamma must be positive, got {g}"));
        }
        match &self.model.arch {
            Arch::Mlp { hidden } if hidden.contains(&0) => return bad("hidden widths must be positive".into()),
            Arch::Cnn { dropout, .. } if !(0.0..1.0).contains(dropout) => return bad("dropout must lie in [0,1)".into()),
            _ => {}
        }
        let blobs = match &self.data {
            DataSource::Blobs(b) => Some(b),
            DataSource::Idx(i) => i.fallback.as_ref(),
        };
        if let Some(b) = blobs {
            if b.classes < 2 || b.train_per_class == 0 || b.test_per_class == 0 || b.image_shape.contains(&0) {
                return bad("blobs need at least 2 classes and nonempty splits".into());
            }
            if !finite_nonneg(b.spread) {
                return bad("blob spread must be nonnegative".into());
            }
        }
        let s = &self.sweep;
        if !finite_nonneg(s.epsilon) {
            return bad("sweep epsilon must be nonnegative".into());
        }
        if s.label_smoothing.iter().any(|a| !(0.0..1.0).contains(a)) {
            return bad("label smoothing alphas must lie in [0,1)".into());
        }
        if s.logit_squeezing.iter().chain(&s.tanh).chain(&s.blf).any(|v| !(*v > 0.0 && v.is_finite())) {
            return bad("sweep lambdas and gammas must be positive".into());
        }
        if command == Command::Evaluate && self.checkpoint.is_none() {
            return bad("evaluate needs a checkpoint".into());
        }
        if command == Command::Surface && self.surface.datapoints.is_empty() {
            return bad("surface needs at least one datapoint".into());
        }
        Ok(())
    }
}

/// Sets `path` (dot separated, numeric segments index arrays) to `raw`.
/// `raw` is parsed as JSON, falling back to a plain string.
pub fn apply_override(root: &mut Value, path: &str, raw: &str) -> Result<()> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("bad override path `{path}`")));
    }
    let mut node = root;
    for (i, key) in keys.iter().enumerate() {
        let last = i + 1 == keys.len();
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert(key.to_string(), value);
                    return Ok(());
                }
                map.entry(key.to_string()).or_insert(Value::Null)
            }
            Value::Array(items) => {
                let idx: usize = key.parse().map_err(|_| Error::Config(format!("`{key}` is not an array index in `{path}`")))?;
                let slot = items.get_mut(idx).ok_or_else(|| Error::Config(format!("index {idx} out of range in `{path}`")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(Error::Config(format!("`{key}` in `{path}` does not name an object field"))),
        };
    }
    unreachable!("loop returns on the last key")
}

/// Parses a `key=value` override.
pub fn parse_override(spec: &str) -> Result<(&str, &str)> {
    spec.split_once('=').ok_or_else(|| Error::Config(format!("override `{spec}` is not key=value")))
}

/// Reads a JSON config from `path`, or a preset when `path` names one and no such file exists.
pub fn load_config_value(path: &str) -> Result<Value> {
    if !Path::new(path).exists() {
        if let Some(preset) = super::presets::preset(path) {
            return Ok(preset);
        }
    }
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {path}: {e}")))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{path}: {e}")))
}

/// Loads, overrides and validates a config. `seed` replaces the top-level seed.
pub fn resolve_config(path: &str, overrides: &[String], seed: Option<u64>, command: Command) -> Result<ExperimentConfig> {
    let mut value = load_config_value(path)?;
    for spec in overrides {
        let (key, raw) = parse_override(spec)?;
        apply_override(&mut value, key, raw)?;
    }
    if let Some(seed) = seed {
        apply_override(&mut value, "seed", &seed.to_string())?;
    }
    let cfg = ExperimentConfig::from_value(value)?;
    cfg.validate(command)?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn defaults_parse_and_validate() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.repeats, 1);
        cfg.validate(Command::Train).unwrap();
        assert!(cfg.validate(Command::Evaluate).is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"sede": 3}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"train": {"epoch": 3}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"model": {"arch": {"kind": "mlp", "hiden": []}}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"data": {"kind": "blobs", "classes": 2}}"#).is_err());
        let extra = r#"{"data": {"kind": "blobs", "classes": 2, "train_per_class": 1, "test_per_class": 1,
            "image_shape": [2], "colour": 1}}"#;
        assert!(ExperimentConfig::from_json(extra).is_err());
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let mut v = json!({"train": {"epochs": 2}, "eval_epsilons": [0.0, 0.1]});
        apply_override(&mut v, "train.sgd.lr", "0.5").unwrap();
        apply_override(&mut v, "eval_epsilons.1", "0.2").unwrap();
        apply_override(&mut v, "model.hook", "blf").unwrap();
        let cfg = ExperimentConfig::from_value(v).unwrap();
        assert_eq!(cfg.train.sgd.lr, 0.5);
        assert_eq!(cfg.train.epochs, 2);
        assert_eq!(cfg.eval_epsilons, vec![0.0, 0.2]);
        assert_eq!(cfg.model.hook, ActivationKind::Blf);

        let mut v = json!({"eval_epsilons": [0.0]});
        assert!(apply_override(&mut v, "eval_epsilons.3", "1").is_err());
        assert!(apply_override(&mut v, "eval_epsilons.x", "1").is_err());
        assert!(parse_override("novalue").is_err());
    }

    #[test]
    fn command_mismatch_and_ranges() {
        let cfg = ExperimentConfig::from_json(r#"{"command": "sweep"}"#).unwrap();
        assert!(cfg.validate(Command::Train).is_err());
        cfg.validate(Command::Sweep).unwrap();
        let cfg = ExperimentConfig::from_json(r#"{"eval_epsilons": [-0.1]}"#).unwrap();
        assert!(cfg.validate(Command::Train).is_err());
        let cfg = ExperimentConfig::from_json(r#"{"sweep": {"label_smoothing": [1.0]}}"#).unwrap();
        assert!(cfg.validate(Command::Sweep).is_err());
    }
}
