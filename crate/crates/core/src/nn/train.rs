use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{count_correct, argmax, GammaMode, Gradients, Model};
use super::tensor::Tensor;
use crate::activations::softmax_unchecked;
use crate::attacks::{pgd, trades_perturbation, AttackConfig};
use crate::data::{subset_and_batch, Batch, Dataset};
use crate::error::{Error, Result};
use crate::losses::{kl_divergence, kl_logit_gradients, LossSpec};

/// Divide the learning rate by `divisor` from `epoch` (0-based) onward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrStep {
    pub epoch: usize,
    pub divisor: f64,
}

/// Attack budget used from `epoch` (0-based) onward during adversarial or TRADES training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonStep {
    pub epoch: usize,
    pub epsilon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: Vec<LrStep>,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self { lr: 0.01, momentum: 0.9, weight_decay: 5e-4, schedule: Vec::new() }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::domain(format!("learning rate must be nonnegative, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::domain(format!("momentum must lie in [0,1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::domain("weight decay must be nonnegative"));
        }
        if self.schedule.iter().any(|s| !(s.divisor > 0.0 && s.divisor.is_finite())) {
            return Err(Error::domain("schedule divisors must be positive"));
        }
        Ok(())
    }
}

/// Learning rate in effect during `epoch`.
pub fn lr_at(cfg: &SgdConfig, epoch: usize) -> f64 {
    cfg.schedule.iter().filter(|s| s.epoch <= epoch).fold(cfg.lr, |lr, s| lr / s.divisor)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub sgd: SgdConfig,
    pub loss: LossSpec,
    /// Replace each batch with its PGD counterpart before the update.
    pub adversarial: bool,
    /// Attack used by adversarial training and by the TRADES inner maximization.
    pub attack: Option<AttackConfig>,
    /// Overrides the attack budget per epoch; empty means a fixed budget.
    pub epsilon_schedule: Vec<EpsilonStep>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1,
            batch_size: 64,
            sgd: SgdConfig::default(),
            loss: LossSpec::CrossEntropy,
            adversarial: false,
            attack: None,
            epsilon_schedule: Vec::new(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::domain("batch size must be positive"));
        }
        self.sgd.validate()?;
        self.loss.validate()?;
        if self.epsilon_schedule.iter().any(|s| !(s.epsilon >= 0.0 && s.epsilon.is_finite())) {
            return Err(Error::domain("scheduled epsilons must be nonnegative"));
        }
        let needs_attack = self.adversarial || matches!(self.loss, LossSpec::Trades { .. });
        match (&self.attack, needs_attack) {
            (None, true) => Err(Error::Config("adversarial and TRADES training need an attack config".into())),
            (Some(a), _) => a.validate(),
            (None, false) => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    /// Sample-weighted mean training loss.
    pub loss: f64,
    /// Accuracy on the batches actually trained on.
    pub accuracy: f64,
    pub gamma: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    /// Set when training stopped on a non-finite loss or parameter.
    pub aborted: Option<String>,
}

/// SGD with momentum and coupled weight decay: `v ← μv + g + λw`, `w ← w − η v`.
/// The raw γ parameter gets momentum but no decay.
#[derive(Clone, Debug)]
pub struct Sgd {
    cfg: SgdConfig,
    velocity: Vec<Option<(Vec<f64>, Vec<f64>)>>,
    gamma_velocity: f64,
}

impl Sgd {
    pub fn new(model: &Model, cfg: SgdConfig) -> Result<Self> {
        cfg.validate()?;
        let velocity = model
            .layers()
            .iter()
            .map(|l| l.params().map(|(w, b)| (vec![0.0; w.len()], vec![0.0; b.len()])))
            .collect();
        Ok(Self { cfg, velocity, gamma_velocity: 0.0 })
    }

    pub fn step(&mut self, model: &mut Model, grads: &Gradients, lr: f64) {
        let (mu, wd) = (self.cfg.momentum, self.cfg.weight_decay);
        let update = |p: &mut [f64], g: &[f64], v: &mut [f64]| {
            for ((p, g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                *v = mu * *v + g + wd * *p;
                *p -= lr * *v;
            }
        };
        for ((layer, grad), vel) in model.layers_mut().iter_mut().zip(&grads.layers).zip(&mut self.velocity) {
            if let (Some((w, b)), Some(g), Some((vw, vb))) = (layer.params_mut(), grad, vel.as_mut()) {
                update(w, &g.weight, vw);
                update(b, &g.bias, vb);
            }
        }
        if let (GammaMode::Learnable { raw }, Some(g)) = (model.gamma_mode_mut(), grads.gamma_raw) {
            self.gamma_velocity = mu * self.gamma_velocity + g;
            *raw -= lr * self.gamma_velocity;
        }
    }
}

fn params_finite(model: &Model) -> bool {
    let layers_ok = model
        .layers()
        .iter()
        .filter_map(|l| l.params())
        .all(|(w, b)| w.iter().chain(b).all(|v| v.is_finite()));
    layers_ok && model.gamma().is_finite()
}

/// Attack budget in effect during `epoch`.
pub fn epsilon_at(cfg: &TrainConfig, epoch: usize) -> Option<f64> {
    let base = cfg.attack.as_ref()?.epsilon;
    Some(cfg.epsilon_schedule.iter().rfind(|s| s.epoch <= epoch).map_or(base, |s| s.epsilon))
}

fn batch_attack(cfg: &TrainConfig, attack: &AttackConfig, epoch: usize, batch: usize) -> AttackConfig {
    let seed = cfg.seed;
    let epsilon = epsilon_at(cfg, epoch).unwrap_or(attack.epsilon);
    let mix = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((epoch as u64) << 32)
        .wrapping_add(batch as u64);
    AttackConfig { seed: attack.seed ^ mix, epsilon, ..attack.clone() }
}

struct Step {
    loss_sum: f64,
    correct: usize,
    grads: Gradients,
}

/// Clean cross-entropy plus β·KL(clean ‖ adversarial), both halves backpropagated.
fn trades_step(
    model: &Model,
    batch: &Batch,
    beta: f64,
    attack: &AttackConfig,
    rng: &mut ChaCha8Rng,
    adv_rng: &mut ChaCha8Rng,
) -> Result<Step> {
    let adv = trades_perturbation(model, &batch.images, attack)?;
    let clean = model.pass(&batch.images, Some(rng))?;
    let noisy = model.pass(&adv, Some(adv_rng))?;
    let n = batch.labels.len() as f64;
    let (ce, mut g_clean) = model.logit_loss_gradients(&clean.logits, &batch.labels, &LossSpec::CrossEntropy)?;
    let mut g_adv = Vec::with_capacity(noisy.logits.len());
    let mut loss_sum = ce.iter().sum::<f64>();
    let rows = clean.logits.rows().zip(noisy.logits.rows());
    for (i, (zc, za)) in rows.enumerate() {
        let kl = kl_divergence(&softmax_unchecked(zc), &softmax_unchecked(za));
        loss_sum += beta * kl;
        let (gc, ga) = kl_logit_gradients(zc, za);
        let m = zc.len();
        for (g, k) in g_clean.data_mut()[i * m..(i + 1) * m].iter_mut().zip(gc) {
            *g += beta * k;
        }
        g_adv.extend(ga.into_iter().map(|k| beta * k));
    }
    g_clean.data_mut().iter_mut().for_each(|g| *g /= n);
    g_adv.iter_mut().for_each(|g| *g /= n);
    let g_adv = Tensor::new(noisy.logits.shape().to_vec(), g_adv)?;
    let mut grads = model.backprop(&clean, &g_clean)?;
    grads.accumulate(&model.backprop(&noisy, &g_adv)?);
    let predictions: Vec<usize> = clean.logits.rows().map(argmax).collect();
    Ok(Step { loss_sum, correct: count_correct(&predictions, &batch.labels), grads })
}

fn batch_step(
    model: &Model,
    batch: &Batch,
    cfg: &TrainConfig,
    epoch: usize,
    b: usize,
    rng: &mut ChaCha8Rng,
    adv_rng: &mut ChaCha8Rng,
) -> Result<Step> {
    if let (LossSpec::Trades { beta }, Some(attack)) = (&cfg.loss, &cfg.attack) {
        let attack = batch_attack(cfg, attack, epoch, b);
        return trades_step(model, batch, *beta, &attack, rng, adv_rng);
    }
    let adv;
    let images = match &cfg.attack {
        Some(a) if cfg.adversarial => {
            adv = pgd(model, &batch.images, &batch.labels, &batch_attack(cfg, a, epoch, b))?;
            &adv
        }
        _ => &batch.images,
    };
    let back = model.backward_with(images, &batch.labels, &cfg.loss, Some(rng))?;
    let predictions: Vec<usize> = back.logits.rows().map(argmax).collect();
    Ok(Step {
        loss_sum: back.loss * batch.labels.len() as f64,
        correct: count_correct(&predictions, &batch.labels),
        grads: back.grads,
    })
}

/// Trains `model` in place. Dropout and per-epoch shuffling are driven by `cfg.seed`.
pub fn train(model: &mut Model, ds: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::domain("cannot train on an empty dataset"));
    }
    if ds.sample_shape() != model.input_shape() {
        return Err(Error::Shape { expected: model.input_shape().to_vec(), got: ds.sample_shape().to_vec() });
    }
    let mut sgd = Sgd::new(model, cfg.sgd.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut adv_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    adv_rng.set_stream(2);
    let mut report = TrainReport::default();

    for epoch in 0..cfg.epochs {
        let lr = lr_at(&cfg.sgd, epoch);
        let shuffle_seed = cfg.seed ^ (epoch as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03);
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for (b, batch) in subset_and_batch(ds, ds.len(), cfg.batch_size, shuffle_seed)?.enumerate() {
            let step = batch_step(model, &batch, cfg, epoch, b, &mut rng, &mut adv_rng);
            let step = match step {
                Err(Error::NonFinite(what)) => {
                    report.aborted = Some(format!("non-finite {what} at epoch {epoch}, batch {b}"));
                    return Ok(report);
                }
                other => other?,
            };
            if !step.loss_sum.is_finite() {
                report.aborted = Some(format!("non-finite loss at epoch {epoch}, batch {b}"));
                return Ok(report);
            }
            sgd.step(model, &step.grads, lr);
            if !params_finite(model) {
                report.aborted = Some(format!("non-finite parameters at epoch {epoch}, batch {b}"));
                return Ok(report);
            }
            loss_sum += step.loss_sum;
            correct += step.correct;
            seen += batch.labels.len();
        }
        report.epochs.push(EpochMetrics {
            epoch,
            lr,
            loss: loss_sum / seen as f64,
            accuracy: correct as f64 / seen as f64,
            gamma: model.gamma(),
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::ActivationKind;
    use crate::data::synth_blobs;

    fn blobs() -> Dataset {
        synth_blobs(4, 30, 10, 0.1, 3).unwrap()
    }

    fn quick(epochs: usize) -> TrainConfig {
        TrainConfig { epochs, batch_size: 16, sgd: SgdConfig { lr: 0.1, ..SgdConfig::default() }, ..TrainConfig::default() }
    }

    #[test]
    fn schedule_divides_learning_rate() {
        let cfg = SgdConfig {
            lr: 1.0,
            schedule: vec![LrStep { epoch: 2, divisor: 10.0 }, LrStep { epoch: 4, divisor: 2.0 }],
            ..SgdConfig::default()
        };
        assert_eq!(lr_at(&cfg, 0), 1.0);
        assert_eq!(lr_at(&cfg, 2), 0.1);
        assert_eq!(lr_at(&cfg, 5), 0.05);
    }

    #[test]
    fn epsilon_schedule_steps() {
        let mut cfg = TrainConfig { attack: Some(AttackConfig::pgd(0.3, 0.01, 1)), ..TrainConfig::default() };
        assert_eq!(epsilon_at(&cfg, 0), Some(0.3));
        cfg.epsilon_schedule = vec![EpsilonStep { epoch: 0, epsilon: 0.1 }, EpsilonStep { epoch: 3, epsilon: 0.2 }];
        assert_eq!(epsilon_at(&cfg, 2), Some(0.1));
        assert_eq!(epsilon_at(&cfg, 7), Some(0.2));
        cfg.attack = None;
        assert_eq!(epsilon_at(&cfg, 0), None);
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let ds = blobs();
        let mut model = Model::mlp(vec![10], &[8], 4, 0).unwrap();
        let before = model.clone();
        let cfg = TrainConfig { sgd: SgdConfig { lr: 0.0, ..SgdConfig::default() }, ..quick(2) };
        train(&mut model, &ds, &cfg).unwrap();
        assert_eq!(model, before);
    }

    #[test]
    fn weight_decay_shrinks_under_zero_gradient() {
        let mut model = Model::mlp(vec![4], &[3], 2, 1).unwrap();
        let zero = Gradients {
            layers: model.layers().iter().map(|l| l.params().map(|(w, b)| super::super::ParamGrad {
                weight: vec![0.0; w.len()],
                bias: vec![0.0; b.len()],
            })).collect(),
            gamma_raw: None,
            input: Tensor::zeros(vec![1, 4]),
        };
        let cfg = SgdConfig { lr: 0.1, momentum: 0.0, weight_decay: 0.5, schedule: vec![] };
        let mut sgd = Sgd::new(&model, cfg).unwrap();
        let before = model.clone();
        sgd.step(&mut model, &zero, 0.1);
        for (a, b) in model.layers().iter().zip(before.layers()) {
            if let (Some((wa, _)), Some((wb, _))) = (a.params(), b.params()) {
                for (x, y) in wa.iter().zip(wb) {
                    assert!((x - 0.95 * y).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn training_is_deterministic_and_learns_blobs() {
        let ds = blobs();
        let run = || {
            let mut model = Model::mlp(vec![10], &[16], 4, 7).unwrap();
            let report = train(&mut model, &ds, &quick(15)).unwrap();
            (model, report)
        };
        let (a, ra) = run();
        let (b, rb) = run();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert!(a.accuracy(&ds.images, &ds.labels).unwrap() >= 0.99);
    }

    #[test]
    fn trades_with_zero_beta_is_cross_entropy() {
        let ds = blobs();
        let attack = AttackConfig::pgd(0.1, 0.02, 3);
        let ce_cfg = quick(2);
        let trades_cfg =
            TrainConfig { loss: LossSpec::Trades { beta: 0.0 }, attack: Some(attack), ..quick(2) };
        let mut a = Model::mlp(vec![10], &[8], 4, 5).unwrap();
        let mut b = a.clone();
        let ra = train(&mut a, &ds, &ce_cfg).unwrap();
        let rb = train(&mut b, &ds, &trades_cfg).unwrap();
        assert_eq!(a, b);
        assert!((ra.epochs[1].loss - rb.epochs[1].loss).abs() < 1e-12);
    }

    #[test]
    fn adversarial_modes_need_attack() {
        let ds = blobs();
        let mut model = Model::mlp(vec![10], &[8], 4, 5).unwrap();
        let cfg = TrainConfig { adversarial: true, ..quick(1) };
        assert!(train(&mut model, &ds, &cfg).is_err());
        let cfg = TrainConfig { loss: LossSpec::Trades { beta: 1.0 }, ..quick(1) };
        assert!(train(&mut model, &ds, &cfg).is_err());
        let cfg = TrainConfig { adversarial: true, attack: Some(AttackConfig::pgd(0.1, 0.05, 2)), ..quick(1) };
        let report = train(&mut model, &ds, &cfg).unwrap();
        assert!(report.aborted.is_none() && report.epochs[0].loss.is_finite());
    }

    #[test]
    fn learnable_gamma_grows_on_separable_data() {
        let ds = blobs();
        let mut model = Model::mlp(vec![10], &[16], 4, 2)
            .unwrap()
            .with_hook(ActivationKind::Blf, GammaMode::learnable())
            .unwrap();
        let start = model.gamma();
        let cfg = TrainConfig { sgd: SgdConfig { weight_decay: 0.0, ..quick(10).sgd }, ..quick(10) };
        train(&mut model, &ds, &cfg).unwrap();
        assert!(model.gamma() > start);
    }

    #[test]
    fn divergent_run_is_aborted() {
        let ds = blobs();
        let mut model = Model::mlp(vec![10], &[16], 4, 2).unwrap();
        let cfg = TrainConfig { sgd: SgdConfig { lr: 1e200, ..SgdConfig::default() }, ..quick(3) };
        let report = train(&mut model, &ds, &cfg).unwrap();
        assert!(report.aborted.is_some());
    }
}
