//! L∞ attacks: white-box PGD, gradient-free SPSA, and the surrogate-hook transfer attack.
//!
//! Every attack output is projected onto the ε-ball around the clean input and then
//! onto the `[0,1]` box; both are coordinate-wise interval clamps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::activations::{softmax_unchecked, ActivationKind};
use crate::data::{Dataset, Batch};
use crate::error::{Error, Result};
use crate::losses::{cross_entropy, kl_divergence, kl_logit_gradients, TargetVector};
use crate::nn::{count_correct, Model, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Pgd,
    Spsa,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpsaParams {
    /// Probe size δ.
    pub delta: f64,
    pub adam_lr: f64,
    /// Number of ±1 probe directions averaged per iteration.
    pub directions: usize,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for SpsaParams {
    fn default() -> Self {
        Self { delta: 0.01, adam_lr: 0.01, directions: 2048, beta1: 0.9, beta2: 0.999 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub epsilon: f64,
    pub step_size: f64,
    pub iterations: usize,
    pub random_init: bool,
    /// PGD restarts; the highest-loss restart is kept per sample.
    pub restarts: usize,
    pub spsa: SpsaParams,
    pub seed: u64,
    /// Hook used by the surrogate model when gradients are taken through a replacement.
    pub surrogate: Option<ActivationKind>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            kind: AttackKind::Pgd,
            epsilon: 0.3,
            step_size: 0.01,
            iterations: 40,
            random_init: true,
            restarts: 1,
            spsa: SpsaParams::default(),
            seed: 0,
            surrogate: None,
        }
    }
}

impl AttackConfig {
    pub fn pgd(epsilon: f64, step_size: f64, iterations: usize) -> Self {
        Self { epsilon, step_size, iterations, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::domain(format!("epsilon must be nonnegative, got {}", self.epsilon)));
        }
        if self.iterations > 0 && !(self.step_size > 0.0) && self.kind == AttackKind::Pgd {
            return Err(Error::domain("step size must be positive when iterations > 0"));
        }
        if self.kind == AttackKind::Spsa {
            if !(self.spsa.delta > 0.0) {
                return Err(Error::domain("SPSA probe size delta must be positive"));
            }
            if self.spsa.directions == 0 {
                return Err(Error::domain("SPSA needs at least one direction"));
            }
        }
        Ok(())
    }
}

fn check_box(x: &Tensor) -> Result<()> {
    if x.data().iter().all(|v| (0.0..=1.0).contains(v)) {
        Ok(())
    } else {
        Err(Error::domain("attack inputs must lie in [0,1]"))
    }
}

/// Clamps `adv` to the ε-ball around `clean`, then to `[0,1]`.
pub fn project(clean: &[f64], adv: &mut [f64], epsilon: f64) {
    for (a, &c) in adv.iter_mut().zip(clean) {
        *a = a.clamp(c - epsilon, c + epsilon).clamp(0.0, 1.0);
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Random stream for sample `index` of restart `restart`.
fn sample_rng(seed: u64, restart: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (restart as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index as u64);
    rng
}

fn uniform_start(x: &Tensor, cfg: &AttackConfig, restart: usize, offset: usize) -> Tensor {
    let mut adv = x.clone();
    if cfg.random_init {
        for i in 0..x.batch() {
            let mut rng = sample_rng(cfg.seed, restart, offset + i);
            let clean = x.sample(i);
            let a = adv.sample_mut(i);
            for v in a.iter_mut() {
                *v += (2.0 * rng.random::<f64>() - 1.0) * cfg.epsilon;
            }
            project(clean, a, cfg.epsilon);
        }
    }
    adv
}

/// PGD against an arbitrary per-sample objective returning `(losses, ∂loss/∂input)`.
///
/// `offset` is the global index of the first sample, which keys its random stream.
pub fn pgd_with<F>(x: &Tensor, cfg: &AttackConfig, offset: usize, mut objective: F) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<(Vec<f64>, Tensor)>,
{
    cfg.validate()?;
    check_box(x)?;
    let restarts = cfg.restarts.max(1);
    let mut best: Option<(Tensor, Vec<f64>)> = None;
    for restart in 0..restarts {
        let mut adv = uniform_start(x, cfg, restart, offset);
        for _ in 0..cfg.iterations {
            let (_, grad) = objective(&adv)?;
            for i in 0..x.batch() {
                let g = grad.sample(i).to_vec();
                let a = adv.sample_mut(i);
                for (v, gv) in a.iter_mut().zip(&g) {
                    *v += cfg.step_size * sign(*gv);
                }
                project(x.sample(i), a, cfg.epsilon);
            }
        }
        if restarts == 1 {
            return Ok(adv);
        }
        let (losses, _) = objective(&adv)?;
        best = Some(match best {
            None => (adv, losses),
            Some((mut kept, mut kept_losses)) => {
                for i in 0..x.batch() {
                    if losses[i] > kept_losses[i] {
                        kept.sample_mut(i).copy_from_slice(adv.sample(i));
                        kept_losses[i] = losses[i];
                    }
                }
                (kept, kept_losses)
            }
        });
    }
    Ok(best.expect("at least one restart").0)
}

/// Untargeted L∞ PGD on the cross-entropy of `model`.
pub fn pgd(model: &Model, x: &Tensor, labels: &[usize], cfg: &AttackConfig) -> Result<Tensor> {
    pgd_offset(model, x, labels, cfg, 0)
}

fn pgd_offset(model: &Model, x: &Tensor, labels: &[usize], cfg: &AttackConfig, offset: usize) -> Result<Tensor> {
    if cfg.kind != AttackKind::Pgd {
        return Err(Error::domain("pgd called with a non-PGD attack config"));
    }
    pgd_with(x, cfg, offset, |adv| model.ce_input_gradient(adv, labels))
}

/// Inner maximization for TRADES: PGD on `KL(f(x) ‖ f(x'))` from a small Gaussian start.
pub fn trades_perturbation(model: &Model, x: &Tensor, cfg: &AttackConfig) -> Result<Tensor> {
    cfg.validate()?;
    check_box(x)?;
    let clean_logits = model.pass(x, None)?.logits;
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut start = x.clone();
    for i in 0..x.batch() {
        let mut rng = sample_rng(cfg.seed, 0, i);
        let a = start.sample_mut(i);
        for v in a.iter_mut() {
            *v += 0.001 * noise.sample(&mut rng);
        }
        project(x.sample(i), a, cfg.epsilon);
    }
    let no_init = AttackConfig { random_init: false, restarts: 1, ..cfg.clone() };
    let mut first = true;
    pgd_with(x, &no_init, 0, |adv| {
        let adv = if first {
            first = false;
            &start
        } else {
            adv
        };
        let pass = model.pass(adv, None)?;
        let mut grad = Vec::with_capacity(pass.logits.len());
        let mut losses = Vec::with_capacity(x.batch());
        for (zc, za) in clean_logits.rows().zip(pass.logits.rows()) {
            losses.push(kl_divergence(&softmax_unchecked(zc), &softmax_unchecked(za)));
            grad.extend(kl_logit_gradients(zc, za).1);
        }
        let grad = Tensor::new(pass.logits.shape().to_vec(), grad)?;
        Ok((losses, model.backprop(&pass, &grad)?.input))
    })
    .map(|adv| if cfg.iterations == 0 { start } else { adv })
}

/// Averaged two-sided SPSA estimate `mean_j [L(x+δv_j) − L(x−δv_j)]/(2δ)·v_j`.
pub fn spsa_gradient_estimate<F>(x: &[f64], directions: &[Vec<f64>], delta: f64, mut loss: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut est = vec![0.0; x.len()];
    let mut plus = x.to_vec();
    let mut minus = x.to_vec();
    for v in directions {
        for k in 0..x.len() {
            plus[k] = x[k] + delta * v[k];
            minus[k] = x[k] - delta * v[k];
        }
        let diff = (loss(&plus) - loss(&minus)) / (2.0 * delta);
        for (e, vk) in est.iter_mut().zip(v) {
            *e += diff * vk;
        }
    }
    let n = directions.len() as f64;
    est.iter_mut().for_each(|e| *e /= n);
    est
}

fn rademacher(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
}

/// Rows evaluated per loss call while probing.
const SPSA_CHUNK_ROWS: usize = 512;

/// SPSA ascent with Adam against a batched per-row loss.
///
/// `batch_loss(inputs, owners)` returns one loss per row; `owners[r]` is the
/// batch index of the sample that row `r` perturbs. One set of directions is
/// shared by every sample in the batch at each iteration.
pub fn spsa_with<F>(x: &Tensor, cfg: &AttackConfig, offset: usize, mut batch_loss: F) -> Result<Tensor>
where
    F: FnMut(&Tensor, &[usize]) -> Result<Vec<f64>>,
{
    let cfg_spsa = AttackConfig { kind: AttackKind::Spsa, ..cfg.clone() };
    cfg_spsa.validate()?;
    check_box(x)?;
    let p = &cfg.spsa;
    let n = x.batch();
    let d = x.sample_len();
    let mut adv = uniform_start(x, cfg, 0, offset);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(u64::MAX - offset as u64);
    let mut m = vec![0.0; n * d];
    let mut v = vec![0.0; n * d];
    let per_chunk = (SPSA_CHUNK_ROWS / (2 * n)).max(1);

    for t in 1..=cfg.iterations {
        let directions: Vec<Vec<f64>> = (0..p.directions).map(|_| rademacher(&mut rng, d)).collect();
        let mut est = vec![0.0; n * d];
        for chunk in directions.chunks(per_chunk) {
            let rows = 2 * n * chunk.len();
            let mut data = Vec::with_capacity(rows * d);
            let mut owners = Vec::with_capacity(rows);
            for dir in chunk {
                for i in 0..n {
                    let a = adv.sample(i);
                    data.extend(a.iter().zip(dir).map(|(x, v)| x + p.delta * v));
                    data.extend(a.iter().zip(dir).map(|(x, v)| x - p.delta * v));
                    owners.extend([i, i]);
                }
            }
            let mut shape = x.shape().to_vec();
            shape[0] = rows;
            let losses = batch_loss(&Tensor::new(shape, data)?, &owners)?;
            for (j, dir) in chunk.iter().enumerate() {
                for i in 0..n {
                    let r = 2 * (j * n + i);
                    let diff = (losses[r] - losses[r + 1]) / (2.0 * p.delta);
                    for (e, vk) in est[i * d..(i + 1) * d].iter_mut().zip(dir) {
                        *e += diff * vk;
                    }
                }
            }
        }
        let scale = 1.0 / p.directions as f64;
        let (c1, c2) = (1.0 - p.beta1.powi(t as i32), 1.0 - p.beta2.powi(t as i32));
        for i in 0..n {
            let a = adv.sample_mut(i);
            for (k, ak) in a.iter_mut().enumerate() {
                let idx = i * d + k;
                let g = est[idx] * scale;
                m[idx] = p.beta1 * m[idx] + (1.0 - p.beta1) * g;
                v[idx] = p.beta2 * v[idx] + (1.0 - p.beta2) * g * g;
                *ak += p.adam_lr * (m[idx] / c1) / ((v[idx] / c2).sqrt() + 1e-8);
            }
            project(x.sample(i), a, cfg.epsilon);
        }
    }
    Ok(adv)
}

/// Gradient-free attack on the cross-entropy of `model`.
pub fn spsa(model: &Model, x: &Tensor, labels: &[usize], cfg: &AttackConfig) -> Result<Tensor> {
    spsa_offset(model, x, labels, cfg, 0)
}

fn spsa_offset(model: &Model, x: &Tensor, labels: &[usize], cfg: &AttackConfig, offset: usize) -> Result<Tensor> {
    if labels.len() != x.batch() {
        return Err(Error::Shape { expected: vec![x.batch()], got: vec![labels.len()] });
    }
    let m = model.classes();
    let targets: Vec<TargetVector> = labels.iter().map(|&t| TargetVector::one_hot(m, t)).collect::<Result<_>>()?;
    spsa_with(x, cfg, offset, |batch, owners| {
        let logits = model.pass(batch, None)?.logits;
        logits.rows().zip(owners).map(|(row, &i)| cross_entropy(row, &targets[i])).collect()
    })
}

/// Runs the attack named by `cfg.kind`.
pub fn attack(model: &Model, x: &Tensor, labels: &[usize], cfg: &AttackConfig) -> Result<Tensor> {
    attack_offset(model, x, labels, cfg, 0)
}

fn attack_offset(model: &Model, x: &Tensor, labels: &[usize], cfg: &AttackConfig, offset: usize) -> Result<Tensor> {
    match cfg.kind {
        AttackKind::Pgd => pgd_offset(model, x, labels, cfg, offset),
        AttackKind::Spsa => spsa_offset(model, x, labels, cfg, offset),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateOutcome {
    pub adversarial: Tensor,
    /// Accuracy of the true model under PGD through its own hook.
    pub native_accuracy: f64,
    /// Accuracy of the true model under PGD through the surrogate.
    pub surrogate_accuracy: f64,
}

/// Generates PGD through `surrogate` and evaluates the result on `true_model`.
pub fn surrogate_pgd(
    true_model: &Model,
    surrogate: &Model,
    x: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<SurrogateOutcome> {
    if !true_model.same_parameter_shapes(surrogate) {
        return Err(Error::domain("surrogate parameters do not match the true model"));
    }
    let pgd_cfg = AttackConfig { kind: AttackKind::Pgd, ..cfg.clone() };
    let native = pgd(true_model, x, labels, &pgd_cfg)?;
    let adversarial = pgd(surrogate, x, labels, &pgd_cfg)?;
    Ok(SurrogateOutcome {
        native_accuracy: true_model.accuracy(&native, labels)?,
        surrogate_accuracy: true_model.accuracy(&adversarial, labels)?,
        adversarial,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyPoint {
    pub epsilon: f64,
    pub accuracy: f64,
    /// Binomial standard error `√(a(1−a)/n)`.
    pub stderr: f64,
    pub correct: usize,
    pub total: usize,
}

impl AccuracyPoint {
    fn new(epsilon: f64, correct: usize, total: usize) -> Self {
        let accuracy = correct as f64 / total as f64;
        Self { epsilon, accuracy, stderr: (accuracy * (1.0 - accuracy) / total as f64).sqrt(), correct, total }
    }
}

fn ordered_batches(ds: &Dataset, batch_size: usize) -> impl Iterator<Item = (usize, Batch)> + '_ {
    let bs = batch_size.max(1);
    (0..ds.len()).step_by(bs).map(move |start| {
        let idx: Vec<usize> = (start..(start + bs).min(ds.len())).collect();
        (start, Batch { images: ds.images.select(&idx), labels: idx.iter().map(|&i| ds.labels[i]).collect() })
    })
}

pub fn clean_accuracy(model: &Model, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::domain("empty dataset"));
    }
    model.accuracy(&ds.images, &ds.labels)
}

/// Accuracy under attack for each ε; ε = 0 is the clean accuracy.
pub fn evaluate_robust_accuracy(
    model: &Model,
    ds: &Dataset,
    epsilons: &[f64],
    cfg: &AttackConfig,
    batch_size: usize,
) -> Result<Vec<AccuracyPoint>> {
    if ds.is_empty() {
        return Err(Error::domain("empty dataset"));
    }
    let mut points = Vec::with_capacity(epsilons.len());
    for &epsilon in epsilons {
        let correct = if epsilon == 0.0 {
            count_correct(&model.predict(&ds.images)?, &ds.labels)
        } else {
            let cfg = AttackConfig { epsilon, ..cfg.clone() };
            let mut correct = 0;
            for (start, batch) in ordered_batches(ds, batch_size) {
                let adv = attack_offset(model, &batch.images, &batch.labels, &cfg, start)?;
                correct += count_correct(&model.predict(&adv)?, &batch.labels);
            }
            correct
        };
        points.push(AccuracyPoint::new(epsilon, correct, ds.len()));
    }
    Ok(points)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogatePoint {
    pub epsilon: f64,
    pub native_accuracy: f64,
    pub surrogate_accuracy: f64,
    pub surrogate_hook: ActivationKind,
}

/// Native versus surrogate PGD accuracy of `model` over an ε sweep.
pub fn evaluate_surrogate(
    model: &Model,
    surrogate_hook: ActivationKind,
    ds: &Dataset,
    epsilons: &[f64],
    cfg: &AttackConfig,
    batch_size: usize,
) -> Result<Vec<SurrogatePoint>> {
    if ds.is_empty() {
        return Err(Error::domain("empty dataset"));
    }
    let surrogate = model.with_hook_replaced(surrogate_hook);
    let mut points = Vec::with_capacity(epsilons.len());
    for &epsilon in epsilons {
        let cfg = AttackConfig { epsilon, kind: AttackKind::Pgd, ..cfg.clone() };
        let (mut native, mut transfer) = (0, 0);
        for (start, batch) in ordered_batches(ds, batch_size) {
            let a = pgd_offset(model, &batch.images, &batch.labels, &cfg, start)?;
            let b = pgd_offset(&surrogate, &batch.images, &batch.labels, &cfg, start)?;
            native += count_correct(&model.predict(&a)?, &batch.labels);
            transfer += count_correct(&model.predict(&b)?, &batch.labels);
        }
        points.push(SurrogatePoint {
            epsilon,
            native_accuracy: native as f64 / ds.len() as f64,
            surrogate_accuracy: transfer as f64 / ds.len() as f64,
            surrogate_hook,
        });
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;
    use crate::nn::{GammaMode, Layer};

    fn linear_binary(rows: &[Vec<f64>]) -> Model {
        let layer = Layer::dense_from(rows, vec![0.0; rows.len()]).unwrap();
        Model::new(vec![rows[0].len()], vec![layer]).unwrap()
    }

    #[test]
    fn zero_budget_returns_input() {
        let model = Model::mlp(vec![6], &[5], 3, 1).unwrap();
        let ds = synth_blobs(3, 4, 6, 0.2, 0).unwrap();
        let mut cfg = AttackConfig::pgd(0.0, 0.01, 10);
        assert_eq!(pgd(&model, &ds.images, &ds.labels, &cfg).unwrap(), ds.images);
        cfg.epsilon = 0.3;
        cfg.iterations = 0;
        cfg.random_init = false;
        assert_eq!(pgd(&model, &ds.images, &ds.labels, &cfg).unwrap(), ds.images);
        cfg.epsilon = -0.1;
        assert!(pgd(&model, &ds.images, &ds.labels, &cfg).is_err());

        let spsa_cfg = AttackConfig {
            kind: AttackKind::Spsa,
            epsilon: 0.0,
            iterations: 3,
            spsa: SpsaParams { directions: 8, ..SpsaParams::default() },
            ..AttackConfig::default()
        };
        assert_eq!(spsa(&model, &ds.images, &ds.labels, &spsa_cfg).unwrap(), ds.images);
        let bad = AttackConfig { spsa: SpsaParams { delta: 0.0, ..SpsaParams::default() }, ..spsa_cfg };
        assert!(spsa(&model, &ds.images, &ds.labels, &bad).is_err());
    }

    #[test]
    fn linear_model_matches_closed_form() {
        let w = vec![vec![0.5, -1.0, 2.0, 0.0, 0.3], vec![-0.5, 1.5, 1.0, 1.0, -0.2]];
        let model = linear_binary(&w);
        let x = Tensor::new(vec![2, 5], vec![0.5, 0.1, 0.95, 0.5, 0.02, 0.3, 0.7, 0.4, 0.99, 0.5]).unwrap();
        let labels = [0, 1];
        let eps = 0.1;
        for iterations in [1, 3, 10] {
            let cfg = AttackConfig { random_init: false, ..AttackConfig::pgd(eps, 0.15, iterations) };
            let adv = pgd(&model, &x, &labels, &cfg).unwrap();
            for (i, &t) in labels.iter().enumerate() {
                let other = 1 - t;
                for (k, (wo, wt)) in w[other].iter().zip(&w[t]).enumerate() {
                    let expected = (x.sample(i)[k] + eps * sign(wo - wt)).clamp(0.0, 1.0);
                    assert_eq!(adv.sample(i)[k], expected, "sample {i} coord {k}");
                }
            }
        }
    }

    #[test]
    fn pgd_loss_is_monotone_on_linear_model() {
        let model = linear_binary(&[vec![1.0, -2.0, 0.5], vec![-1.0, 0.5, 0.25]]);
        let x = Tensor::new(vec![1, 3], vec![0.4, 0.6, 0.5]).unwrap();
        let mut previous = f64::NEG_INFINITY;
        for iterations in 0..12 {
            let cfg = AttackConfig { random_init: false, ..AttackConfig::pgd(0.2, 0.03, iterations) };
            let adv = pgd(&model, &x, &[0], &cfg).unwrap();
            let (loss, _) = model.ce_input_gradient(&adv, &[0]).unwrap();
            assert!(loss[0] >= previous);
            previous = loss[0];
        }
    }

    #[test]
    fn seeded_attacks_are_deterministic() {
        let model = Model::mlp(vec![8], &[6], 3, 2).unwrap();
        let ds = synth_blobs(3, 5, 8, 0.2, 4).unwrap();
        let cfg = AttackConfig { seed: 17, ..AttackConfig::pgd(0.1, 0.02, 5) };
        let a = pgd(&model, &ds.images, &ds.labels, &cfg).unwrap();
        let b = pgd(&model, &ds.images, &ds.labels, &cfg).unwrap();
        assert_eq!(a, b);
        let spsa_cfg = AttackConfig {
            kind: AttackKind::Spsa,
            iterations: 2,
            spsa: SpsaParams { directions: 16, ..SpsaParams::default() },
            ..cfg
        };
        assert_eq!(
            spsa(&model, &ds.images, &ds.labels, &spsa_cfg).unwrap(),
            spsa(&model, &ds.images, &ds.labels, &spsa_cfg).unwrap()
        );
    }

    #[test]
    fn spsa_recovers_quadratic_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = 20;
        let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        let c: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        let directions: Vec<Vec<f64>> = (0..2048).map(|_| rademacher(&mut rng, d)).collect();
        let loss = |v: &[f64]| v.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let est = spsa_gradient_estimate(&x, &directions, 0.01, loss);
        let truth: Vec<f64> = x.iter().zip(&c).map(|(a, b)| 2.0 * (a - b)).collect();
        let dot: f64 = est.iter().zip(&truth).map(|(a, b)| a * b).sum();
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(dot / (norm(&est) * norm(&truth)) > 0.9);
    }

    #[test]
    fn spsa_constant_loss_leaves_iterate_alone() {
        let x = Tensor::new(vec![2, 3], vec![0.1, 0.5, 0.9, 0.0, 1.0, 0.3]).unwrap();
        let cfg = AttackConfig {
            kind: AttackKind::Spsa,
            epsilon: 0.2,
            iterations: 5,
            random_init: false,
            spsa: SpsaParams { directions: 32, ..SpsaParams::default() },
            ..AttackConfig::default()
        };
        let out = spsa_with(&x, &cfg, 0, |batch, _| Ok(vec![3.0; batch.batch()])).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn surrogate_identical_hook_matches_pgd() {
        let model = Model::mlp(vec![6], &[5], 3, 3)
            .unwrap()
            .with_hook(ActivationKind::Blf, GammaMode::Fixed { gamma: 1.0 })
            .unwrap();
        let ds = synth_blobs(3, 4, 6, 0.2, 0).unwrap();
        let cfg = AttackConfig::pgd(0.1, 0.02, 5);
        let out = surrogate_pgd(&model, &model, &ds.images, &ds.labels, &cfg).unwrap();
        assert_eq!(out.adversarial, pgd(&model, &ds.images, &ds.labels, &cfg).unwrap());
        assert_eq!(out.native_accuracy, out.surrogate_accuracy);

        let other = Model::mlp(vec![6], &[4], 3, 3).unwrap();
        assert!(surrogate_pgd(&model, &other, &ds.images, &ds.labels, &cfg).is_err());
    }

    #[test]
    fn surrogate_matches_native_in_monotone_region() {
        // small weights keep |pre-logits| < 2, where BLF and tanh are both increasing
        let rows = vec![vec![0.3, -0.2, 0.1, 0.4], vec![-0.1, 0.25, -0.3, 0.2], vec![0.05, 0.1, 0.2, -0.35]];
        let model = linear_binary(&rows).with_hook(ActivationKind::Blf, GammaMode::Fixed { gamma: 1.0 }).unwrap();
        let surrogate = model.with_hook_replaced(ActivationKind::Tanh);
        let ds = synth_blobs(3, 6, 4, 0.2, 1).unwrap();
        let pre = model.forward(&ds.images).unwrap().pre_logits;
        assert!(pre.data().iter().all(|z| z.abs() < 2.0));
        let cfg = AttackConfig { random_init: false, ..AttackConfig::pgd(0.05, 0.05, 1) };
        let out = surrogate_pgd(&model, &surrogate, &ds.images, &ds.labels, &cfg).unwrap();
        assert_eq!(out.adversarial, pgd(&model, &ds.images, &ds.labels, &cfg).unwrap());
    }

    #[test]
    fn robust_accuracy_examples() {
        let ds = synth_blobs(10, 100, 16, 0.2, 5).unwrap();
        let model = Model::mlp(vec![16], &[], 10, 123).unwrap();
        let cfg = AttackConfig::pgd(0.1, 0.02, 3);
        let points = evaluate_robust_accuracy(&model, &ds, &[0.0, 0.1], &cfg, 128).unwrap();
        assert_eq!(points[0].accuracy, clean_accuracy(&model, &ds).unwrap());
        assert!(points[1].accuracy <= points[0].accuracy + 0.05);

        // a constant classifier that always answers class 0
        let only_zero = crate::data::Dataset::new(ds.images.clone(), vec![0; ds.len()], "zeros").unwrap();
        let constant = Model::new(
            vec![16],
            vec![Layer::dense_from(&[vec![0.0; 16], vec![0.0; 16]], vec![1.0, 0.0]).unwrap()],
        )
        .unwrap();
        for p in evaluate_robust_accuracy(&constant, &only_zero, &[0.0, 0.1, 0.3], &cfg, 64).unwrap() {
            assert_eq!(p.accuracy, 1.0);
        }
        let empty = crate::data::Dataset::new(Tensor::zeros(vec![0, 16]), vec![], "empty").unwrap();
        assert!(evaluate_robust_accuracy(&model, &empty, &[0.0], &cfg, 8).is_err());
    }

    #[test]
    fn trades_perturbation_stays_in_ball() {
        let model = Model::mlp(vec![6], &[5], 3, 3).unwrap();
        let ds = synth_blobs(3, 4, 6, 0.2, 0).unwrap();
        let cfg = AttackConfig::pgd(0.1, 0.02, 10);
        let adv = trades_perturbation(&model, &ds.images, &cfg).unwrap();
        for (a, x) in adv.data().iter().zip(ds.images.data()) {
            assert!((a - x).abs() <= 0.1 + 1e-12 && (0.0..=1.0).contains(a));
        }
        assert_ne!(adv, ds.images);
    }
}
