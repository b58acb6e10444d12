//! Loss families over a single logit vector, with exact logit-space gradients.

use serde::{Deserialize, Serialize};

use crate::activations::softmax_unchecked;
use crate::error::{Error, Result};

/// Floor added inside logarithms of the KL term.
pub const KL_FLOOR: f64 = 1e-12;

/// Target distribution over `M` classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetVector {
    probs: Vec<f64>,
    target_index: usize,
}

impl TargetVector {
    pub fn one_hot(classes: usize, target: usize) -> Result<Self> {
        if classes == 0 || target >= classes {
            return Err(Error::domain(format!("target {target} out of range for {classes} classes")));
        }
        let mut probs = vec![0.0; classes];
        probs[target] = 1.0;
        Ok(Self { probs, target_index: target })
    }

    /// `1−α` on the target and `α/(M−1)` everywhere else.
    pub fn smoothed(classes: usize, target: usize, alpha: f64) -> Result<Self> {
        if classes < 2 || target >= classes {
            return Err(Error::domain(format!("target {target} out of range for {classes} classes")));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::domain(format!("label smoothing alpha must lie in (0,1), got {alpha}")));
        }
        let mut probs = vec![alpha / (classes - 1) as f64; classes];
        probs[target] = 1.0 - alpha;
        Ok(Self { probs, target_index: target })
    }

    /// Arbitrary distribution; the target index is its argmax.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::domain("target probabilities must be finite and nonnegative"));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::domain(format!("target probabilities sum to {sum}")));
        }
        let target_index = argmax(&probs);
        Ok(Self { probs, target_index })
    }

    /// The target a loss family trains against for class `target`.
    pub fn for_spec(spec: &LossSpec, classes: usize, target: usize) -> Result<Self> {
        match *spec {
            LossSpec::LabelSmoothing { alpha } => Self::smoothed(classes, target, alpha),
            _ => Self::one_hot(classes, target),
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn target_index(&self) -> usize {
        self.target_index
    }

    pub fn classes(&self) -> usize {
        self.probs.len()
    }

    /// Shannon entropy, the lower bound of cross-entropy against this target.
    pub fn entropy(&self) -> f64 {
        self.probs.iter().filter(|&&p| p > 0.0).map(|p| -p * p.ln()).sum()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossSpec {
    #[default]
    CrossEntropy,
    LabelSmoothing { alpha: f64 },
    LogitSqueezing { lambda: f64 },
    Trades { beta: f64 },
}


impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LossSpec::CrossEntropy => Ok(()),
            LossSpec::LabelSmoothing { alpha } if alpha > 0.0 && alpha < 1.0 => Ok(()),
            LossSpec::LogitSqueezing { lambda } if lambda > 0.0 && lambda.is_finite() => Ok(()),
            // β = 0 is admitted so TRADES can be compared against plain CE.
            LossSpec::Trades { beta } if beta >= 0.0 && beta.is_finite() => Ok(()),
            other => Err(Error::domain(format!("loss hyperparameter out of range: {other:?}"))),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            LossSpec::CrossEntropy => "ce".into(),
            LossSpec::LabelSmoothing { alpha } => format!("lsm(alpha={alpha})"),
            LossSpec::LogitSqueezing { lambda } => format!("lsq(lambda={lambda})"),
            LossSpec::Trades { beta } => format!("trades(beta={beta})"),
        }
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn check_dims(z: &[f64], p: &TargetVector) -> Result<()> {
    if z.len() != p.classes() {
        return Err(Error::Shape { expected: vec![p.classes()], got: vec![z.len()] });
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    Ok(())
}

pub fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `−Σ p_k log softmax(z)_k`.
pub fn cross_entropy(z: &[f64], p: &TargetVector) -> Result<f64> {
    check_dims(z, p)?;
    let lse = log_sum_exp(z);
    Ok(p.probs.iter().zip(z).map(|(pk, zk)| pk * (lse - zk)).sum())
}

/// Loss value for one logit vector. TRADES without an adversarial partner is plain CE.
pub fn loss_value(spec: &LossSpec, z: &[f64], p: &TargetVector) -> Result<f64> {
    let ce = cross_entropy(z, p)?;
    Ok(match *spec {
        LossSpec::LogitSqueezing { lambda } => ce + 0.5 * lambda * z.iter().map(|v| v * v).sum::<f64>(),
        _ => ce,
    })
}

/// Gradient of [`loss_value`] with respect to the logits.
pub fn loss_gradient(spec: &LossSpec, z: &[f64], p: &TargetVector) -> Result<Vec<f64>> {
    check_dims(z, p)?;
    let s = softmax_unchecked(z);
    let mut grad: Vec<f64> = s.iter().zip(&p.probs).map(|(sk, pk)| sk - pk).collect();
    if let LossSpec::LogitSqueezing { lambda } = *spec {
        for (g, zk) in grad.iter_mut().zip(z) {
            *g += lambda * zk;
        }
    }
    Ok(grad)
}

/// `Σ p (ln(p+ε) − ln(q+ε))` with the floor `ε` = [`KL_FLOOR`].
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(pk, qk)| pk * ((pk + KL_FLOOR).ln() - (qk + KL_FLOOR).ln()))
        .sum()
}

/// `CE(z_clean, p) + β·KL(softmax(z_clean) ‖ softmax(z_adv))`.
pub fn trades_loss(z_clean: &[f64], z_adv: &[f64], p: &TargetVector, beta: f64) -> Result<f64> {
    check_dims(z_adv, p)?;
    let ce = cross_entropy(z_clean, p)?;
    let kl = kl_divergence(&softmax_unchecked(z_clean), &softmax_unchecked(z_adv));
    Ok(ce + beta * kl)
}

/// Gradient of the floored KL term with respect to `(z_clean, z_adv)`.
pub fn kl_logit_gradients(z_clean: &[f64], z_adv: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let pc = softmax_unchecked(z_clean);
    let qa = softmax_unchecked(z_adv);

    // d/dz_adv: −r_j + q_j Σr, with r_k = p_k q_k / (q_k + ε)
    let r: Vec<f64> = pc.iter().zip(&qa).map(|(p, q)| p * q / (q + KL_FLOOR)).collect();
    let r_sum: f64 = r.iter().sum();
    let g_adv = qa.iter().zip(&r).map(|(q, rj)| q * r_sum - rj).collect();

    // d/dz_clean: p_j (a_j − Σ a_k p_k), with a_k = ∂KL/∂p_k
    let a: Vec<f64> = pc
        .iter()
        .zip(&qa)
        .map(|(p, q)| (p + KL_FLOOR).ln() - (q + KL_FLOOR).ln() + p / (p + KL_FLOOR))
        .collect();
    let mean_a: f64 = a.iter().zip(&pc).map(|(ak, pk)| ak * pk).sum();
    let g_clean = pc.iter().zip(&a).map(|(p, aj)| p * (aj - mean_a)).collect();
    (g_clean, g_adv)
}

/// Gradients of [`trades_loss`] with respect to `(z_clean, z_adv)`.
pub fn trades_gradient(
    z_clean: &[f64],
    z_adv: &[f64],
    p: &TargetVector,
    beta: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dims(z_clean, p)?;
    check_dims(z_adv, p)?;
    let mut g_clean = loss_gradient(&LossSpec::CrossEntropy, z_clean, p)?;
    let (kl_clean, kl_adv) = kl_logit_gradients(z_clean, z_adv);
    for (g, k) in g_clean.iter_mut().zip(&kl_clean) {
        *g += beta * k;
    }
    let g_adv = kl_adv.into_iter().map(|k| beta * k).collect();
    Ok((g_clean, g_adv))
}
