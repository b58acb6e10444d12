//! Scalar functions installed just before softmax.
//!
//! Every function here maps a pre-logit `z` to a logit `γ·g(z)`. The bounded
//! logit function (BLF) is the interesting one: unlike `tanh` it has a finite
//! argmax and argmin, so the pre-logits that minimize cross-entropy stay finite.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound `(√5+1)/2` on `|g(z)|` for the bounded logit function.
pub const BLF_BOUND: f64 = 1.618_033_988_749_895;

/// Absolute tolerance of the BLF critical-point bisection.
pub const CRITICAL_POINT_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Identity,
    Tanh,
    Sigmoid,
    Blf,
    SineWave,
    SingleWave,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 6] = [
        ActivationKind::Identity,
        ActivationKind::Tanh,
        ActivationKind::Sigmoid,
        ActivationKind::Blf,
        ActivationKind::SineWave,
        ActivationKind::SingleWave,
    ];

    /// `g(z)` without the scale.
    pub fn value(self, z: f64) -> f64 {
        match self {
            ActivationKind::Identity => z,
            ActivationKind::Tanh => z.tanh(),
            ActivationKind::Sigmoid => sigmoid(z),
            ActivationKind::Blf => blf(z),
            ActivationKind::SineWave => z.sin(),
            ActivationKind::SingleWave => {
                let sech = 1.0 / z.cosh();
                0.25 * z.sin() * sech * sech
            }
        }
    }

    /// `g'(z)` without the scale.
    pub fn slope(self, z: f64) -> f64 {
        match self {
            ActivationKind::Identity => 1.0,
            ActivationKind::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            ActivationKind::Sigmoid => sigmoid(z) * sigmoid(-z),
            ActivationKind::Blf => blf_slope(z),
            ActivationKind::SineWave => z.cos(),
            ActivationKind::SingleWave => {
                // sin(z)/(e^z+e^-z)^2 = sin(z)·sech²(z)/4
                let sech = 1.0 / z.cosh();
                0.25 * sech * sech * (z.cos() - 2.0 * z.sin() * z.tanh())
            }
        }
    }
}

impl std::fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            ActivationKind::Identity => "identity",
            ActivationKind::Tanh => "tanh",
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Blf => "blf",
            ActivationKind::SineWave => "sine_wave",
            ActivationKind::SingleWave => "single_wave",
        };
        f.write_str(name)
    }
}

/// A scaled activation `z ↦ γ·g(z)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundedFn {
    kind: ActivationKind,
    gamma: f64,
}

impl BoundedFn {
    pub fn new(kind: ActivationKind, gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::domain(format!("gamma must be positive and finite, got {gamma}")));
        }
        Ok(Self { kind, gamma })
    }

    pub fn kind(&self) -> ActivationKind {
        self.kind
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn evaluate(&self, z: f64) -> Result<f64> {
        check_finite(z)?;
        Ok(self.gamma * self.kind.value(z))
    }

    pub fn derivative(&self, z: f64) -> Result<f64> {
        check_finite(z)?;
        Ok(self.gamma * self.kind.slope(z))
    }
}

fn check_finite(z: f64) -> Result<()> {
    if z.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("activation input must be finite, got {z}")))
    }
}

/// Logistic sigmoid, evaluated without overflow for either sign.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Bounded logit function `g(z) = 2{zσ(z) + σ(z) − zσ²(z)} − 1`,
/// evaluated as `2σ(z)(1 + zσ(−z)) − 1`.
pub fn blf(z: f64) -> f64 {
    2.0 * sigmoid(z) * (1.0 + z * sigmoid(-z)) - 1.0
}

/// `g'(z) = 2σ(z)(1−σ(z))(2 + z − 2zσ(z))`.
pub fn blf_slope(z: f64) -> f64 {
    2.0 * sigmoid(z) * sigmoid(-z) * blf_stationarity(z)
}

/// `f(z) = 2 + z − 2zσ(z)`; its roots are the finite critical points of BLF.
pub fn blf_stationarity(z: f64) -> f64 {
    // z − 2zσ(z) = z(σ(−z) − σ(z))
    2.0 + z * (sigmoid(-z) - sigmoid(z))
}

/// Finite extrema of the bounded logit function.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoints {
    pub z_max: f64,
    pub z_min: f64,
    pub g_max: f64,
    pub g_min: f64,
}

/// Locates the BLF maximum by bisection on `f(z)` over `(2, √5+1)`.
///
/// `g_max` comes from the identity `g(z*) = z*/2`, which holds at any root of `f`.
pub fn blf_critical_points() -> CriticalPoints {
    let hi = 5f64.sqrt() + 1.0;
    let z_max = bisect(blf_stationarity, 2.0, hi, CRITICAL_POINT_TOL)
        .expect("f changes sign on (2, sqrt(5)+1)");
    CriticalPoints {
        z_max,
        z_min: -z_max,
        g_max: z_max / 2.0,
        g_min: -z_max / 2.0,
    }
}

/// Plain bisection on a bracketing interval; stops once the bracket is narrower than `tol`.
pub fn bisect<F>(f: F, lo: f64, hi: f64, tol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if !(lo < hi) || !(tol > 0.0) {
        return Err(Error::domain("bisection needs lo < hi and tol > 0"));
    }
    let (mut a, mut b) = (lo, hi);
    let mut fa = f(a);
    let fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::domain(format!("no sign change on [{lo}, {hi}]")));
    }
    while b - a > tol {
        let mid = 0.5 * (a + b);
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == fa.signum() {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

/// Softmax with max-subtraction.
pub fn softmax(z: &[f64]) -> Result<Vec<f64>> {
    if z.is_empty() {
        return Err(Error::domain("softmax of an empty vector"));
    }
    if let Some(bad) = z.iter().find(|v| !v.is_finite()) {
        return Err(Error::domain(format!("softmax input must be finite, got {bad}")));
    }
    Ok(softmax_unchecked(z))
}

pub(crate) fn softmax_unchecked(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `log(1 + e^z)`, stable for large `|z|`.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    }
}
