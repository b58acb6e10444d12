//! Free-logit experiments.
//!
//! Each data point's pre-logit vector is treated as a free variable and
//! minimized by plain gradient descent from zero. The optima (or their absence)
//! can then be compared with the closed-form predictions for cross-entropy,
//! label smoothing, logit squeezing, `tanh`/`sigmoid`, and BLF.

use serde::{Deserialize, Serialize};

use crate::activations::{blf_critical_points, softmax_unchecked, ActivationKind, BoundedFn, BLF_BOUND};
use crate::error::{Error, Result};
use crate::losses::{log_sum_exp, loss_gradient, loss_value, LossSpec, TargetVector};

/// Gradient L∞ below which a run counts as converged.
pub const CONVERGENCE_TOL: f64 = 1e-8;

/// Default norm threshold for calling a run divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreeLogitConfig {
    pub loss: LossSpec,
    pub activation: ActivationKind,
    pub gamma: f64,
    pub classes: usize,
    pub target: usize,
    pub steps: usize,
    pub lr: f64,
    /// Record every n-th step (step 0 and the last step are always kept).
    #[serde(default = "one")]
    pub record_every: usize,
}

fn one() -> usize {
    1
}

impl FreeLogitConfig {
    pub fn new(loss: LossSpec, classes: usize, target: usize, steps: usize, lr: f64) -> Self {
        Self {
            loss,
            activation: ActivationKind::Identity,
            gamma: 1.0,
            classes,
            target,
            steps,
            lr,
            record_every: 1,
        }
    }

    pub fn with_activation(mut self, activation: ActivationKind, gamma: f64) -> Self {
        self.activation = activation;
        self.gamma = gamma;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub pre_logits: Vec<f64>,
    pub logits: Vec<f64>,
    pub loss: f64,
    pub grad_linf: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreeLogitRun {
    pub config: FreeLogitConfig,
    pub trajectory: Vec<TrajectoryPoint>,
    pub converged: bool,
}

impl FreeLogitRun {
    pub fn last(&self) -> &TrajectoryPoint {
        self.trajectory.last().expect("trajectory always holds step 0")
    }

    /// Recorded point at exactly `step`, if any.
    pub fn at(&self, step: usize) -> Option<&TrajectoryPoint> {
        self.trajectory
            .binary_search_by_key(&step, |p| p.step)
            .ok()
            .map(|i| &self.trajectory[i])
    }
}

fn linf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Loss and gradient with respect to the pre-logits.
fn evaluate_point(
    hook: &BoundedFn,
    loss: &LossSpec,
    target: &TargetVector,
    pre: &[f64],
) -> (Vec<f64>, f64, Vec<f64>) {
    let kind = hook.kind();
    let gamma = hook.gamma();
    let logits: Vec<f64> = pre.iter().map(|&w| gamma * kind.value(w)).collect();
    let value = loss_value(loss, &logits, target).expect("dimensions checked");
    let mut grad = loss_gradient(loss, &logits, target).expect("dimensions checked");
    for (g, &w) in grad.iter_mut().zip(pre) {
        *g *= gamma * kind.slope(w);
    }
    (logits, value, grad)
}

/// Gradient descent on one pre-logit vector, starting from zero.
pub fn optimize_free_logits(config: &FreeLogitConfig) -> Result<FreeLogitRun> {
    if config.classes < 2 {
        return Err(Error::domain("free-logit runs need at least two classes"));
    }
    if !(config.lr > 0.0 && config.lr.is_finite()) {
        return Err(Error::domain(format!("learning rate must be positive, got {}", config.lr)));
    }
    if config.steps == 0 {
        return Err(Error::domain("step budget must be positive"));
    }
    config.loss.validate()?;
    let hook = BoundedFn::new(config.activation, config.gamma)?;
    let target = TargetVector::for_spec(&config.loss, config.classes, config.target)?;
    let every = config.record_every.max(1);

    let mut pre = vec![0.0; config.classes];
    let mut trajectory = Vec::new();
    let mut converged = false;
    for step in 0..=config.steps {
        let (logits, value, grad) = evaluate_point(&hook, &config.loss, &target, &pre);
        let grad_linf = linf(&grad);
        converged = grad_linf < CONVERGENCE_TOL;
        let last = converged || step == config.steps;
        if step % every == 0 || last {
            trajectory.push(TrajectoryPoint {
                step,
                pre_logits: pre.clone(),
                logits,
                loss: value,
                grad_linf,
            });
        }
        if last {
            break;
        }
        for (w, g) in pre.iter_mut().zip(&grad) {
            *w -= config.lr * g;
        }
    }
    Ok(FreeLogitRun { config: config.clone(), trajectory, converged })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelSmoothingReport {
    pub alpha: f64,
    pub classes: usize,
    pub target_prob: f64,
    pub target_residual: f64,
    pub off_target_residual: f64,
    /// Max residual of the log fixed-point equations for the optimal logits.
    pub fixed_point_residual: f64,
    pub grad_linf: f64,
    pub converged: bool,
}

/// Compares a converged label-smoothing run with its closed-form optimum.
pub fn check_label_smoothing_optimum(alpha: f64, run: &FreeLogitRun) -> Result<LabelSmoothingReport> {
    match run.config.loss {
        LossSpec::LabelSmoothing { alpha: a } if a == alpha => {}
        other => return Err(Error::domain(format!("run used {other:?}, not label smoothing with alpha={alpha}"))),
    }
    let point = run.last();
    let z = &point.logits;
    let m = z.len();
    let t = run.config.target;
    let s = softmax_unchecked(z);
    let off = alpha / (m - 1) as f64;
    let target_residual = (s[t] - (1.0 - alpha)).abs();
    let off_target_residual = (0..m).filter(|&k| k != t).map(|k| (s[k] - off).abs()).fold(0.0, f64::max);

    let lse_without = |k: usize| {
        let rest: Vec<f64> = (0..m).filter(|&j| j != k).map(|j| z[j]).collect();
        log_sum_exp(&rest)
    };
    let mut fixed_point_residual: f64 = 0.0;
    for (k, &zk) in z.iter().enumerate() {
        let ratio = if k == t { (1.0 - alpha) / alpha } else { alpha / (m as f64 - 1.0 - alpha) };
        let rhs = ratio.ln() + lse_without(k);
        fixed_point_residual = fixed_point_residual.max((zk - rhs).abs());
    }
    Ok(LabelSmoothingReport {
        alpha,
        classes: m,
        target_prob: s[t],
        target_residual,
        off_target_residual,
        fixed_point_residual,
        grad_linf: point.grad_linf,
        converged: point.grad_linf <= 1e-6,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogitSqueezingReport {
    pub lambda: f64,
    pub fixed_point_residual: f64,
    pub target_logit: f64,
    pub max_abs_logit: f64,
    pub within_box: bool,
    pub grad_linf: f64,
    pub converged: bool,
}

/// Checks `z_t = (1 − s_t)/λ`, `z_k = −s_k/λ` and the box `0 ≤ z_t ≤ 1/λ`, `−1/λ ≤ z_k ≤ 0`.
pub fn check_logit_squeezing_optimum(lambda: f64, run: &FreeLogitRun) -> Result<LogitSqueezingReport> {
    match run.config.loss {
        LossSpec::LogitSqueezing { lambda: l } if l == lambda => {}
        other => return Err(Error::domain(format!("run used {other:?}, not logit squeezing with lambda={lambda}"))),
    }
    let point = run.last();
    let z = &point.logits;
    let t = run.config.target;
    let s = softmax_unchecked(z);
    let mut residual: f64 = 0.0;
    let mut within_box = true;
    for (k, (&zk, &sk)) in z.iter().zip(&s).enumerate() {
        let (rhs, inside) = if k == t {
            ((1.0 - sk) / lambda, (0.0..=1.0 / lambda).contains(&zk))
        } else {
            (-sk / lambda, (-1.0 / lambda..=0.0).contains(&zk))
        };
        residual = residual.max((zk - rhs).abs());
        within_box &= inside;
    }
    Ok(LogitSqueezingReport {
        lambda,
        fixed_point_residual: residual,
        target_logit: z[t],
        max_abs_logit: linf(z),
        within_box,
        grad_linf: point.grad_linf,
        converged: point.grad_linf <= 1e-6,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub steps: Vec<usize>,
    pub gaps: Vec<f64>,
    pub strictly_increasing: bool,
}

/// `‖z_A(T) − z_B(T)‖∞` at each requested step for two runs on different labels.
pub fn lipschitz_evidence(a: &FreeLogitRun, b: &FreeLogitRun, steps: &[usize]) -> Result<GapReport> {
    if a.config.classes != b.config.classes {
        return Err(Error::domain("runs must share the class count"));
    }
    let mut gaps = Vec::with_capacity(steps.len());
    for &step in steps {
        let (pa, pb) = match (a.at(step), b.at(step)) {
            (Some(pa), Some(pb)) => (pa, pb),
            _ => return Err(Error::domain(format!("step {step} not recorded in both runs"))),
        };
        let gap = pa.logits.iter().zip(&pb.logits).fold(0.0, |m: f64, (x, y)| m.max((x - y).abs()));
        gaps.push(gap);
    }
    let strictly_increasing = gaps.windows(2).all(|w| w[1] > w[0]);
    Ok(GapReport { steps: steps.to_vec(), gaps, strictly_increasing })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub final_norm: f64,
    pub threshold: f64,
    /// Pre-logit L∞ is non-decreasing over the last half of the trajectory.
    pub monotone_tail: bool,
    pub diverged: bool,
    /// Largest |logit| over the run, relevant for bounded hooks.
    pub max_abs_logit: f64,
}

/// Divergence means: final pre-logit L∞ above `threshold` and monotone growth over the last half.
pub fn divergence_evidence(run: &FreeLogitRun, threshold: f64) -> DivergenceReport {
    let norms: Vec<f64> = run.trajectory.iter().map(|p| linf(&p.pre_logits)).collect();
    let final_norm = *norms.last().expect("nonempty trajectory");
    let tail = &norms[norms.len() / 2..];
    let monotone_tail = tail.windows(2).all(|w| w[1] >= w[0]);
    let max_abs_logit = run.trajectory.iter().map(|p| linf(&p.logits)).fold(0.0, f64::max);
    DivergenceReport {
        final_norm,
        threshold,
        monotone_tail,
        diverged: final_norm > threshold && monotone_tail,
        max_abs_logit,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlfOptimumReport {
    pub gamma: f64,
    pub z_max: f64,
    /// Max over classes of |pre-logit − (±z_max)|.
    pub pre_logit_error: f64,
    pub pre_logit_linf: f64,
    /// γ < |logit| < γ(√5+1)/2 holds for every class.
    pub logit_bounds_hold: bool,
    pub converged: bool,
}

/// Compares a BLF run with the predicted optimum `+z_max` on the target and `−z_max` elsewhere.
pub fn check_blf_optimum(run: &FreeLogitRun) -> Result<BlfOptimumReport> {
    if run.config.activation != ActivationKind::Blf {
        return Err(Error::domain("run does not use the BLF hook"));
    }
    let cp = blf_critical_points();
    let point = run.last();
    let gamma = run.config.gamma;
    let t = run.config.target;
    let pre_logit_error = point
        .pre_logits
        .iter()
        .enumerate()
        .map(|(k, &w)| (w - if k == t { cp.z_max } else { cp.z_min }).abs())
        .fold(0.0, f64::max);
    let logit_bounds_hold = point
        .logits
        .iter()
        .all(|l| l.abs() > gamma && l.abs() < gamma * BLF_BOUND);
    Ok(BlfOptimumReport {
        gamma,
        z_max: cp.z_max,
        pre_logit_error,
        pre_logit_linf: linf(&point.pre_logits),
        logit_bounds_hold,
        converged: run.converged,
    })
}

/// One named pass/fail entry in the theorem suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub details: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheoremSuiteConfig {
    /// Class counts for the label-smoothing sweep.
    pub smoothing_classes: Vec<usize>,
    pub smoothing_alpha: f64,
    pub squeezing_lambdas: Vec<f64>,
    pub squeezing_classes: usize,
    pub gammas: Vec<f64>,
    pub divergence_steps: usize,
    pub divergence_threshold: f64,
    /// Step size for the identity-hook cross-entropy divergence run.
    pub ce_lr: f64,
    /// Step size for the tanh/sigmoid divergence runs.
    pub bounded_lr: f64,
    /// Step size for the Lipschitz gap runs.
    pub gap_lr: f64,
    pub gap_steps: Vec<usize>,
    pub blf_classes: usize,
    pub max_steps: usize,
}

impl Default for TheoremSuiteConfig {
    fn default() -> Self {
        Self {
            smoothing_classes: (2..=10).collect(),
            smoothing_alpha: 0.1,
            squeezing_lambdas: vec![0.5, 1.0, 100.0],
            squeezing_classes: 10,
            gammas: vec![0.1, 0.5, 1.0],
            divergence_steps: 10_000,
            divergence_threshold: DIVERGENCE_THRESHOLD,
            ce_lr: 2.0,
            bounded_lr: 10.0,
            gap_lr: 0.1,
            gap_steps: vec![100, 1000, 10_000],
            blf_classes: 10,
            max_steps: 200_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremSuiteReport {
    pub z_max: f64,
    pub g_max: f64,
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

fn check(name: impl Into<String>, passed: bool, details: impl Serialize) -> CheckResult {
    CheckResult {
        name: name.into(),
        passed,
        details: serde_json::to_value(details).expect("report types serialize"),
    }
}

/// Runs every free-logit check and collects pass/fail results.
pub fn run_theorem_suite(cfg: &TheoremSuiteConfig) -> Result<TheoremSuiteReport> {
    let cp = blf_critical_points();
    let mut checks = Vec::new();

    checks.push(check(
        "blf_critical_point",
        cp.z_max > 2.0 && cp.z_max < 5f64.sqrt() + 1.0 && (crate::activations::blf(cp.z_max) - cp.g_max).abs() < 1e-10,
        cp,
    ));

    // Unbounded logits under one-hot cross-entropy.
    let ce = optimize_free_logits(&FreeLogitConfig::new(
        LossSpec::CrossEntropy,
        2,
        0,
        cfg.divergence_steps,
        cfg.ce_lr,
    ))?;
    let report = divergence_evidence(&ce, cfg.divergence_threshold);
    checks.push(check("ce_divergence", report.diverged, report));

    let steps = cfg.gap_steps.iter().copied().max().unwrap_or(0).max(1);
    for m in [2usize, 10] {
        let a = optimize_free_logits(&FreeLogitConfig::new(LossSpec::CrossEntropy, m, 0, steps, cfg.gap_lr))?;
        let b = optimize_free_logits(&FreeLogitConfig::new(LossSpec::CrossEntropy, m, 1, steps, cfg.gap_lr))?;
        let report = lipschitz_evidence(&a, &b, &cfg.gap_steps)?;
        checks.push(check(format!("lipschitz_gap_growth_m{m}"), report.strictly_increasing, report));
    }

    for &m in &cfg.smoothing_classes {
        let spec = LossSpec::LabelSmoothing { alpha: cfg.smoothing_alpha };
        let run = optimize_free_logits(&FreeLogitConfig::new(spec, m, 0, cfg.max_steps, 1.0))?;
        let report = check_label_smoothing_optimum(cfg.smoothing_alpha, &run)?;
        let passed = report.converged && report.target_residual < 1e-4 && report.off_target_residual < 1e-4;
        checks.push(check(format!("label_smoothing_optimum_m{m}"), passed, report));
    }

    for &lambda in &cfg.squeezing_lambdas {
        let spec = LossSpec::LogitSqueezing { lambda };
        // the Hessian is bounded by 1/2 + λ
        let lr = 1.0 / (0.5 + lambda);
        let run = optimize_free_logits(&FreeLogitConfig::new(spec, cfg.squeezing_classes, 0, cfg.max_steps, lr))?;
        let report = check_logit_squeezing_optimum(lambda, &run)?;
        let passed = report.converged && report.fixed_point_residual < 1e-6 && report.within_box;
        checks.push(check(format!("logit_squeezing_optimum_lambda{lambda}"), passed, report));
    }

    for &gamma in &cfg.gammas {
        for (kind, lower) in [(ActivationKind::Tanh, -gamma), (ActivationKind::Sigmoid, 0.0)] {
            let run = optimize_free_logits(
                &FreeLogitConfig::new(LossSpec::CrossEntropy, 2, 0, cfg.divergence_steps, cfg.bounded_lr / gamma)
                    .with_activation(kind, gamma),
            )?;
            let report = divergence_evidence(&run, cfg.divergence_threshold);
            let bounded = run
                .trajectory
                .iter()
                .all(|p| p.logits.iter().all(|&l| l > lower && l < gamma));
            checks.push(check(format!("{kind}_divergence_gamma{gamma}"), report.diverged && bounded, report));
        }

        let run = optimize_free_logits(
            &FreeLogitConfig::new(LossSpec::CrossEntropy, cfg.blf_classes, 0, cfg.max_steps, 1.0 / gamma)
                .with_activation(ActivationKind::Blf, gamma),
        )?;
        let report = check_blf_optimum(&run)?;
        let passed = report.converged && report.pre_logit_error < 1e-3 && report.logit_bounds_hold;
        checks.push(check(format!("blf_optimum_gamma{gamma}"), passed, report));
    }

    let passed = checks.iter().all(|c| c.passed);
    Ok(TheoremSuiteReport { z_max: cp.z_max, g_max: cp.g_max, checks, passed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = FreeLogitConfig::new(LossSpec::CrossEntropy, 2, 0, 10, 0.0);
        assert!(optimize_free_logits(&cfg).is_err());
        cfg.lr = 0.1;
        cfg.steps = 0;
        assert!(optimize_free_logits(&cfg).is_err());
        cfg.steps = 10;
        cfg.classes = 1;
        assert!(optimize_free_logits(&cfg).is_err());
    }

    #[test]
    fn ce_norm_keeps_growing() {
        let run = optimize_free_logits(&FreeLogitConfig::new(LossSpec::CrossEntropy, 2, 0, 10_000, 0.1)).unwrap();
        let n1000 = linf(&run.at(1000).unwrap().logits);
        let n10000 = linf(&run.last().logits);
        assert!(n10000 > n1000);
        // z_t = u, z_o = −u with du/dt ≈ lr·e^{−2u} gives u(T) ≈ ½·ln(2·lr·T + 1)
        assert!((n10000 - 0.5 * (2001f64).ln()).abs() < 0.05);

        let run = optimize_free_logits(&FreeLogitConfig::new(LossSpec::CrossEntropy, 2, 0, 10_000, 2.0)).unwrap();
        assert!(divergence_evidence(&run, DIVERGENCE_THRESHOLD).diverged);
    }

    #[test]
    fn loss_monotone_for_small_lr() {
        for spec in [
            LossSpec::CrossEntropy,
            LossSpec::LabelSmoothing { alpha: 0.2 },
            LossSpec::LogitSqueezing { lambda: 1.0 },
        ] {
            let run = optimize_free_logits(&FreeLogitConfig::new(spec, 5, 2, 2000, 0.05)).unwrap();
            for w in run.trajectory.windows(2) {
                assert!(w[1].loss <= w[0].loss + 1e-9);
            }
        }
    }

    #[test]
    fn ce_gradient_is_softmax_minus_onehot() {
        let run = optimize_free_logits(&FreeLogitConfig::new(LossSpec::CrossEntropy, 4, 1, 200, 0.5)).unwrap();
        for p in &run.trajectory {
            let s = softmax_unchecked(&p.logits);
            let expected = s
                .iter()
                .enumerate()
                .map(|(k, sk)| (sk - if k == 1 { 1.0 } else { 0.0 }).abs())
                .fold(0.0, f64::max);
            assert!((expected - p.grad_linf).abs() < 1e-15);
        }
    }

    #[test]
    fn label_smoothing_examples() {
        let run = optimize_free_logits(&FreeLogitConfig::new(
            LossSpec::LabelSmoothing { alpha: 0.1 },
            10,
            0,
            100_000,
            1.0,
        ))
        .unwrap();
        let r = check_label_smoothing_optimum(0.1, &run).unwrap();
        assert!(r.converged);
        assert!((r.target_prob - 0.9).abs() < 1e-4);
        assert!(r.fixed_point_residual < 1e-6);

        let run = optimize_free_logits(&FreeLogitConfig::new(
            LossSpec::LabelSmoothing { alpha: 0.3 },
            5,
            2,
            100_000,
            1.0,
        ))
        .unwrap();
        let r = check_label_smoothing_optimum(0.3, &run).unwrap();
        assert!(r.off_target_residual < 1e-4);

        // symmetric targets: zero start is already optimal
        let run = optimize_free_logits(&FreeLogitConfig::new(
            LossSpec::LabelSmoothing { alpha: 0.5 },
            2,
            0,
            100,
            1.0,
        ))
        .unwrap();
        assert_eq!(run.trajectory.len(), 1);
        assert_eq!(run.last().logits[0], run.last().logits[1]);
        assert!(check_label_smoothing_optimum(0.4, &run).is_err());
    }

    #[test]
    fn logit_squeezing_examples() {
        let run = optimize_free_logits(&FreeLogitConfig::new(
            LossSpec::LogitSqueezing { lambda: 1.0 },
            2,
            0,
            100_000,
            0.5,
        ))
        .unwrap();
        let r = check_logit_squeezing_optimum(1.0, &run).unwrap();
        assert!(r.fixed_point_residual < 1e-6 && r.within_box);

        let run = optimize_free_logits(&FreeLogitConfig::new(
            LossSpec::LogitSqueezing { lambda: 100.0 },
            10,
            0,
            100_000,
            1.0 / 100.5,
        ))
        .unwrap();
        let r = check_logit_squeezing_optimum(100.0, &run).unwrap();
        assert!(r.max_abs_logit <= 0.01);

        let run = optimize_free_logits(&FreeLogitConfig::new(
            LossSpec::LogitSqueezing { lambda: 0.5 },
            10,
            3,
            100_000,
            1.0,
        ))
        .unwrap();
        let r = check_logit_squeezing_optimum(0.5, &run).unwrap();
        assert!((0.0..=2.0).contains(&r.target_logit));
    }

    #[test]
    fn blf_pre_logits_converge_to_critical_points() {
        let cp = blf_critical_points();
        for gamma in [0.1, 0.5, 1.0] {
            let run = optimize_free_logits(
                &FreeLogitConfig::new(LossSpec::CrossEntropy, 10, 4, 200_000, 1.0 / gamma)
                    .with_activation(ActivationKind::Blf, gamma),
            )
            .unwrap();
            let r = check_blf_optimum(&run).unwrap();
            assert!(r.converged);
            assert!(r.pre_logit_error < 1e-3, "gamma {gamma}: {r:?}");
            assert!((r.pre_logit_linf - cp.z_max).abs() < 1e-3);
            assert!(r.logit_bounds_hold);
        }
    }

    #[test]
    fn tanh_diverges_with_bounded_logits() {
        let run = optimize_free_logits(
            &FreeLogitConfig::new(LossSpec::CrossEntropy, 2, 0, 10_000, 10.0)
                .with_activation(ActivationKind::Tanh, 1.0),
        )
        .unwrap();
        let r = divergence_evidence(&run, DIVERGENCE_THRESHOLD);
        assert!(r.diverged, "{r:?}");
        assert!(run.trajectory.iter().all(|p| p.logits.iter().all(|l| l.abs() < 1.0)));
    }

    #[test]
    fn gap_examples() {
        let steps = [100, 1000, 10_000];
        let a = optimize_free_logits(&FreeLogitConfig::new(LossSpec::CrossEntropy, 2, 0, 10_000, 0.1)).unwrap();
        let b = optimize_free_logits(&FreeLogitConfig::new(LossSpec::CrossEntropy, 2, 1, 10_000, 0.1)).unwrap();
        assert!(lipschitz_evidence(&a, &b, &steps).unwrap().strictly_increasing);
        let same = lipschitz_evidence(&a, &a, &steps).unwrap();
        assert!(same.gaps.iter().all(|&g| g == 0.0));

        let a = optimize_free_logits(&FreeLogitConfig::new(LossSpec::CrossEntropy, 10, 0, 10_000, 0.1)).unwrap();
        let b = optimize_free_logits(&FreeLogitConfig::new(LossSpec::CrossEntropy, 10, 1, 10_000, 0.1)).unwrap();
        let r = lipschitz_evidence(&a, &b, &steps).unwrap();
        assert!(r.gaps[2] > 2.0 * r.gaps[0]);
    }

    #[test]
    fn suite_passes_with_defaults() {
        let report = run_theorem_suite(&TheoremSuiteConfig::default()).unwrap();
        for c in &report.checks {
            assert!(c.passed, "{}: {}", c.name, c.details);
        }
        assert!((report.z_max - 2.39936).abs() < 1e-5);
    }
}
