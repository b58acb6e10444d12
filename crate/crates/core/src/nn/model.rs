use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layer::{Cache, Layer, ParamGrad};
use super::tensor::Tensor;
use crate::activations::{sigmoid, softmax_unchecked, softplus, ActivationKind};
use crate::error::{Error, Result};
use crate::losses::{loss_gradient, loss_value, LossSpec, TargetVector};

/// Initial raw scale for a learnable γ, so γ starts at softplus(−1).
pub const LEARNABLE_GAMMA_INIT: f64 = -1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum GammaMode {
    Fixed { gamma: f64 },
    /// γ = softplus(raw); `raw` is trained.
    Learnable { raw: f64 },
}

impl Default for GammaMode {
    fn default() -> Self {
        GammaMode::Fixed { gamma: 1.0 }
    }
}

impl GammaMode {
    pub fn learnable() -> Self {
        GammaMode::Learnable { raw: LEARNABLE_GAMMA_INIT }
    }

    pub fn effective(&self) -> f64 {
        match *self {
            GammaMode::Fixed { gamma } => gamma,
            GammaMode::Learnable { raw } => softplus(raw),
        }
    }

    fn validate(&self) -> Result<()> {
        let g = self.effective();
        if g > 0.0 && g.is_finite() {
            Ok(())
        } else {
            Err(Error::domain(format!("effective gamma must be positive and finite, got {g}")))
        }
    }
}

/// A layer stack followed by the pre-softmax hook `logits = γ·g(pre_logits)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Model {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    hook: ActivationKind,
    gamma: GammaMode,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Output {
    pub pre_logits: Tensor,
    pub logits: Tensor,
    pub probs: Tensor,
}

/// Forward state needed for backpropagation.
#[derive(Clone, Debug)]
pub struct Pass {
    caches: Vec<Cache>,
    pub pre_logits: Tensor,
    pub logits: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    /// One entry per layer; `None` for parameter-free layers.
    pub layers: Vec<Option<ParamGrad>>,
    /// Gradient with respect to the raw γ parameter in learnable mode.
    pub gamma_raw: Option<f64>,
    pub input: Tensor,
}

impl Gradients {
    /// Adds `other` into `self` (parameter and γ gradients only).
    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if let (Some(a), Some(b)) = (a, b) {
                a.weight.iter_mut().zip(&b.weight).for_each(|(x, y)| *x += y);
                a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
            }
        }
        if let (Some(a), Some(b)) = (self.gamma_raw.as_mut(), other.gamma_raw) {
            *a += b;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Backward {
    /// Mean loss over the batch.
    pub loss: f64,
    pub grads: Gradients,
    pub logits: Tensor,
}

impl Model {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        let model = Self { input_shape, layers, hook: ActivationKind::Identity, gamma: GammaMode::default() };
        model.validate()?;
        Ok(model)
    }

    pub fn with_hook(mut self, hook: ActivationKind, gamma: GammaMode) -> Result<Self> {
        gamma.validate()?;
        self.hook = hook;
        self.gamma = gamma;
        Ok(self)
    }

    /// Same parameters, different pre-softmax hook.
    pub fn with_hook_replaced(&self, hook: ActivationKind) -> Self {
        Self { hook, ..self.clone() }
    }

    /// Checks that parameter shapes and the layer chain are consistent.
    pub fn validate(&self) -> Result<()> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::domain("input shape must be nonempty"));
        }
        let mut shape = self.input_shape.clone();
        for layer in &self.layers {
            layer.validate()?;
            shape = layer.output_shape(&shape)?;
        }
        if shape.len() != 1 || shape[0] < 2 {
            return Err(Error::domain(format!("model must end in a vector of at least 2 classes, got {shape:?}")));
        }
        self.gamma.validate()
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn hook(&self) -> ActivationKind {
        self.hook
    }

    pub fn gamma_mode(&self) -> GammaMode {
        self.gamma
    }

    pub fn gamma_mode_mut(&mut self) -> &mut GammaMode {
        &mut self.gamma
    }

    pub fn gamma(&self) -> f64 {
        self.gamma.effective()
    }

    pub fn classes(&self) -> usize {
        let mut shape = self.input_shape.clone();
        for layer in &self.layers {
            shape = layer.output_shape(&shape).expect("validated at construction");
        }
        shape[0]
    }

    /// True when both models have the same layer kinds and parameter shapes.
    pub fn same_parameter_shapes(&self, other: &Model) -> bool {
        self.input_shape == other.input_shape
            && self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.name() == b.name()
                    && match (a.params(), b.params()) {
                        (Some((wa, ba)), Some((wb, bb))) => wa.len() == wb.len() && ba.len() == bb.len(),
                        (None, None) => true,
                        _ => false,
                    }
            })
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() < 2 || x.sample_shape() != self.input_shape.as_slice() {
            let mut expected = vec![x.shape().first().copied().unwrap_or(0)];
            expected.extend_from_slice(&self.input_shape);
            return Err(Error::Shape { expected, got: x.shape().to_vec() });
        }
        Ok(())
    }

    /// Forward pass that keeps layer caches. Dropout is active only when `rng` is given.
    pub fn pass(&self, x: &Tensor, mut rng: Option<&mut ChaCha8Rng>) -> Result<Pass> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let (next, cache) = layer.forward(&h, rng.as_deref_mut())?;
            caches.push(cache);
            h = next;
        }
        let gamma = self.gamma();
        let logits_data = h.data().iter().map(|&z| gamma * self.hook.value(z)).collect();
        let logits = Tensor::new(h.shape().to_vec(), logits_data)?;
        Ok(Pass { caches, pre_logits: h, logits })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Output> {
        let pass = self.pass(x, None)?;
        let mut probs = Vec::with_capacity(pass.logits.len());
        for row in pass.logits.rows() {
            probs.extend(softmax_unchecked(row));
        }
        let probs = Tensor::new(pass.logits.shape().to_vec(), probs)?;
        Ok(Output { pre_logits: pass.pre_logits, logits: pass.logits, probs })
    }

    /// Backpropagates `∂L/∂logits` through the hook and every layer.
    pub fn backprop(&self, pass: &Pass, grad_logits: &Tensor) -> Result<Gradients> {
        if grad_logits.shape() != pass.logits.shape() {
            return Err(Error::Shape { expected: pass.logits.shape().to_vec(), got: grad_logits.shape().to_vec() });
        }
        let gamma = self.gamma();
        let pre = pass.pre_logits.data();
        let gl = grad_logits.data();
        let gamma_raw = match self.gamma {
            GammaMode::Learnable { raw } => {
                let dl_dgamma: f64 = pre.iter().zip(gl).map(|(&z, g)| g * self.hook.value(z)).sum();
                Some(dl_dgamma * sigmoid(raw))
            }
            GammaMode::Fixed { .. } => None,
        };
        let g_pre = pre.iter().zip(gl).map(|(&z, g)| g * gamma * self.hook.slope(z)).collect();
        let mut grad = Tensor::new(pass.pre_logits.shape().to_vec(), g_pre)?;
        let mut layers = vec![None; self.layers.len()];
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (g_in, pg) = layer.backward(&pass.caches[i], &grad)?;
            layers[i] = pg;
            grad = g_in;
        }
        Ok(Gradients { layers, gamma_raw, input: grad })
    }

    fn targets(&self, spec: &LossSpec, labels: &[usize]) -> Result<Vec<TargetVector>> {
        let m = self.classes();
        labels.iter().map(|&t| TargetVector::for_spec(spec, m, t)).collect()
    }

    /// Per-sample losses and `∂L_i/∂logits_i`, unreduced.
    pub fn logit_loss_gradients(&self, logits: &Tensor, labels: &[usize], spec: &LossSpec) -> Result<(Vec<f64>, Tensor)> {
        if labels.len() != logits.batch() {
            return Err(Error::Shape { expected: vec![logits.batch()], got: vec![labels.len()] });
        }
        let targets = self.targets(spec, labels)?;
        let mut losses = Vec::with_capacity(labels.len());
        let mut grads = Vec::with_capacity(logits.len());
        for (row, target) in logits.rows().zip(&targets) {
            losses.push(loss_value(spec, row, target)?);
            grads.extend(loss_gradient(spec, row, target)?);
        }
        Ok((losses, Tensor::new(logits.shape().to_vec(), grads)?))
    }

    /// Mean loss and gradients for a batch. TRADES without an adversarial batch reduces to CE.
    pub fn backward_with(
        &self,
        x: &Tensor,
        labels: &[usize],
        spec: &LossSpec,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Backward> {
        spec.validate()?;
        let pass = self.pass(x, rng)?;
        let (losses, mut grad) = self.logit_loss_gradients(&pass.logits, labels, spec)?;
        let n = labels.len() as f64;
        grad.data_mut().iter_mut().for_each(|g| *g /= n);
        let grads = self.backprop(&pass, &grad)?;
        Ok(Backward { loss: losses.iter().sum::<f64>() / n, grads, logits: pass.logits })
    }

    /// Evaluation-mode backward pass (dropout disabled).
    pub fn backward(&self, x: &Tensor, labels: &[usize], spec: &LossSpec) -> Result<Backward> {
        self.backward_with(x, labels, spec, None)
    }

    /// Per-sample cross-entropy and its gradient with respect to each input sample.
    pub fn ce_input_gradient(&self, x: &Tensor, labels: &[usize]) -> Result<(Vec<f64>, Tensor)> {
        let pass = self.pass(x, None)?;
        let (losses, grad) = self.logit_loss_gradients(&pass.logits, labels, &LossSpec::CrossEntropy)?;
        let grads = self.backprop(&pass, &grad)?;
        Ok((losses, grads.input))
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let pass = self.pass(x, None)?;
        Ok(pass.logits.rows().map(argmax).collect())
    }

    pub fn accuracy(&self, x: &Tensor, labels: &[usize]) -> Result<f64> {
        let predictions = self.predict(x)?;
        Ok(count_correct(&predictions, labels) as f64 / labels.len().max(1) as f64)
    }

    /// Fully connected network: flatten, then `Dense→ReLU` per hidden width, then a `Dense` head.
    pub fn mlp(input_shape: Vec<usize>, hidden: &[usize], classes: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = vec![Layer::Flatten];
        let mut width: usize = input_shape.iter().product();
        for &h in hidden {
            layers.push(Layer::dense(width, h, &mut rng));
            layers.push(Layer::Relu);
            width = h;
        }
        layers.push(Layer::dense(width, classes, &mut rng));
        Self::new(input_shape, layers)
    }

    /// Two conv blocks (`Conv→MaxPool(2)→ReLU`) and two dense layers, with optional dropout
    /// after the second conv and the first dense layer.
    pub fn small_cnn(
        input_shape: Vec<usize>,
        channels: [usize; 2],
        kernel: usize,
        hidden: usize,
        classes: usize,
        dropout: f64,
        seed: u64,
    ) -> Result<Self> {
        if input_shape.len() != 3 {
            return Err(Error::domain(format!("cnn input must be [C, H, W], got {input_shape:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = vec![
            Layer::conv2d(input_shape[0], channels[0], kernel, 1, 0, &mut rng),
            Layer::MaxPool { size: 2, stride: 2 },
            Layer::Relu,
            Layer::conv2d(channels[0], channels[1], kernel, 1, 0, &mut rng),
        ];
        if dropout > 0.0 {
            layers.push(Layer::Dropout { rate: dropout });
        }
        layers.extend([Layer::MaxPool { size: 2, stride: 2 }, Layer::Relu, Layer::Flatten]);
        let mut shape = input_shape.clone();
        for layer in &layers {
            shape = layer.output_shape(&shape)?;
        }
        layers.push(Layer::dense(shape[0], hidden, &mut rng));
        layers.push(Layer::Relu);
        if dropout > 0.0 {
            layers.push(Layer::Dropout { rate: dropout });
        }
        layers.push(Layer::dense(hidden, classes, &mut rng));
        Self::new(input_shape, layers)
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn count_correct(predictions: &[usize], labels: &[usize]) -> usize {
    predictions.iter().zip(labels).filter(|(p, l)| p == l).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::blf_critical_points;

    #[test]
    fn identity_dense_forward() {
        let layer = Layer::dense_from(&[vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0]).unwrap();
        let model = Model::new(vec![2], vec![layer]).unwrap();
        let x = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
        let out = model.forward(&x).unwrap();
        assert_eq!(out.pre_logits.data(), &[1.0, 0.0]);
        assert_eq!(out.logits.data(), &[1.0, 0.0]);
    }

    #[test]
    fn blf_hook_maps_critical_points() {
        let cp = blf_critical_points();
        let layer = Layer::dense_from(&[vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0]).unwrap();
        let model = Model::new(vec![2], vec![layer])
            .unwrap()
            .with_hook(ActivationKind::Blf, GammaMode::Fixed { gamma: 1.0 })
            .unwrap();
        let x = Tensor::new(vec![1, 2], vec![cp.z_max, cp.z_min]).unwrap();
        let out = model.forward(&x).unwrap();
        assert!((out.logits.data()[0] - cp.g_max).abs() < 1e-10);
        assert!((out.logits.data()[1] - cp.g_min).abs() < 1e-10);
    }

    #[test]
    fn constant_rows_give_identical_outputs() {
        let model = Model::mlp(vec![5], &[7], 3, 4).unwrap();
        let row = vec![0.3, 0.1, 0.9, 0.0, 0.5];
        let x = Tensor::from_rows(&[row.clone(), row.clone(), row]).unwrap();
        let out = model.forward(&x).unwrap();
        assert_eq!(out.probs.sample(0), out.probs.sample(1));
        assert_eq!(out.probs.sample(1), out.probs.sample(2));
        for row in out.probs.rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let model = Model::mlp(vec![4], &[], 2, 0).unwrap();
        let x = Tensor::new(vec![1, 3], vec![0.0; 3]).unwrap();
        assert!(matches!(model.forward(&x), Err(Error::Shape { .. })));
        assert!(model.backward(&x, &[0], &LossSpec::CrossEntropy).is_err());
        assert!(Model::new(vec![1], vec![Layer::Relu]).is_err());
    }

    #[test]
    fn learnable_gamma_starts_at_softplus_minus_one() {
        let model = Model::mlp(vec![3], &[], 2, 0)
            .unwrap()
            .with_hook(ActivationKind::Blf, GammaMode::learnable())
            .unwrap();
        assert!((model.gamma() - softplus(-1.0)).abs() < 1e-15);
    }

    #[test]
    fn cnn_builder_produces_consistent_stack() {
        let model = Model::small_cnn(vec![1, 16, 16], [4, 8], 5, 16, 10, 0.5, 0).unwrap();
        assert_eq!(model.classes(), 10);
        let x = Tensor::zeros(vec![2, 1, 16, 16]);
        assert_eq!(model.forward(&x).unwrap().logits.shape(), &[2, 10]);
    }
}
