//! Measurement instruments: logit norms, L∞ operator norms and input loss surfaces.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{cross_entropy, TargetVector};
use crate::nn::{Layer, Model, Tensor};

/// Grid half-width in steps; the axis has `2·SURFACE_HALF + 1` points.
pub const SURFACE_HALF: usize = 32;
pub const SURFACE_STEP: f64 = 0.5 / 255.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogitStats {
    pub mean_l2: f64,
    pub mean_linf: f64,
    pub mean_prelogit_l2: f64,
    pub mean_prelogit_linf: f64,
    pub sample_count: usize,
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn linf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Mean per-sample norms of logits and pre-logits over `ds` (evaluation mode).
pub fn logit_stats(model: &Model, ds: &Dataset) -> Result<LogitStats> {
    if ds.is_empty() {
        return Err(Error::domain("logit statistics need a nonempty dataset"));
    }
    let out = model.forward(&ds.images)?;
    let n = ds.len() as f64;
    let mean = |t: &Tensor, norm: fn(&[f64]) -> f64| t.rows().map(norm).sum::<f64>() / n;
    Ok(LogitStats {
        mean_l2: mean(&out.logits, l2),
        mean_linf: mean(&out.logits, linf),
        mean_prelogit_l2: mean(&out.pre_logits, l2),
        mean_prelogit_linf: mean(&out.pre_logits, linf),
        sample_count: ds.len(),
    })
}

/// L∞→L∞ operator norm of the linear part of a Dense or Conv2d layer.
///
/// For convolutions this is the kernel mass of the heaviest output channel,
/// which is exact for any output whose taps all land inside the input.
pub fn linf_operator_norm(layer: &Layer) -> Result<f64> {
    match layer {
        Layer::Dense { inputs, weight, .. } => Ok(weight.chunks(*inputs).map(|r| r.iter().map(|w| w.abs()).sum()).fold(0.0, f64::max)),
        Layer::Conv2d { in_channels, kernel_h, kernel_w, weight, .. } => {
            let per_out = in_channels * kernel_h * kernel_w;
            Ok(weight.chunks(per_out).map(|k| k.iter().map(|w| w.abs()).sum()).fold(0.0, f64::max))
        }
        other => Err(Error::domain(format!("no operator norm for {} layers", other.name()))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorNormRow {
    /// Position in the model's layer list.
    pub layer: usize,
    pub kind: String,
    pub norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorNormTable {
    pub rows: Vec<OperatorNormRow>,
    /// Mean over convolution layers; `None` without convolutions.
    pub conv_mean: Option<f64>,
    pub mean: f64,
    /// Product over all linear layers, a Lipschitz bound for the whole stack
    /// (ReLU and max-pooling are 1-Lipschitz in L∞).
    pub product: f64,
}

pub fn operator_norms(model: &Model) -> OperatorNormTable {
    let rows: Vec<OperatorNormRow> = model
        .layers()
        .iter()
        .enumerate()
        .filter_map(|(i, l)| {
            linf_operator_norm(l).ok().map(|norm| OperatorNormRow { layer: i, kind: l.name().to_string(), norm })
        })
        .collect();
    let conv: Vec<f64> = rows.iter().filter(|r| r.kind == "conv2d").map(|r| r.norm).collect();
    let conv_mean = (!conv.is_empty()).then(|| conv.iter().sum::<f64>() / conv.len() as f64);
    let mean = if rows.is_empty() { 0.0 } else { rows.iter().map(|r| r.norm).sum::<f64>() / rows.len() as f64 };
    let product = rows.iter().map(|r| r.norm).product();
    OperatorNormTable { rows, conv_mean, mean, product }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSurfaceGrid {
    pub datapoint_index: usize,
    pub direction_seeds: [u64; 2],
    pub epsilon_axis: Vec<f64>,
    /// `grid[i][j]` is the loss at `x + ε_i v₁ + ε_j v₂`.
    pub grid: Vec<Vec<f64>>,
    pub max_min_diff: f64,
}

impl LossSurfaceGrid {
    /// Header row of ε₂ values, then one row per ε₁ led by its value.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("eps1/eps2");
        for e in &self.epsilon_axis {
            out.push_str(&format!(",{e}"));
        }
        out.push('\n');
        for (e, row) in self.epsilon_axis.iter().zip(&self.grid) {
            out.push_str(&e.to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn surface_axis() -> Vec<f64> {
    (0..=2 * SURFACE_HALF).map(|i| (i as f64 - SURFACE_HALF as f64) * SURFACE_STEP).collect()
}

/// A ±1 direction drawn from `seed`.
pub fn sign_direction(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
}

/// Cross-entropy over the grid `x + ε₁v₁ + ε₂v₂` with explicit directions.
/// Perturbed inputs are not clipped to `[0,1]`.
pub fn loss_surface_with(model: &Model, x: &[f64], label: usize, v1: &[f64], v2: &[f64]) -> Result<Vec<Vec<f64>>> {
    let len: usize = model.input_shape().iter().product();
    if x.len() != len || v1.len() != len || v2.len() != len {
        return Err(Error::Shape { expected: vec![len], got: vec![x.len(), v1.len(), v2.len()] });
    }
    let target = TargetVector::one_hot(model.classes(), label)?;
    let axis = surface_axis();
    axis.par_iter()
        .map(|&e1| {
            let mut data = Vec::with_capacity(axis.len() * len);
            for &e2 in &axis {
                data.extend((0..len).map(|k| x[k] + (e1 * v1[k] + e2 * v2[k])));
            }
            let mut shape = vec![axis.len()];
            shape.extend_from_slice(model.input_shape());
            let logits = model.pass(&Tensor::new(shape, data)?, None)?.logits;
            logits.rows().map(|z| cross_entropy(z, &target)).collect()
        })
        .collect()
}

/// Loss surface around sample `index` of `ds` along two seeded sign directions.
pub fn loss_surface(model: &Model, ds: &Dataset, index: usize, seeds: [u64; 2]) -> Result<LossSurfaceGrid> {
    if index >= ds.len() {
        return Err(Error::domain(format!("datapoint {index} out of range for {} samples", ds.len())));
    }
    let x = ds.images.sample(index);
    if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::domain("surface datapoint must lie in [0,1]"));
    }
    let v1 = sign_direction(seeds[0], x.len());
    let v2 = sign_direction(seeds[1], x.len());
    let grid = loss_surface_with(model, x, ds.labels[index], &v1, &v2)?;
    Ok(LossSurfaceGrid {
        datapoint_index: index,
        direction_seeds: seeds,
        epsilon_axis: surface_axis(),
        max_min_diff: max_min_diff(&grid),
        grid,
    })
}

pub fn max_min_diff(grid: &[Vec<f64>]) -> f64 {
    let (lo, hi) = grid.iter().flatten().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    hi - lo
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::ActivationKind;
    use crate::data::synth_blobs;
    use crate::nn::GammaMode;

    fn dense(rows: &[Vec<f64>]) -> Layer {
        Layer::dense_from(rows, vec![0.0; rows.len()]).unwrap()
    }

    #[test]
    fn operator_norm_examples() {
        assert_eq!(linf_operator_norm(&dense(&[vec![1.0, -2.0], vec![3.0, 0.5]])).unwrap(), 3.5);
        let conv = Layer::Conv2d {
            in_channels: 1,
            out_channels: 1,
            kernel_h: 2,
            kernel_w: 2,
            stride: 1,
            padding: 0,
            weight: vec![1.0, -1.0, 2.0, 0.0],
            bias: vec![0.5],
        };
        assert_eq!(linf_operator_norm(&conv).unwrap(), 4.0);
        assert!(linf_operator_norm(&Layer::Relu).is_err());
    }

    #[test]
    fn constant_logits_stats() {
        let model = Model::new(vec![3], vec![Layer::dense_from(&[vec![0.0; 3], vec![0.0; 3]], vec![1.0, -1.0]).unwrap()]).unwrap();
        let ds = synth_blobs(2, 3, 3, 0.1, 0).unwrap();
        let s = logit_stats(&model, &ds).unwrap();
        assert!((s.mean_l2 - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(s.mean_linf, 1.0);
        assert_eq!(s.sample_count, 6);
    }

    #[test]
    fn singleton_stats_are_sample_norms() {
        let model = Model::mlp(vec![5], &[4], 3, 2).unwrap().with_hook(ActivationKind::Blf, GammaMode::Fixed { gamma: 0.5 }).unwrap();
        let ds = synth_blobs(3, 2, 5, 0.1, 1).unwrap().select(&[3]);
        let out = model.forward(&ds.images).unwrap();
        let s = logit_stats(&model, &ds).unwrap();
        assert_eq!(s.mean_linf, linf(out.logits.data()));
        assert_eq!(s.mean_prelogit_l2, l2(out.pre_logits.data()));
    }

    #[test]
    fn surface_center_and_symmetry() {
        let model = Model::mlp(vec![6], &[5], 3, 3).unwrap();
        let ds = synth_blobs(3, 2, 6, 0.1, 2).unwrap();
        let g = loss_surface(&model, &ds, 1, [10, 11]).unwrap();
        assert_eq!(g.grid.len(), 65);
        assert!(g.grid.iter().all(|r| r.len() == 65));
        let (clean, _) = model.ce_input_gradient(&ds.images.select(&[1]), &[ds.labels[1]]).unwrap();
        assert_eq!(g.grid[32][32], clean[0]);
        assert!(g.max_min_diff >= 0.0);

        let swapped = loss_surface(&model, &ds, 1, [11, 10]).unwrap();
        for i in 0..65 {
            for j in 0..65 {
                assert_eq!(g.grid[i][j], swapped.grid[j][i]);
            }
        }
        let csv = g.to_csv();
        assert_eq!(csv.lines().count(), 66);
        assert!(csv.starts_with("eps1/eps2,"));
    }

    #[test]
    fn constant_model_has_flat_surface() {
        let model = Model::new(vec![4], vec![dense(&[vec![0.0; 4], vec![0.0; 4]])]).unwrap();
        let ds = synth_blobs(2, 2, 4, 0.1, 0).unwrap();
        assert_eq!(loss_surface(&model, &ds, 0, [1, 2]).unwrap().max_min_diff, 0.0);
    }

    #[test]
    fn linear_model_surface_peaks_on_edge() {
        let model = Model::new(vec![4], vec![dense(&[vec![1.0, -0.5, 0.3, 2.0], vec![-1.0, 0.7, 0.2, -0.4]])]).unwrap();
        let ds = synth_blobs(2, 2, 4, 0.1, 0).unwrap();
        let g = loss_surface(&model, &ds, 0, [3, 4]).unwrap();
        let (mut best, mut at) = (f64::NEG_INFINITY, (0, 0));
        for (i, row) in g.grid.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v > best {
                    best = v;
                    at = (i, j);
                }
            }
        }
        assert!(at.0 == 0 || at.0 == 64 || at.1 == 0 || at.1 == 64);
    }
}
