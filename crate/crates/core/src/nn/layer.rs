use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// One stage of a feed-forward stack. Parameters live inline so a layer
/// serializes to a self-describing record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Layer {
    /// `y = W x + b` with `W` stored as `outputs × inputs`.
    Dense {
        inputs: usize,
        outputs: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
    },
    /// Cross-correlation over `[C, H, W]` samples; weight is `out × in × kh × kw`.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
    },
    Relu,
    MaxPool {
        size: usize,
        stride: usize,
    },
    Flatten,
    /// Inverted dropout: active only when a random stream is supplied.
    Dropout {
        rate: f64,
    },
}

/// Gradients for a parameterized layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// What a layer remembers from its forward pass.
#[derive(Clone, Debug)]
pub(crate) enum Cache {
    Input(Tensor),
    Argmax { input_shape: Vec<usize>, index: Vec<usize> },
    Shape(Vec<usize>),
    Mask(Option<Vec<f64>>),
}

fn uniform_init(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
}

fn conv_out(size: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = size + 2 * padding;
    if padded < kernel || stride == 0 {
        return Err(Error::domain(format!(
            "kernel {kernel} does not fit input {size} with padding {padding} and stride {stride}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Index bookkeeping for one convolution applied to one `[C, H, W]` sample.
struct ConvGeometry {
    channels: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeometry {
    fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Calls `f(patch_row, position, input_index)` for every in-bounds tap.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        for c in 0..self.channels {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        for ox in 0..self.ow {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            f(row, oy * self.ow + ox, (c * self.h + iy as usize) * self.w + ix as usize);
                        }
                    }
                }
            }
        }
    }

    /// `[patch_len, positions]` matrix of input taps; padding reads as zero.
    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let p = self.positions();
        let mut cols = vec![0.0; self.patch_len() * p];
        self.for_each_tap(|row, pos, i| cols[row * p + pos] = x[i]);
        cols
    }

    fn col2im(&self, cols: &[f64]) -> Vec<f64> {
        let p = self.positions();
        let mut x = vec![0.0; self.channels * self.h * self.w];
        self.for_each_tap(|row, pos, i| x[i] += cols[row * p + pos]);
        x
    }
}

fn shape_err(expected: &[usize], got: &[usize]) -> Error {
    Error::Shape { expected: expected.to_vec(), got: got.to_vec() }
}

impl Layer {
    /// Dense layer with weights uniform in `±1/√inputs` and zero bias.
    pub fn dense(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        Layer::Dense {
            inputs,
            outputs,
            weight: uniform_init(rng, inputs * outputs, inputs),
            bias: vec![0.0; outputs],
        }
    }

    /// Dense layer from explicit `outputs × inputs` rows.
    pub fn dense_from(rows: &[Vec<f64>], bias: Vec<f64>) -> Result<Self> {
        let outputs = rows.len();
        let inputs = rows.first().map_or(0, Vec::len);
        let layer = Layer::Dense { inputs, outputs, weight: rows.concat(), bias };
        layer.validate()?;
        Ok(layer)
    }

    pub fn conv2d(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Layer::Conv2d {
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            padding,
            weight: uniform_init(rng, out_channels * fan_in, fan_in),
            bias: vec![0.0; out_channels],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Conv2d { .. } => "conv2d",
            Layer::Relu => "relu",
            Layer::MaxPool { .. } => "max_pool",
            Layer::Flatten => "flatten",
            Layer::Dropout { .. } => "dropout",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Layer::Dense { inputs, outputs, weight, bias } => {
                if *inputs == 0 || *outputs == 0 || weight.len() != inputs * outputs || bias.len() != *outputs {
                    return Err(Error::domain(format!(
                        "dense {inputs}x{outputs} has {} weights and {} biases",
                        weight.len(),
                        bias.len()
                    )));
                }
            }
            Layer::Conv2d { in_channels, out_channels, kernel_h, kernel_w, stride, weight, bias, .. } => {
                let n = in_channels * out_channels * kernel_h * kernel_w;
                if n == 0 || *stride == 0 || weight.len() != n || bias.len() != *out_channels {
                    return Err(Error::domain("conv2d parameters inconsistent with its shape"));
                }
            }
            Layer::MaxPool { size, stride } => {
                if *size == 0 || *stride == 0 {
                    return Err(Error::domain("max pool size and stride must be positive"));
                }
            }
            Layer::Dropout { rate } => {
                if !(0.0..1.0).contains(rate) {
                    return Err(Error::domain(format!("dropout rate must lie in [0,1), got {rate}")));
                }
            }
            Layer::Relu | Layer::Flatten => {}
        }
        Ok(())
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Dense { inputs, outputs, .. } => {
                if input != [*inputs] {
                    return Err(shape_err(&[*inputs], input));
                }
                Ok(vec![*outputs])
            }
            Layer::Conv2d { in_channels, out_channels, kernel_h, kernel_w, stride, padding, .. } => {
                if input.len() != 3 || input[0] != *in_channels {
                    return Err(shape_err(&[*in_channels, 0, 0], input));
                }
                Ok(vec![
                    *out_channels,
                    conv_out(input[1], *kernel_h, *stride, *padding)?,
                    conv_out(input[2], *kernel_w, *stride, *padding)?,
                ])
            }
            Layer::MaxPool { size, stride } => {
                if input.len() != 3 {
                    return Err(shape_err(&[0, 0, 0], input));
                }
                Ok(vec![input[0], conv_out(input[1], *size, *stride, 0)?, conv_out(input[2], *size, *stride, 0)?])
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::Relu | Layer::Dropout { .. } => Ok(input.to_vec()),
        }
    }

    pub fn params(&self) -> Option<(&[f64], &[f64])> {
        match self {
            Layer::Dense { weight, bias, .. } | Layer::Conv2d { weight, bias, .. } => Some((weight, bias)),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<(&mut Vec<f64>, &mut Vec<f64>)> {
        match self {
            Layer::Dense { weight, bias, .. } | Layer::Conv2d { weight, bias, .. } => Some((weight, bias)),
            _ => None,
        }
    }

    fn conv_geometry(&self, input: &[usize], output: &[usize]) -> ConvGeometry {
        match self {
            Layer::Conv2d { in_channels, kernel_h, kernel_w, stride, padding, .. } => ConvGeometry {
                channels: *in_channels,
                h: input[1],
                w: input[2],
                kh: *kernel_h,
                kw: *kernel_w,
                stride: *stride,
                padding: *padding,
                oh: output[1],
                ow: output[2],
            },
            _ => unreachable!("geometry is only defined for convolutions"),
        }
    }

    pub(crate) fn forward(&self, x: &Tensor, rng: Option<&mut ChaCha8Rng>) -> Result<(Tensor, Cache)> {
        let out_sample = self.output_shape(x.sample_shape())?;
        let n = x.batch();
        let mut out_shape = vec![n];
        out_shape.extend_from_slice(&out_sample);
        match self {
            Layer::Dense { inputs, outputs, weight, bias } => {
                let mut out = Vec::with_capacity(n * outputs);
                for row in x.rows() {
                    for o in 0..*outputs {
                        let w = &weight[o * inputs..(o + 1) * inputs];
                        let dot: f64 = w.iter().zip(row).map(|(a, b)| a * b).sum();
                        out.push(bias[o] + dot);
                    }
                }
                Ok((Tensor::new(out_shape, out)?, Cache::Input(x.clone())))
            }
            Layer::Conv2d { out_channels, weight, bias, .. } => {
                let geom = self.conv_geometry(x.sample_shape(), &out_sample);
                let (k, p) = (geom.patch_len(), geom.positions());
                let per_sample: Vec<Vec<f64>> = (0..n)
                    .into_par_iter()
                    .map(|b| {
                        let cols = geom.im2col(x.sample(b));
                        let mut out = vec![0.0; out_channels * p];
                        for (co, row) in out.chunks_mut(p).enumerate() {
                            row.fill(bias[co]);
                            for (kk, &wv) in weight[co * k..(co + 1) * k].iter().enumerate() {
                                for (o, c) in row.iter_mut().zip(&cols[kk * p..(kk + 1) * p]) {
                                    *o += wv * c;
                                }
                            }
                        }
                        out
                    })
                    .collect();
                Ok((Tensor::new(out_shape, per_sample.concat())?, Cache::Input(x.clone())))
            }
            Layer::Relu => {
                let out = x.data().iter().map(|v| v.max(0.0)).collect();
                Ok((Tensor::new(out_shape, out)?, Cache::Input(x.clone())))
            }
            Layer::MaxPool { size, stride } => {
                let (c, h, w) = (x.shape()[1], x.shape()[2], x.shape()[3]);
                let (oh, ow) = (out_sample[1], out_sample[2]);
                let xs = x.data();
                let mut out = Vec::with_capacity(n * c * oh * ow);
                let mut index = Vec::with_capacity(out.capacity());
                for bc in 0..n * c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut best = bc * h * w + oy * stride * w + ox * stride;
                            for ky in 0..*size {
                                for kx in 0..*size {
                                    let i = bc * h * w + (oy * stride + ky) * w + ox * stride + kx;
                                    if xs[i] > xs[best] {
                                        best = i;
                                    }
                                }
                            }
                            out.push(xs[best]);
                            index.push(best);
                        }
                    }
                }
                let cache = Cache::Argmax { input_shape: x.shape().to_vec(), index };
                Ok((Tensor::new(out_shape, out)?, cache))
            }
            Layer::Flatten => Ok((x.clone().reshape(out_shape)?, Cache::Shape(x.shape().to_vec()))),
            Layer::Dropout { rate } => match rng {
                Some(rng) if *rate > 0.0 => {
                    let keep = 1.0 / (1.0 - rate);
                    let mask: Vec<f64> = (0..x.len())
                        .map(|_| if rng.random::<f64>() < *rate { 0.0 } else { keep })
                        .collect();
                    let out = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
                    Ok((Tensor::new(out_shape, out)?, Cache::Mask(Some(mask))))
                }
                _ => Ok((x.clone(), Cache::Mask(None))),
            },
        }
    }

    pub(crate) fn backward(&self, cache: &Cache, grad: &Tensor) -> Result<(Tensor, Option<ParamGrad>)> {
        match (self, cache) {
            (Layer::Dense { inputs, outputs, weight, .. }, Cache::Input(x)) => {
                let n = x.batch();
                let mut gx = vec![0.0; n * inputs];
                let mut gw = vec![0.0; weight.len()];
                let mut gb = vec![0.0; *outputs];
                for b in 0..n {
                    let xr = x.sample(b);
                    let gr = grad.sample(b);
                    let gxr = &mut gx[b * inputs..(b + 1) * inputs];
                    for o in 0..*outputs {
                        let g = gr[o];
                        gb[o] += g;
                        let w = &weight[o * inputs..(o + 1) * inputs];
                        let gwr = &mut gw[o * inputs..(o + 1) * inputs];
                        for i in 0..*inputs {
                            gxr[i] += w[i] * g;
                            gwr[i] += xr[i] * g;
                        }
                    }
                }
                Ok((Tensor::new(x.shape().to_vec(), gx)?, Some(ParamGrad { weight: gw, bias: gb })))
            }
            (Layer::Conv2d { out_channels, weight, .. }, Cache::Input(x)) => {
                let n = x.batch();
                let geom = self.conv_geometry(x.sample_shape(), grad.sample_shape());
                let (k, p) = (geom.patch_len(), geom.positions());
                let per_sample: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
                    .into_par_iter()
                    .map(|b| {
                        let cols = geom.im2col(x.sample(b));
                        let g = grad.sample(b);
                        let mut gw = vec![0.0; weight.len()];
                        let mut gcols = vec![0.0; k * p];
                        for co in 0..*out_channels {
                            let gr = &g[co * p..(co + 1) * p];
                            for kk in 0..k {
                                let c = &cols[kk * p..(kk + 1) * p];
                                gw[co * k + kk] = gr.iter().zip(c).map(|(a, b)| a * b).sum();
                                let wv = weight[co * k + kk];
                                for (gc, gv) in gcols[kk * p..(kk + 1) * p].iter_mut().zip(gr) {
                                    *gc += wv * gv;
                                }
                            }
                        }
                        (gw, geom.col2im(&gcols))
                    })
                    .collect();
                let mut gw = vec![0.0; weight.len()];
                let mut gb = vec![0.0; *out_channels];
                let mut gx = Vec::with_capacity(x.len());
                for (b, (w, xg)) in per_sample.into_iter().enumerate() {
                    gw.iter_mut().zip(&w).for_each(|(a, v)| *a += v);
                    let g = grad.sample(b);
                    for (co, acc) in gb.iter_mut().enumerate() {
                        *acc += g[co * p..(co + 1) * p].iter().sum::<f64>();
                    }
                    gx.extend(xg);
                }
                Ok((Tensor::new(x.shape().to_vec(), gx)?, Some(ParamGrad { weight: gw, bias: gb })))
            }
            (Layer::Relu, Cache::Input(x)) => {
                let g = x
                    .data()
                    .iter()
                    .zip(grad.data())
                    .map(|(v, g)| if *v > 0.0 { *g } else { 0.0 })
                    .collect();
                Ok((Tensor::new(x.shape().to_vec(), g)?, None))
            }
            (Layer::MaxPool { .. }, Cache::Argmax { input_shape, index }) => {
                let mut gx = Tensor::zeros(input_shape.clone());
                let d = gx.data_mut();
                for (&i, g) in index.iter().zip(grad.data()) {
                    d[i] += g;
                }
                Ok((gx, None))
            }
            (Layer::Flatten, Cache::Shape(shape)) => Ok((grad.clone().reshape(shape.clone())?, None)),
            (Layer::Dropout { .. }, Cache::Mask(mask)) => match mask {
                Some(mask) => {
                    let g = grad.data().iter().zip(mask).map(|(g, m)| g * m).collect();
                    Ok((Tensor::new(grad.shape().to_vec(), g)?, None))
                }
                None => Ok((grad.clone(), None)),
            },
            _ => Err(Error::domain("layer cache does not match layer kind")),
        }
    }
}
