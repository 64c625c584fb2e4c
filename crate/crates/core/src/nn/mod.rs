//! Feed-forward network engine with reverse-mode differentiation.
//!
//! A [`Network`] is an ordered list of [`Layer`]s mapping a per-example input
//! shape to a logits vector of length `C`. Softmax is never part of the
//! network. Inputs to [`Network::forward`] carry a leading batch dimension;
//! each example is processed independently, so results for an example do not
//! depend on what else is in the batch.

mod kernels;
pub mod loss;
pub mod optim;

use std::hash::{Hash, Hasher};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use kernels::{col2im, dot64, gemm, im2col, maxpool2x2, to_f64};

pub use loss::{softmax, softmax_cross_entropy, softmax_cross_entropy_batch};
pub use optim::{Algorithm, OptimizerState};

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// `weight` is (out, in), `bias` is (out). The input is flattened.
    Dense {
        weight: Tensor,
        bias: Tensor,
    },
    Relu,
    /// `weight` is (out-ch, in-ch, k, k) with odd `k`; stride 1, same padding.
    Conv2d {
        weight: Tensor,
        bias: Tensor,
    },
    MaxPool2x2,
    /// Inverted dropout: train mode scales kept units by `1/keep`.
    Dropout {
        keep: f32,
    },
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Relu => "relu",
            Layer::Conv2d { .. } => "conv2d",
            Layer::MaxPool2x2 => "maxpool2x2",
            Layer::Dropout { .. } => "dropout",
        }
    }

    /// Per-example output shape for a per-example input shape.
    fn output_shape(&self, index: usize, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = |expected: Vec<usize>| Error::LayerShape {
            layer: index,
            expected,
            actual: input.to_vec(),
        };
        match self {
            Layer::Dense { weight, bias } => {
                let ws = weight.shape();
                if ws.len() != 2 || bias.shape() != [ws[0]] {
                    return Err(Error::InvalidNetwork(format!(
                        "layer {index}: dense weight {ws:?} / bias {:?}",
                        bias.shape()
                    )));
                }
                if input.iter().product::<usize>() != ws[1] {
                    return Err(mismatch(vec![ws[1]]));
                }
                Ok(vec![ws[0]])
            }
            Layer::Conv2d { weight, bias } => {
                let ws = weight.shape();
                if ws.len() != 4 || ws[2] != ws[3] || ws[2] % 2 == 0 || bias.shape() != [ws[0]] {
                    return Err(Error::InvalidNetwork(format!(
                        "layer {index}: conv2d weight {ws:?} / bias {:?}",
                        bias.shape()
                    )));
                }
                if input.len() != 3 || input[0] != ws[1] {
                    let (h, w) = match input {
                        [_, h, w] => (*h, *w),
                        _ => (0, 0),
                    };
                    return Err(mismatch(vec![ws[1], h, w]));
                }
                Ok(vec![ws[0], input[1], input[2]])
            }
            Layer::MaxPool2x2 => {
                if input.len() != 3 || input[1] < 2 || input[2] < 2 {
                    return Err(mismatch(vec![input.first().copied().unwrap_or(0), 2, 2]));
                }
                Ok(vec![input[0], input[1] / 2, input[2] / 2])
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::Dropout { keep } => {
                if !(*keep > 0.0 && *keep <= 1.0) {
                    return Err(Error::InvalidNetwork(format!(
                        "layer {index}: dropout keep {keep} outside (0, 1]"
                    )));
                }
                Ok(input.to_vec())
            }
        }
    }

    fn params(&self) -> Option<(&Tensor, &Tensor)> {
        match self {
            Layer::Dense { weight, bias } | Layer::Conv2d { weight, bias } => Some((weight, bias)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    input_shape: Vec<usize>,
    /// Per-example activation shape after each layer.
    shapes: Vec<Vec<usize>>,
    classes: usize,
    seed: u64,
}

/// Forward-pass mode. Training mode draws dropout masks from the given stream.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

#[derive(Debug, Clone)]
enum Aux {
    None,
    DropoutMask(Vec<f32>),
    PoolIndex(Vec<u32>),
}

/// Everything [`Network::backward`] needs from a forward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    values: Vec<Tensor>,
    aux: Vec<Aux>,
    fingerprint: u64,
}

impl Activations {
    /// `values()[0]` is the input; `values()[l + 1]` is the output of layer `l`.
    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn logits(&self) -> &Tensor {
        self.values.last().expect("activations always hold the input")
    }

    pub fn batch(&self) -> usize {
        self.values[0].shape()[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Reverse-mode gradients of a scalar loss. Parameter gradients are summed over
/// the batch; `input` keeps the batch dimension.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<Option<ParamGrad>>,
    pub input: Tensor,
}

impl Gradients {
    /// Parameter gradients in [`Network::parameters_mut`] order.
    pub fn parameters(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flatten()
            .flat_map(|g| [&g.weight, &g.bias])
            .collect()
    }
}

impl Network {
    pub fn new(layers: Vec<Layer>, input_shape: Vec<usize>, seed: u64) -> Result<Self> {
        if input_shape.is_empty() || input_shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidNetwork(format!("bad input shape {input_shape:?}")));
        }
        let mut shapes = Vec::with_capacity(layers.len());
        let mut current = input_shape.clone();
        for (i, layer) in layers.iter().enumerate() {
            current = layer.output_shape(i, &current)?;
            shapes.push(current.clone());
        }
        if current.len() != 1 {
            return Err(Error::InvalidNetwork(format!(
                "final layer must produce a logits vector, got shape {current:?}"
            )));
        }
        Ok(Self {
            classes: current[0],
            layers,
            input_shape,
            shapes,
            seed,
        })
    }

    pub fn builder(input_shape: Vec<usize>, seed: u64) -> NetworkBuilder {
        NetworkBuilder::new(input_shape, seed)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(Layer::params)
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    /// Weight then bias for every parameterised layer, in layer order.
    pub fn parameters(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .filter_map(Layer::params)
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .filter_map(|l| match l {
                Layer::Dense { weight, bias } | Layer::Conv2d { weight, bias } => Some((weight, bias)),
                _ => None,
            })
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.input_shape.hash(&mut h);
        for (layer, shape) in self.layers.iter().zip(&self.shapes) {
            layer.name().hash(&mut h);
            shape.hash(&mut h);
        }
        h.finish()
    }

    fn check_input(&self, input: &Tensor) -> Result<usize> {
        let shape = input.shape();
        if shape.len() != self.input_shape.len() + 1 || shape[1..] != self.input_shape[..] {
            let mut expected = vec![shape.first().copied().unwrap_or(1)];
            expected.extend_from_slice(&self.input_shape);
            return Err(Error::LayerShape {
                layer: 0,
                expected,
                actual: shape.to_vec(),
            });
        }
        Ok(shape[0])
    }

    /// Runs the network on a batch `[B, ..input_shape]`, keeping every
    /// intermediate activation.
    pub fn forward(&self, input: &Tensor, mode: Mode<'_>) -> Result<Activations> {
        let batch = self.check_input(input)?;
        let mut rng = match mode {
            Mode::Eval => None,
            Mode::Train(rng) => Some(rng),
        };
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        let mut aux = Vec::with_capacity(self.layers.len());
        values.push(input.clone());
        let mut in_shape: &[usize] = &self.input_shape;
        for (layer, out_shape) in self.layers.iter().zip(&self.shapes) {
            let x = values.last().expect("non-empty");
            let (out, extra) = forward_layer(layer, x.data(), batch, in_shape, out_shape, rng.as_deref_mut());
            let mut full = vec![batch];
            full.extend_from_slice(out_shape);
            values.push(Tensor::new(full, out)?);
            aux.push(extra);
            in_shape = out_shape;
        }
        Ok(Activations {
            values,
            aux,
            fingerprint: self.fingerprint(),
        })
    }

    /// Eval-mode logits for a single example shaped like `input_shape`.
    pub fn logits(&self, example: &Tensor) -> Result<Tensor> {
        if example.shape() != self.input_shape.as_slice() {
            return Err(Error::Shape {
                expected: self.input_shape.clone(),
                actual: example.shape().to_vec(),
            });
        }
        let mut shape = vec![1];
        shape.extend_from_slice(&self.input_shape);
        let batch = example.clone().reshape(shape)?;
        let acts = self.forward(&batch, Mode::Eval)?;
        acts.logits().clone().reshape(vec![self.classes])
    }

    /// Reverse pass for a loss whose gradient w.r.t. the logits is `grad`
    /// (shape `[B, C]`). Parameter gradients are skipped when `with_params` is
    /// false, which is all the attacks need.
    pub fn backward(&self, acts: &Activations, grad: &Tensor, with_params: bool) -> Result<Gradients> {
        self.check_activations(acts)?;
        let batch = acts.batch();
        if grad.shape() != [batch, self.classes] {
            return Err(Error::Shape {
                expected: vec![batch, self.classes],
                actual: grad.shape().to_vec(),
            });
        }
        let mut layer_grads: Vec<Option<ParamGrad>> = vec![None; self.layers.len()];
        let mut g: Vec<f32> = grad.data().to_vec();
        for l in (0..self.layers.len()).rev() {
            let in_shape: &[usize] = if l == 0 { &self.input_shape } else { &self.shapes[l - 1] };
            let out_shape = &self.shapes[l];
            let x = acts.values[l].data();
            let y = acts.values[l + 1].data();
            let (gin, pg) = backward_layer(
                &self.layers[l],
                &acts.aux[l],
                x,
                y,
                &g,
                batch,
                in_shape,
                out_shape,
                with_params,
            );
            layer_grads[l] = pg;
            g = gin;
        }
        let mut shape = vec![batch];
        shape.extend_from_slice(&self.input_shape);
        Ok(Gradients {
            layers: layer_grads,
            input: Tensor::new(shape, g)?,
        })
    }

    fn check_activations(&self, acts: &Activations) -> Result<()> {
        if acts.fingerprint != self.fingerprint() {
            return Err(Error::StaleActivations("produced by a different network".into()));
        }
        if acts.values.len() != self.layers.len() + 1 || acts.aux.len() != self.layers.len() {
            return Err(Error::StaleActivations(format!(
                "expected {} activations, found {}",
                self.layers.len() + 1,
                acts.values.len()
            )));
        }
        let batch = acts.batch();
        for (l, shape) in self.shapes.iter().enumerate() {
            let v = &acts.values[l + 1];
            if v.shape()[0] != batch || v.shape()[1..] != shape[..] {
                return Err(Error::StaleActivations(format!(
                    "activation {} has shape {:?}",
                    l + 1,
                    v.shape()
                )));
            }
        }
        Ok(())
    }

    /// Summary of the architecture used in checkpoint headers.
    pub fn describe(&self) -> String {
        let mut parts = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            parts.push(match layer {
                Layer::Dense { weight, .. } => format!("dense:{}:{}", weight.shape()[1], weight.shape()[0]),
                Layer::Conv2d { weight, .. } => {
                    let s = weight.shape();
                    format!("conv2d:{}:{}:{}", s[1], s[0], s[2])
                }
                Layer::Relu => "relu".into(),
                Layer::MaxPool2x2 => "maxpool2x2".into(),
                Layer::Dropout { keep } => format!("dropout:{keep}"),
            });
        }
        parts.join(";")
    }
}

fn forward_layer(
    layer: &Layer,
    x: &[f32],
    batch: usize,
    in_shape: &[usize],
    out_shape: &[usize],
    rng: Option<&mut (dyn RngCore + '_)>,
) -> (Vec<f32>, Aux) {
    let in_len: usize = in_shape.iter().product();
    let out_len: usize = out_shape.iter().product();
    match layer {
        Layer::Dense { weight, bias } => {
            let n_in = weight.shape()[1];
            let w = weight.data();
            let b = bias.data();
            let mut out = Vec::with_capacity(batch * out_len);
            for e in 0..batch {
                let xe = to_f64(&x[e * in_len..(e + 1) * in_len]);
                for o in 0..out_len {
                    let acc = f64::from(b[o]) + dot64(&w[o * n_in..(o + 1) * n_in], &xe);
                    out.push(acc as f32);
                }
            }
            (out, Aux::None)
        }
        Layer::Conv2d { weight, bias } => {
            let s = weight.shape();
            let (oc, ic, k) = (s[0], s[1], s[2]);
            let (h, w) = (in_shape[1], in_shape[2]);
            let hw = h * w;
            let wmat = to_f64(weight.data());
            let ickk = ic * k * k;
            let mut out = Vec::with_capacity(batch * out_len);
            let mut buf = vec![0.0f64; oc * hw];
            for e in 0..batch {
                let cols = im2col(&x[e * in_len..(e + 1) * in_len], ic, h, w, k);
                gemm(
                    oc,
                    ickk,
                    hw,
                    &wmat,
                    ickk as isize,
                    1,
                    &cols,
                    hw as isize,
                    1,
                    0.0,
                    &mut buf,
                );
                for c in 0..oc {
                    let bc = f64::from(bias.data()[c]);
                    out.extend(buf[c * hw..(c + 1) * hw].iter().map(|v| (v + bc) as f32));
                }
            }
            (out, Aux::None)
        }
        Layer::Relu => (x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(), Aux::None),
        Layer::MaxPool2x2 => {
            let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
            let mut out = Vec::with_capacity(batch * out_len);
            let mut idx = Vec::with_capacity(batch * out_len);
            for e in 0..batch {
                let (o, i) = maxpool2x2(&x[e * in_len..(e + 1) * in_len], c, h, w);
                out.extend(o);
                idx.extend(i);
            }
            (out, Aux::PoolIndex(idx))
        }
        Layer::Dropout { keep } => match rng {
            None => (x.to_vec(), Aux::None),
            Some(rng) => {
                let keep = *keep;
                let scale = 1.0 / keep;
                let mask: Vec<f32> = if keep >= 1.0 {
                    vec![1.0; x.len()]
                } else {
                    (0..x.len())
                        .map(|_| if rng.gen::<f32>() < keep { scale } else { 0.0 })
                        .collect()
                };
                let out = x.iter().zip(&mask).map(|(v, m)| v * m).collect();
                (out, Aux::DropoutMask(mask))
            }
        },
    }
}

#[allow(clippy::too_many_arguments)]
fn backward_layer(
    layer: &Layer,
    aux: &Aux,
    x: &[f32],
    y: &[f32],
    g: &[f32],
    batch: usize,
    in_shape: &[usize],
    out_shape: &[usize],
    with_params: bool,
) -> (Vec<f32>, Option<ParamGrad>) {
    let in_len: usize = in_shape.iter().product();
    let out_len: usize = out_shape.iter().product();
    match layer {
        Layer::Dense { weight, bias } => {
            let n_in = weight.shape()[1];
            let w = weight.data();
            let mut gin = Vec::with_capacity(batch * in_len);
            for e in 0..batch {
                let ge = &g[e * out_len..(e + 1) * out_len];
                let mut acc = vec![0.0f64; n_in];
                for (o, &go) in ge.iter().enumerate() {
                    if go == 0.0 {
                        continue;
                    }
                    let go = f64::from(go);
                    for (a, &wv) in acc.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                        *a += go * f64::from(wv);
                    }
                }
                gin.extend(acc.iter().map(|&v| v as f32));
            }
            let pg = with_params.then(|| {
                let mut gw = vec![0.0f64; out_len * n_in];
                let mut gb = vec![0.0f64; out_len];
                for e in 0..batch {
                    let xe = to_f64(&x[e * in_len..(e + 1) * in_len]);
                    for o in 0..out_len {
                        let go = f64::from(g[e * out_len + o]);
                        gb[o] += go;
                        if go == 0.0 {
                            continue;
                        }
                        for (a, xv) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(&xe) {
                            *a += go * xv;
                        }
                    }
                }
                ParamGrad {
                    weight: Tensor::new(weight.shape().to_vec(), gw.iter().map(|&v| v as f32).collect())
                        .expect("shape matches weight"),
                    bias: Tensor::new(bias.shape().to_vec(), gb.iter().map(|&v| v as f32).collect())
                        .expect("shape matches bias"),
                }
            });
            (gin, pg)
        }
        Layer::Conv2d { weight, bias } => {
            let s = weight.shape();
            let (oc, ic, k) = (s[0], s[1], s[2]);
            let (h, w) = (in_shape[1], in_shape[2]);
            let hw = h * w;
            let ickk = ic * k * k;
            let wmat = to_f64(weight.data());
            let mut gin = Vec::with_capacity(batch * in_len);
            let mut gw = vec![0.0f64; oc * ickk];
            let mut gb = vec![0.0f64; oc];
            let mut dcols = vec![0.0f64; ickk * hw];
            for e in 0..batch {
                let ge = to_f64(&g[e * out_len..(e + 1) * out_len]);
                // dcols = Wᵀ · dOut
                gemm(
                    ickk,
                    oc,
                    hw,
                    &wmat,
                    1,
                    ickk as isize,
                    &ge,
                    hw as isize,
                    1,
                    0.0,
                    &mut dcols,
                );
                gin.extend(col2im(&dcols, ic, h, w, k).iter().map(|&v| v as f32));
                if with_params {
                    let cols = im2col(&x[e * in_len..(e + 1) * in_len], ic, h, w, k);
                    // dW += dOut · colsᵀ
                    gemm(oc, hw, ickk, &ge, hw as isize, 1, &cols, 1, hw as isize, 1.0, &mut gw);
                    for c in 0..oc {
                        gb[c] += ge[c * hw..(c + 1) * hw].iter().sum::<f64>();
                    }
                }
            }
            let pg = with_params.then(|| ParamGrad {
                weight: Tensor::new(s.to_vec(), gw.iter().map(|&v| v as f32).collect()).expect("weight shape"),
                bias: Tensor::new(bias.shape().to_vec(), gb.iter().map(|&v| v as f32).collect()).expect("bias shape"),
            });
            (gin, pg)
        }
        Layer::Relu => (
            g.iter()
                .zip(y)
                .map(|(&gv, &yv)| if yv > 0.0 { gv } else { 0.0 })
                .collect(),
            None,
        ),
        Layer::MaxPool2x2 => {
            let Aux::PoolIndex(idx) = aux else {
                unreachable!("maxpool forward always records indices")
            };
            let mut gin = vec![0.0f32; batch * in_len];
            for e in 0..batch {
                for j in 0..out_len {
                    let src = idx[e * out_len + j] as usize;
                    gin[e * in_len + src] += g[e * out_len + j];
                }
            }
            (gin, None)
        }
        Layer::Dropout { .. } => match aux {
            Aux::DropoutMask(mask) => (g.iter().zip(mask).map(|(a, m)| a * m).collect(), None),
            _ => (g.to_vec(), None),
        },
    }
}

/// Incremental construction with Kaiming-uniform weights and zero biases.
pub struct NetworkBuilder {
    input_shape: Vec<usize>,
    current: Vec<usize>,
    layers: Vec<Layer>,
    rng: ChaCha8Rng,
    seed: u64,
    error: Option<Error>,
}

impl NetworkBuilder {
    fn new(input_shape: Vec<usize>, seed: u64) -> Self {
        Self {
            current: input_shape.clone(),
            input_shape,
            layers: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            error: None,
        }
    }

    fn kaiming(&mut self, shape: Vec<usize>, fan_in: usize) -> Tensor {
        let bound = (6.0 / fan_in as f64).sqrt() as f32;
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-bound..=bound)).collect();
        Tensor::new(shape, data).expect("length from shape")
    }

    fn push(mut self, layer: Layer) -> Self {
        if self.error.is_some() {
            return self;
        }
        match layer.output_shape(self.layers.len(), &self.current) {
            Ok(shape) => {
                self.current = shape;
                self.layers.push(layer);
            }
            Err(e) => self.error = Some(e),
        }
        self
    }

    pub fn dense(mut self, out: usize) -> Self {
        let n_in = self.current.iter().product();
        let weight = self.kaiming(vec![out, n_in], n_in);
        self.push(Layer::Dense {
            weight,
            bias: Tensor::zeros(vec![out]),
        })
    }

    pub fn conv2d(mut self, out_channels: usize, kernel: usize) -> Self {
        let in_ch = self.current.first().copied().unwrap_or(0);
        let fan_in = in_ch * kernel * kernel;
        let weight = self.kaiming(vec![out_channels, in_ch, kernel, kernel], fan_in.max(1));
        self.push(Layer::Conv2d {
            weight,
            bias: Tensor::zeros(vec![out_channels]),
        })
    }

    pub fn relu(self) -> Self {
        self.push(Layer::Relu)
    }

    pub fn maxpool2x2(self) -> Self {
        self.push(Layer::MaxPool2x2)
    }

    pub fn dropout(self, keep: f32) -> Self {
        self.push(Layer::Dropout { keep })
    }

    pub fn build(self) -> Result<Network> {
        if let Some(e) = self.error {
            return Err(e);
        }
        Network::new(self.layers, self.input_shape, self.seed)
    }
}
