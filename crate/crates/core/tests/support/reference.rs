//! Straight-line f64 re-implementation of the eval-mode forward pass, written
//! from the layer definitions only. Used as a finite-difference oracle.

#![allow(dead_code)]

use logitfix_core::nn::{Layer, Network};

/// Parameters as f64 copies, in `Network::parameters` order.
pub fn params64(net: &Network) -> Vec<Vec<f64>> {
    net.parameters()
        .iter()
        .map(|t| t.data().iter().map(|&v| f64::from(v)).collect())
        .collect()
}

/// Logits plus the activation pattern (ReLU signs, max-pool winners). Two
/// points with the same pattern lie in the same linear piece.
pub fn forward(net: &Network, params: &[Vec<f64>], input: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut shape = net.input_shape().to_vec();
    let mut x = input.to_vec();
    let mut pattern = Vec::new();
    let mut p = 0;
    for layer in net.layers() {
        match layer {
            Layer::Dense { weight, .. } => {
                let (out, n_in) = (weight.shape()[0], weight.shape()[1]);
                let (w, b) = (&params[p], &params[p + 1]);
                p += 2;
                x = (0..out)
                    .map(|o| b[o] + (0..n_in).map(|i| w[o * n_in + i] * x[i]).sum::<f64>())
                    .collect();
                shape = vec![out];
            }
            Layer::Conv2d { weight, .. } => {
                let ws = weight.shape();
                let (oc, ic, k) = (ws[0], ws[1], ws[2]);
                let (h, wd) = (shape[1], shape[2]);
                let pad = (k / 2) as isize;
                let (w, b) = (&params[p], &params[p + 1]);
                p += 2;
                let mut y = vec![0.0; oc * h * wd];
                for o in 0..oc {
                    for r in 0..h {
                        for c in 0..wd {
                            let mut acc = b[o];
                            for i in 0..ic {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let sr = r as isize + ky as isize - pad;
                                        let sc = c as isize + kx as isize - pad;
                                        if sr < 0 || sc < 0 || sr >= h as isize || sc >= wd as isize {
                                            continue;
                                        }
                                        acc += w[((o * ic + i) * k + ky) * k + kx]
                                            * x[(i * h + sr as usize) * wd + sc as usize];
                                    }
                                }
                            }
                            y[(o * h + r) * wd + c] = acc;
                        }
                    }
                }
                x = y;
                shape = vec![oc, h, wd];
            }
            Layer::Relu => {
                pattern.extend(x.iter().map(|&v| usize::from(v > 0.0)));
                x.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            Layer::MaxPool2x2 => {
                let (ch, h, wd) = (shape[0], shape[1], shape[2]);
                let (oh, ow) = (h / 2, wd / 2);
                let mut y = vec![0.0; ch * oh * ow];
                for c in 0..ch {
                    for r in 0..oh {
                        for q in 0..ow {
                            let mut best = (f64::NEG_INFINITY, 0);
                            for (j, (dy, dx)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                                let v = x[(c * h + 2 * r + dy) * wd + 2 * q + dx];
                                if v > best.0 {
                                    best = (v, j);
                                }
                            }
                            y[(c * oh + r) * ow + q] = best.0;
                            pattern.push(best.1);
                        }
                    }
                }
                x = y;
                shape = vec![ch, oh, ow];
            }
            Layer::Dropout { .. } => {}
        }
    }
    (x, pattern)
}

/// Central-difference derivative of `seed · logits` with respect to one
/// coordinate, or `None` when the activation pattern changes across `±h`.
pub fn central_difference(
    net: &Network,
    params: &[Vec<f64>],
    input: &[f64],
    seed: &[f64],
    target: Target,
    h: f64,
) -> Option<f64> {
    let eval = |delta: f64| {
        let mut p = params.to_vec();
        let mut x = input.to_vec();
        match target {
            Target::Param(t, j) => p[t][j] += delta,
            Target::Input(j) => x[j] += delta,
        }
        let (z, pattern) = forward(net, &p, &x);
        (z.iter().zip(seed).map(|(a, b)| a * b).sum::<f64>(), pattern)
    };
    let (_, base) = eval(0.0);
    let (plus, pp) = eval(h);
    let (minus, pm) = eval(-h);
    (pp == base && pm == base).then(|| (plus - minus) / (2.0 * h))
}

#[derive(Debug, Clone, Copy)]
pub enum Target {
    /// (parameter tensor index, flat entry)
    Param(usize, usize),
    Input(usize),
}

/// The error measure used for gradient checks.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

pub struct GradCheck {
    pub checked: usize,
    pub excluded: usize,
    pub worst: f64,
}

/// Compares every analytic parameter and input gradient of `seed · logits`
/// against central differences of the reference forward pass.
pub fn check_gradients(net: &Network, input: &[f32], seed: &[f32]) -> GradCheck {
    use logitfix_core::nn::Mode;
    use logitfix_core::Tensor;

    let mut shape = vec![1];
    shape.extend_from_slice(net.input_shape());
    let batch = Tensor::new(shape, input.to_vec()).unwrap();
    let acts = net.forward(&batch, Mode::Eval).unwrap();
    let grads = net
        .backward(&acts, &Tensor::new(vec![1, seed.len()], seed.to_vec()).unwrap(), true)
        .unwrap();
    let params = params64(net);
    let x: Vec<f64> = input.iter().map(|&v| f64::from(v)).collect();
    let s: Vec<f64> = seed.iter().map(|&v| f64::from(v)).collect();
    let mut report = GradCheck {
        checked: 0,
        excluded: 0,
        worst: 0.0,
    };
    let mut visit = |analytic: f32, target: Target| match central_difference(net, &params, &x, &s, target, 1e-3) {
        Some(numeric) => {
            report.checked += 1;
            report.worst = report.worst.max(relative_error(f64::from(analytic), numeric));
        }
        None => report.excluded += 1,
    };
    for (t, g) in grads.parameters().iter().enumerate() {
        for (j, &a) in g.data().iter().enumerate() {
            visit(a, Target::Param(t, j));
        }
    }
    for (j, &a) in grads.input.data().iter().enumerate() {
        visit(a, Target::Input(j));
    }
    report
}

/// A small random dense or conv network with random (non-zero) biases.
pub fn random_network(seed: u64, conv: bool) -> Network {
    use logitfix_core::Tensor;
    use rand::{Rng, SeedableRng};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let classes = rng.gen_range(2..6);
    let mut net = if conv {
        let ch = rng.gen_range(1..3);
        let side = 2 * rng.gen_range(2..4);
        Network::builder(vec![ch, side, side], seed)
            .conv2d(rng.gen_range(1..4), 3)
            .relu()
            .maxpool2x2()
            .conv2d(rng.gen_range(1..3), 3)
            .relu()
            .dense(classes)
            .build()
            .unwrap()
    } else {
        Network::builder(vec![rng.gen_range(2..8)], seed)
            .dense(rng.gen_range(3..9))
            .relu()
            .dense(rng.gen_range(3..9))
            .relu()
            .dense(classes)
            .build()
            .unwrap()
    };
    for t in net.parameters_mut() {
        if t.shape().len() == 1 {
            let n = t.len();
            *t = Tensor::from_vec((0..n).map(|_| rng.gen_range(-0.3f32..0.3)).collect());
        }
    }
    net
}

pub fn random_input(net: &Network, seed: u64) -> (Vec<f32>, Vec<f32>) {
    use rand::{Rng, SeedableRng};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let n: usize = net.input_shape().iter().product();
    let x = (0..n).map(|_| rng.gen_range(0.0f32..1.0)).collect();
    let s = (0..net.classes()).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    (x, s)
}
