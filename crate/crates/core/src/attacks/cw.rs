//! Carlini–Wagner ℓ2 attack.
//!
//! Optimises `w` with `x* = (tanh w + 1) / 2`, so every iterate is a valid
//! image, minimising `‖x* − x‖² + c · max(z_y − max_{j≠y} z_j, −κ)` with Adam.
//! An outer binary search adjusts `c`.

use super::{forward_one, AttackConfig, AttackOutcome};
use crate::classifier::LabeledExample;
use crate::error::Result;
use crate::nn::Network;
use crate::tensor::Tensor;

const TANH_CLAMP: f64 = 1e-6;
const UPPER_INIT: f64 = 1e10;

/// `z_y − max_{j≠y} z_j` and the maximising `j` (lowest index on ties).
pub(crate) fn margin(logits: &[f32], label: usize) -> (f64, usize) {
    let mut runner = usize::MAX;
    for (j, &z) in logits.iter().enumerate() {
        if j != label && (runner == usize::MAX || z > logits[runner]) {
            runner = j;
        }
    }
    (f64::from(logits[label]) - f64::from(logits[runner]), runner)
}

struct Best {
    image: Vec<f32>,
    l2_sq: f64,
    margin: f64,
}

pub fn cw(net: &Network, example: &LabeledExample, config: &AttackConfig) -> Result<AttackOutcome> {
    let y = example.label;
    let shape = example.image.shape().to_vec();
    let x: Vec<f64> = example.image.data().iter().map(|&v| f64::from(v)).collect();
    let classes = net.classes();
    let kappa = config.cw_kappa;

    let clean = forward_one(net, &example.image)?;
    if margin(clean.logits().data(), y).0 <= -kappa {
        return AttackOutcome::new(net, example, example.image.clone(), 0);
    }

    let w0: Vec<f64> = x
        .iter()
        .map(|&v| (2.0 * v.clamp(TANH_CLAMP, 1.0 - TANH_CLAMP) - 1.0).atanh())
        .collect();

    let mut success: Option<Best> = None;
    let mut fallback: Option<Best> = None;
    let (mut lower, mut upper) = (0.0f64, UPPER_INIT);
    let mut c = config.cw_initial_const;
    let mut total_iterations = 0;

    for _ in 0..config.cw_search_steps {
        let mut w = w0.clone();
        let mut m = vec![0.0f64; w.len()];
        let mut v = vec![0.0f64; w.len()];
        let mut found = false;
        for t in 0..=config.cw_iterations {
            let tanh: Vec<f64> = w.iter().map(|wi| wi.tanh()).collect();
            let xs: Vec<f64> = tanh.iter().map(|th| (th + 1.0) / 2.0).collect();
            let image: Vec<f32> = xs.iter().map(|&p| p as f32).collect();
            let acts = forward_one(net, &Tensor::new(shape.clone(), image.clone())?)?;
            let logits = acts.logits().data().to_vec();
            let (mg, runner) = margin(&logits, y);
            let l2_sq: f64 = image.iter().zip(&x).map(|(&p, &q)| (f64::from(p) - q).powi(2)).sum();

            let attained = mg <= -kappa && crate::tensor::argmax(&logits) != y;
            if attained {
                found = true;
                if success.as_ref().map_or(true, |b| l2_sq < b.l2_sq) {
                    success = Some(Best {
                        image: image.clone(),
                        l2_sq,
                        margin: mg,
                    });
                }
            } else if fallback.as_ref().map_or(true, |b| mg < b.margin) {
                fallback = Some(Best {
                    image: image.clone(),
                    l2_sq,
                    margin: mg,
                });
            }
            if t == config.cw_iterations {
                break;
            }
            total_iterations += 1;

            // ∂/∂x* of the objective, then chain through x* = (tanh w + 1)/2
            let mut gx: Vec<f64> = xs.iter().zip(&x).map(|(p, q)| 2.0 * (p - q)).collect();
            if mg > -kappa {
                let mut seed = vec![0.0f32; classes];
                seed[y] = 1.0;
                seed[runner] = -1.0;
                let g = net.backward(&acts, &Tensor::new(vec![1, classes], seed)?, false)?;
                for (a, &b) in gx.iter_mut().zip(g.input.data()) {
                    *a += c * f64::from(b);
                }
            }
            let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
            let step = (t + 1) as i32;
            let lr = config.cw_learning_rate * (1.0 - b2.powi(step)).sqrt() / (1.0 - b1.powi(step));
            for i in 0..w.len() {
                let g = gx[i] * (1.0 - tanh[i] * tanh[i]) / 2.0;
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                w[i] -= lr * m[i] / (v[i].sqrt() + eps);
            }
        }
        if found {
            upper = upper.min(c);
            c = (lower + upper) / 2.0;
        } else {
            lower = lower.max(c);
            c = if upper < UPPER_INIT * 0.1 {
                (lower + upper) / 2.0
            } else {
                c * 10.0
            };
        }
    }

    let best = success.or(fallback).expect("at least one iterate evaluated");
    AttackOutcome::new(net, example, Tensor::new(shape, best.image)?, total_iterations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::{AttackKind, Preset};
    use crate::nn::Layer;

    fn linear(w: &[f32], b: f32) -> Network {
        let n = w.len();
        let mut weight = vec![0.0; n];
        weight.extend_from_slice(w);
        Network::new(
            vec![Layer::Dense {
                weight: Tensor::new(vec![2, n], weight).unwrap(),
                bias: Tensor::from_vec(vec![0.0, b]),
            }],
            vec![n],
            0,
        )
        .unwrap()
    }

    #[test]
    fn margin_picks_strongest_rival() {
        assert_eq!(margin(&[1.0, 3.0, 2.0, 3.0], 2), (-1.0, 1));
        assert_eq!(margin(&[5.0, 1.0], 0), (4.0, 1));
    }

    #[test]
    fn already_misclassified_is_free() {
        let net = linear(&[0.0, 0.0], 1.0);
        let e = LabeledExample::new(Tensor::from_vec(vec![0.5, 0.5]), 0).unwrap();
        let cfg = AttackConfig::preset(AttackKind::Cw, Preset::DeskMnist);
        let out = cw(&net, &e, &cfg).unwrap();
        assert!(out.success);
        assert_eq!(out.l2, 0.0);
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn near_minimal_distance_on_one_dimension() {
        // class 1 wins once x > 0.6; the smallest successful move is 0.1 + 0
        let net = linear(&[1.0], -0.6);
        let e = LabeledExample::new(Tensor::from_vec(vec![0.5]), 0).unwrap();
        let mut cfg = AttackConfig::preset(AttackKind::Cw, Preset::DeskMnist);
        cfg.cw_iterations = 200;
        cfg.cw_search_steps = 6;
        cfg.cw_initial_const = 1.0;
        let out = cw(&net, &e, &cfg).unwrap();
        assert!(out.success);
        // oracle: grid search over admissible x* in [0, 1]
        let oracle = (0..=100_000)
            .map(|i| i as f64 / 100_000.0)
            .filter(|&p| p - 0.6 > 0.0)
            .map(|p| (p - 0.5).abs())
            .fold(f64::INFINITY, f64::min);
        let got = f64::from(out.l2);
        assert!(got >= oracle - 1e-6);
        assert!(got <= oracle * 1.1, "got {got}, oracle {oracle}");
    }

    #[test]
    fn iterates_stay_in_box() {
        let net = Network::builder(vec![6], 3).dense(8).relu().dense(4).build().unwrap();
        let image = Tensor::from_vec(vec![0.0, 1.0, 0.5, 0.2, 0.9, 0.0]);
        let label = net.logits(&image).unwrap().argmax();
        let e = LabeledExample::new(image, label).unwrap();
        let cfg = AttackConfig::preset(AttackKind::Cw, Preset::DeskMnist);
        let out = cw(&net, &e, &cfg).unwrap();
        assert!(out.adversarial.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(out.iterations, cfg.cw_iterations * cfg.cw_search_steps);
    }
}
