//! DeepFool: repeatedly step to the nearest boundary of the locally
//! linearised classifier, then overshoot the accumulated step by `(1 + η)`.
//! Pixels sitting on a face of the `[0, 1]` box do not take part in a step that
//! would push them outward, so the step is minimal among those the box allows.

use super::{forward_one, AttackConfig, AttackOutcome};
use crate::classifier::LabeledExample;
use crate::error::Result;
use crate::nn::Network;
use crate::tensor::{argmax, Tensor};

/// Classes sorted by descending score, ties by lower index.
fn ranked(logits: &[f32]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    order
}

pub fn deepfool(net: &Network, example: &LabeledExample, config: &AttackConfig) -> Result<AttackOutcome> {
    let y = example.label;
    let x = example.image.data();
    let shape = example.image.shape().to_vec();
    let classes = net.classes();
    let mut total = vec![0.0f64; x.len()];
    let mut current = example.image.clone();
    let mut iterations = 0;
    let mut skipped_steps = 0;
    let overshoot = 1.0 + f64::from(config.overshoot);

    loop {
        let acts = forward_one(net, &current)?;
        let logits = acts.logits().data().to_vec();
        if argmax(&logits) != y {
            break;
        }
        if iterations == config.deepfool_max_iter {
            break;
        }
        let candidates: Vec<usize> = ranked(&logits)
            .into_iter()
            .take(config.deepfool_candidates)
            .filter(|&k| k != y)
            .collect();
        // nearest linearised boundary: min over k of |f_k| / ‖w_k‖
        let mut best: Option<(f64, f64, Vec<f64>)> = None;
        for k in candidates {
            let mut seed = vec![0.0f32; classes];
            seed[k] = 1.0;
            seed[y] = -1.0;
            let grad = net.backward(&acts, &Tensor::new(vec![1, classes], seed)?, false)?;
            // pixels on a box face that the step would push outward cannot move
            let w: Vec<f64> = grad
                .input
                .data()
                .iter()
                .zip(current.data())
                .map(|(&g, &p)| {
                    if (p <= 0.0 && g < 0.0) || (p >= 1.0 && g > 0.0) {
                        0.0
                    } else {
                        f64::from(g)
                    }
                })
                .collect();
            let norm_sq: f64 = w.iter().map(|v| v * v).sum();
            if norm_sq == 0.0 {
                continue;
            }
            let f = f64::from(logits[k]) - f64::from(logits[y]);
            let dist = f.abs() / norm_sq.sqrt();
            if best.as_ref().map_or(true, |b| dist < b.0) {
                best = Some((dist, f, w));
            }
        }
        let Some((_, f, w)) = best else {
            skipped_steps += 1;
            let mut outcome = AttackOutcome::new(net, example, current, iterations)?;
            outcome.degenerate_steps = skipped_steps;
            return Ok(outcome);
        };
        let norm_sq: f64 = w.iter().map(|v| v * v).sum();
        let scale = f.abs() / norm_sq;
        for (t, wv) in total.iter_mut().zip(&w) {
            *t += scale * wv;
        }
        iterations += 1;
        let next: Vec<f32> = x
            .iter()
            .zip(&total)
            .map(|(&xv, &t)| ((f64::from(xv) + overshoot * t) as f32).clamp(0.0, 1.0))
            .collect();
        current = Tensor::new(shape.clone(), next)?;
    }
    AttackOutcome::new(net, example, current, iterations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::{AttackKind, Preset};
    use crate::nn::Layer;

    fn cfg() -> AttackConfig {
        AttackConfig::preset(AttackKind::DeepFool, Preset::PaperImagenet)
    }

    #[test]
    fn binary_linear_closed_form() {
        // logits [0, w·x + b]; label 0 at x where w·x + b < 0.
        let w = [0.8f32, -0.3, 0.5];
        let b = -0.2f32;
        let net = Network::new(
            vec![Layer::Dense {
                weight: Tensor::new(vec![2, 3], vec![0.0, 0.0, 0.0, w[0], w[1], w[2]]).unwrap(),
                bias: Tensor::from_vec(vec![0.0, b]),
            }],
            vec![3],
            0,
        )
        .unwrap();
        let x = [0.3f32, 0.6, 0.2];
        let e = LabeledExample::new(Tensor::from_vec(x.to_vec()), 0).unwrap();
        let out = deepfool(&net, &e, &cfg()).unwrap();
        let f: f64 = w
            .iter()
            .zip(&x)
            .map(|(a, b)| f64::from(*a) * f64::from(*b))
            .sum::<f64>()
            + f64::from(b);
        let norm_sq: f64 = w.iter().map(|v| f64::from(*v).powi(2)).sum();
        for i in 0..3 {
            let expected = f64::from(x[i]) - 1.02 * f / norm_sq * f64::from(w[i]);
            assert!((f64::from(out.adversarial.data()[i]) - expected).abs() < 1e-6);
        }
        assert!(out.success);
        assert_eq!(out.iterations, 1);
        let closed = 1.02 * f.abs() / norm_sq.sqrt();
        assert!((f64::from(out.l2) - closed).abs() / closed < 1e-5);
    }

    #[test]
    fn pixels_on_the_box_face_stay_put() {
        // the first pixel sits at 0 and the boundary normal points below 0
        let w = [-0.5f32, 1.0];
        let net = Network::new(
            vec![Layer::Dense {
                weight: Tensor::new(vec![2, 2], vec![0.0, 0.0, w[0], w[1]]).unwrap(),
                bias: Tensor::from_vec(vec![0.0, -0.6]),
            }],
            vec![2],
            0,
        )
        .unwrap();
        let e = LabeledExample::new(Tensor::from_vec(vec![0.0, 0.4]), 0).unwrap();
        let out = deepfool(&net, &e, &cfg()).unwrap();
        assert!(out.success);
        assert_eq!(out.iterations, 1);
        assert_eq!(out.adversarial.data()[0], 0.0);
        // only the free pixel moves: 0.2 to the boundary, times (1 + η)
        assert!((out.adversarial.data()[1] - (0.4 + 0.2 * 1.02)).abs() < 1e-6);
    }

    #[test]
    fn misclassified_input_is_returned_unchanged() {
        let net = Network::new(
            vec![Layer::Dense {
                weight: Tensor::zeros(vec![2, 2]),
                bias: Tensor::from_vec(vec![0.0, 1.0]),
            }],
            vec![2],
            0,
        )
        .unwrap();
        let e = LabeledExample::new(Tensor::from_vec(vec![0.4, 0.4]), 0).unwrap();
        let out = deepfool(&net, &e, &cfg()).unwrap();
        assert!(out.success);
        assert_eq!(out.iterations, 0);
        assert!(out.adversarial.bitwise_eq(&e.image));
    }

    #[test]
    fn flat_boundaries_fail_cleanly() {
        // correct class wins by a constant; no input direction changes anything
        let net = Network::new(
            vec![Layer::Dense {
                weight: Tensor::zeros(vec![3, 2]),
                bias: Tensor::from_vec(vec![1.0, 0.0, 0.0]),
            }],
            vec![2],
            0,
        )
        .unwrap();
        let e = LabeledExample::new(Tensor::from_vec(vec![0.4, 0.4]), 0).unwrap();
        let out = deepfool(&net, &e, &cfg()).unwrap();
        assert!(!out.success);
        assert_eq!(out.degenerate_steps, 1);
    }

    #[test]
    fn multiclass_crosses_boundary() {
        let net = Network::builder(vec![8], 21).dense(12).relu().dense(5).build().unwrap();
        let x: Vec<f32> = (0..8).map(|i| (i as f32 * 0.37).fract()).collect();
        let image = Tensor::from_vec(x);
        let label = net.logits(&image).unwrap().argmax();
        let e = LabeledExample::new(image, label).unwrap();
        let out = deepfool(&net, &e, &cfg()).unwrap();
        if out.success {
            assert_ne!(net.logits(&out.adversarial).unwrap().argmax(), label);
        }
        assert!(out.adversarial.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn ranking_breaks_ties_low() {
        assert_eq!(ranked(&[1.0, 3.0, 3.0, 0.0]), vec![1, 2, 0, 3]);
    }
}
