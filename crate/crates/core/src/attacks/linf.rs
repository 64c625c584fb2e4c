use rand::Rng;

use super::{loss_gradient, uniform_in, AttackConfig, AttackOutcome};
use crate::classifier::LabeledExample;
use crate::error::Result;
use crate::nn::Network;
use crate::tensor::{sign, Tensor};

/// Per-pixel ε-ball bounds around a clean image, rounded inward so that
/// `|x* - x| <= ε` holds exactly (not merely up to `f32` rounding).
#[derive(Debug, Clone)]
pub struct LinfBounds {
    lo: Vec<f32>,
    hi: Vec<f32>,
}

impl LinfBounds {
    pub fn new(clean: &[f32], epsilon: f32) -> Self {
        let eps = f64::from(epsilon);
        let (lo, hi) = clean
            .iter()
            .map(|&x| {
                let mut lo = x - epsilon;
                if f64::from(x) - f64::from(lo) > eps {
                    lo = lo.next_up();
                }
                let mut hi = x + epsilon;
                if f64::from(hi) - f64::from(x) > eps {
                    hi = hi.next_down();
                }
                (lo, hi)
            })
            .unzip();
        Self { lo, hi }
    }

    /// Ball projection, then box projection.
    pub fn apply(&self, v: &mut [f32]) {
        for ((v, &lo), &hi) in v.iter_mut().zip(&self.lo).zip(&self.hi) {
            *v = v.clamp(lo, hi).clamp(0.0, 1.0);
        }
    }
}

/// Projects `v` onto `B_ε^∞(clean) ∩ [0, 1]^n`.
pub fn project(v: &mut [f32], clean: &[f32], epsilon: f32) {
    LinfBounds::new(clean, epsilon).apply(v);
}

fn signed_step(current: &[f32], direction: impl Iterator<Item = f32>, alpha: f32, bounds: &LinfBounds) -> Vec<f32> {
    let mut next: Vec<f32> = current.iter().zip(direction).map(|(&x, s)| x + alpha * s).collect();
    bounds.apply(&mut next);
    next
}

fn with_data(example: &LabeledExample, data: Vec<f32>) -> Result<Tensor> {
    Tensor::new(example.image.shape().to_vec(), data)
}

/// One signed-gradient step of size ε from the clean image.
pub fn fgsm(net: &Network, example: &LabeledExample, config: &AttackConfig) -> Result<AttackOutcome> {
    let x = example.image.data();
    let (_, grad) = loss_gradient(net, &example.image, example.label)?;
    let bounds = LinfBounds::new(x, config.epsilon);
    let adv = signed_step(x, grad.iter().map(|&g| sign(f64::from(g))), config.epsilon, &bounds);
    AttackOutcome::new(net, example, with_data(example, adv)?, 1)
}

/// Projected gradient descent from a uniform random start inside the ball.
pub fn pgd(
    net: &Network,
    example: &LabeledExample,
    config: &AttackConfig,
    rng: &mut impl Rng,
) -> Result<AttackOutcome> {
    let x = example.image.data();
    let bounds = LinfBounds::new(x, config.epsilon);
    let mut current: Vec<f32> = x.iter().map(|&v| v + uniform_in(rng, config.epsilon)).collect();
    bounds.apply(&mut current);
    for _ in 0..config.iterations {
        let (_, grad) = loss_gradient(net, &with_data(example, current.clone())?, example.label)?;
        current = signed_step(
            &current,
            grad.iter().map(|&g| sign(f64::from(g))),
            config.step_size,
            &bounds,
        );
    }
    AttackOutcome::new(net, example, with_data(example, current)?, config.iterations)
}

/// Momentum iterative method: signed steps along an accumulator of
/// ℓ1-normalised gradients.
pub fn mim(net: &Network, example: &LabeledExample, config: &AttackConfig) -> Result<AttackOutcome> {
    mim_traced(net, example, config, None)
}

/// [`mim`], optionally recording the accumulator after every update.
pub fn mim_traced(
    net: &Network,
    example: &LabeledExample,
    config: &AttackConfig,
    mut trace: Option<&mut Vec<Vec<f64>>>,
) -> Result<AttackOutcome> {
    let x = example.image.data();
    let bounds = LinfBounds::new(x, config.epsilon);
    let mu = f64::from(config.momentum);
    let mut accum = vec![0.0f64; x.len()];
    let mut current = x.to_vec();
    let mut guarded = 0;
    for _ in 0..config.iterations {
        let (_, grad) = loss_gradient(net, &with_data(example, current.clone())?, example.label)?;
        let l1: f64 = grad.iter().map(|&g| f64::from(g).abs()).sum();
        if l1 < 1e-12 {
            guarded += 1;
        }
        let norm = l1.max(1e-12);
        for (a, &g) in accum.iter_mut().zip(&grad) {
            *a = mu * *a + f64::from(g) / norm;
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push(accum.clone());
        }
        current = signed_step(&current, accum.iter().map(|&a| sign(a)), config.step_size, &bounds);
    }
    let mut outcome = AttackOutcome::new(net, example, with_data(example, current)?, config.iterations)?;
    outcome.degenerate_steps = guarded;
    Ok(outcome)
}
