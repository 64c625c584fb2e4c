//! SGD and Adam. Weight decay is folded into the gradient (`g + wd·θ`) before
//! any moment update.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Sgd,
    Adam,
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub algorithm: Algorithm,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn adam(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            algorithm: Algorithm::Adam,
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn sgd(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            algorithm: Algorithm::Sgd,
            ..Self::adam(learning_rate, weight_decay)
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every parameter in place. `grads[i]` must match
    /// `params[i]` in shape.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape {
                expected: vec![params.len()],
                actual: vec![grads.len()],
            });
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::Shape {
                    expected: p.shape().to_vec(),
                    actual: g.shape().to_vec(),
                });
            }
        }
        if self.algorithm == Algorithm::Adam && self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second = self.first.clone();
        }
        if self.algorithm == Algorithm::Adam {
            for (i, p) in params.iter().enumerate() {
                if self.first.get(i).map(Vec::len) != Some(p.len()) {
                    return Err(Error::Shape {
                        expected: vec![self.first.get(i).map(Vec::len).unwrap_or(0)],
                        actual: vec![p.len()],
                    });
                }
            }
        }
        self.step += 1;
        let wd = self.weight_decay;
        let lr = self.learning_rate;
        match self.algorithm {
            Algorithm::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pv, &gv) in p.data_mut().iter_mut().zip(g.data()) {
                        let theta = f64::from(*pv);
                        let grad = f64::from(gv) + wd * theta;
                        *pv = (theta - lr * grad) as f32;
                    }
                }
            }
            Algorithm::Adam => {
                let t = self.step as i32;
                let bc1 = 1.0 - self.beta1.powi(t);
                let bc2 = 1.0 - self.beta2.powi(t);
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let m = &mut self.first[i];
                    let v = &mut self.second[i];
                    for (j, (pv, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        let theta = f64::from(*pv);
                        let grad = f64::from(gv) + wd * theta;
                        m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * grad;
                        v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * grad * grad;
                        let m_hat = m[j] / bc1;
                        let v_hat = v[j] / bc2;
                        *pv = (theta - lr * m_hat / (v_hat.sqrt() + self.epsilon)) as f32;
                    }
                }
            }
        }
        Ok(())
    }
}
