use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Numerically stable softmax (max-subtracted), computed in `f64`.
pub fn softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(f64::from(v)));
    let exps: Vec<f64> = logits.iter().map(|&v| (f64::from(v) - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `-log softmax(logits)[label]` and its gradient `softmax - onehot(label)`.
pub fn softmax_cross_entropy(logits: &[f32], label: usize) -> Result<(f64, Vec<f32>)> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(f64::from(v)));
    let shifted: Vec<f64> = logits.iter().map(|&v| f64::from(v) - max).collect();
    let total: f64 = shifted.iter().map(|s| s.exp()).sum();
    let log_z = total.ln();
    let loss = log_z - shifted[label];
    let grad = shifted
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let p = (s - log_z).exp();
            (if k == label { p - 1.0 } else { p }) as f32
        })
        .collect();
    Ok((loss, grad))
}

/// Mean cross-entropy over a `[B, C]` batch, with the gradient of the mean.
pub fn softmax_cross_entropy_batch(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::Shape {
            expected: vec![labels.len(), shape.last().copied().unwrap_or(0)],
            actual: shape.to_vec(),
        });
    }
    let (batch, classes) = (shape[0], shape[1]);
    if batch == 0 {
        return Err(Error::EmptyDataset);
    }
    let scale = 1.0 / batch as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(batch * classes);
    for (row, &label) in logits.data().chunks(classes).zip(labels) {
        let (loss, g) = softmax_cross_entropy(row, label)?;
        total += loss;
        grad.extend(g.iter().map(|&v| (f64::from(v) * scale) as f32));
    }
    Ok((total * scale, Tensor::new(shape.to_vec(), grad)?))
}
