//! The target classifier: training, logits extraction and accuracy.

use std::fmt;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::{softmax_cross_entropy_batch, Mode, Network, OptimizerState};
use crate::rng::{self, purpose};
use crate::tensor::Tensor;

/// An image with values in `[0, 1]` and its class label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub image: Tensor,
    pub label: usize,
}

impl LabeledExample {
    /// Rejects pixels outside `[0, 1]` (and NaN).
    pub fn new(image: Tensor, label: usize) -> Result<Self> {
        if let Some(v) = image.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidData(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { image, label })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    /// dense(h0) - relu - dense(h1) - relu - dense(C)
    Mlp2h,
    /// conv(h0) - relu - pool - conv(h1) - relu - pool - dense(h2) - relu - dense(C)
    CnnSmall,
}

impl Architecture {
    pub fn id(&self) -> &'static str {
        match self {
            Architecture::Mlp2h => "mlp-2h",
            Architecture::CnnSmall => "cnn-small",
        }
    }

    pub fn default_widths(&self) -> Vec<usize> {
        match self {
            Architecture::Mlp2h => vec![256, 128],
            Architecture::CnnSmall => vec![16, 32, 128],
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp-2h" => Ok(Architecture::Mlp2h),
            "cnn-small" => Ok(Architecture::CnnSmall),
            other => Err(Error::Config(format!("unknown architecture '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierSpec {
    pub architecture: Architecture,
    pub widths: Vec<usize>,
    pub classes: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning rate multiplier applied after every epoch (1 = constant).
    pub lr_decay: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl ClassifierSpec {
    pub fn new(architecture: Architecture) -> Self {
        Self {
            architecture,
            widths: architecture.default_widths(),
            classes: 10,
            epochs: 8,
            batch_size: 32,
            learning_rate: 2e-3,
            lr_decay: 0.7,
            weight_decay: 0.0,
            seed: 0,
        }
    }

    /// Freshly initialised network for images shaped `input_shape`.
    pub fn build(&self, input_shape: &[usize]) -> Result<Network> {
        let w = &self.widths;
        let need = match self.architecture {
            Architecture::Mlp2h => 2,
            Architecture::CnnSmall => 3,
        };
        if w.len() != need || w.iter().any(|&x| x == 0) {
            return Err(Error::Config(format!(
                "{} needs {need} positive widths, got {w:?}",
                self.architecture.id()
            )));
        }
        let builder = Network::builder(input_shape.to_vec(), self.seed);
        let builder = match self.architecture {
            Architecture::Mlp2h => builder.dense(w[0]).relu().dense(w[1]).relu(),
            Architecture::CnnSmall => builder
                .conv2d(w[0], 3)
                .relu()
                .maxpool2x2()
                .conv2d(w[1], 3)
                .relu()
                .maxpool2x2()
                .dense(w[2])
                .relu(),
        };
        builder.dense(self.classes).build()
    }

    /// Key/value echo for checkpoint headers and manifests.
    pub fn echo(&self) -> Vec<(String, String)> {
        vec![
            ("arch".into(), self.architecture.id().into()),
            (
                "widths".into(),
                self.widths.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
            ),
            ("classes".into(), self.classes.to_string()),
            ("epochs".into(), self.epochs.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("lr".into(), self.learning_rate.to_string()),
            ("lr_decay".into(), self.lr_decay.to_string()),
            ("weight_decay".into(), self.weight_decay.to_string()),
            ("seed".into(), self.seed.to_string()),
        ]
    }
}

/// Exact count behind an accuracy figure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
}

impl Accuracy {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

impl fmt::Display for Accuracy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}% ({}/{})", 100.0 * self.fraction(), self.correct, self.total)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: Accuracy,
}

fn check_dataset(data: &[LabeledExample], net_input: Option<&[usize]>) -> Result<()> {
    let first = data.first().ok_or(Error::EmptyDataset)?;
    let shape = net_input.unwrap_or(first.image.shape());
    for ex in data {
        if ex.image.shape() != shape {
            return Err(Error::Shape {
                expected: shape.to_vec(),
                actual: ex.image.shape().to_vec(),
            });
        }
    }
    Ok(())
}

fn stack(examples: &[&LabeledExample]) -> Result<Tensor> {
    let per = examples[0].image.shape().to_vec();
    let mut shape = vec![examples.len()];
    shape.extend_from_slice(&per);
    let mut data = Vec::with_capacity(shape.iter().product());
    for ex in examples {
        data.extend_from_slice(ex.image.data());
    }
    Tensor::new(shape, data)
}

/// Mini-batch Adam training. Deterministic given `spec.seed`; `on_epoch` sees
/// each epoch's log as it completes.
pub fn train_classifier(
    trainset: &[LabeledExample],
    spec: &ClassifierSpec,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(Network, Vec<EpochLog>)> {
    check_dataset(trainset, None)?;
    if spec.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    for ex in trainset {
        if ex.label >= spec.classes {
            return Err(Error::LabelOutOfRange {
                label: ex.label,
                classes: spec.classes,
            });
        }
    }
    let mut net = spec.build(trainset[0].image.shape())?;
    let mut opt = OptimizerState::adam(spec.learning_rate, spec.weight_decay);
    let mut shuffle_rng = rng::stream(spec.seed, purpose::SHUFFLE);
    let mut dropout_rng = rng::stream(spec.seed, purpose::DROPOUT);
    let mut order: Vec<usize> = (0..trainset.len()).collect();
    let mut logs = Vec::with_capacity(spec.epochs);
    for epoch in 0..spec.epochs {
        opt.learning_rate = spec.learning_rate * spec.lr_decay.powi(epoch as i32);
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for chunk in order.chunks(spec.batch_size) {
            let batch: Vec<&LabeledExample> = chunk.iter().map(|&i| &trainset[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|e| e.label).collect();
            let input = stack(&batch)?;
            let acts = net.forward(&input, Mode::Train(&mut dropout_rng))?;
            let (loss, grad) = softmax_cross_entropy_batch(acts.logits(), &labels)?;
            loss_sum += loss * batch.len() as f64;
            correct += acts
                .logits()
                .data()
                .chunks(spec.classes)
                .zip(&labels)
                .filter(|(z, &y)| crate::tensor::argmax(z) == y)
                .count();
            let grads = net.backward(&acts, &grad, true)?;
            opt.step(&mut net.parameters_mut(), &grads.parameters())?;
        }
        let log = EpochLog {
            epoch: epoch + 1,
            mean_loss: loss_sum / trainset.len() as f64,
            train_accuracy: Accuracy {
                correct,
                total: trainset.len(),
            },
        };
        on_epoch(&log);
        logs.push(log);
    }
    Ok((net, logs))
}

/// Raw pre-softmax scores for one image.
pub fn predict_logits(net: &Network, image: &Tensor) -> Result<Tensor> {
    net.logits(image)
}

/// Eval-mode logits for every example, in dataset order.
pub fn predict_all(net: &Network, data: &[LabeledExample]) -> Result<Vec<Tensor>> {
    data.par_iter().map(|ex| net.logits(&ex.image)).collect()
}

pub fn evaluate_accuracy(net: &Network, data: &[LabeledExample]) -> Result<Accuracy> {
    check_dataset(data, Some(net.input_shape()))?;
    let logits = predict_all(net, data)?;
    let correct = logits.iter().zip(data).filter(|(z, ex)| z.argmax() == ex.label).count();
    Ok(Accuracy {
        correct,
        total: data.len(),
    })
}

/// Correctly classified examples, at most `per_class` of each class, taken in
/// dataset order.
#[derive(Debug, Clone)]
pub struct Selection {
    pub examples: Vec<LabeledExample>,
    /// Positions of the chosen examples in the source dataset.
    pub indices: Vec<usize>,
    pub per_class: Vec<usize>,
    /// Classes with no correctly classified example at all.
    pub missing: Vec<usize>,
}

pub fn select_correct_subset(net: &Network, data: &[LabeledExample], per_class: usize) -> Result<Selection> {
    let logits = predict_all(net, data)?;
    let classes = net.classes();
    let mut counts = vec![0usize; classes];
    let mut examples = Vec::new();
    let mut indices = Vec::new();
    for (i, (ex, z)) in data.iter().zip(&logits).enumerate() {
        if ex.label < classes && z.argmax() == ex.label && counts[ex.label] < per_class {
            counts[ex.label] += 1;
            examples.push(ex.clone());
            indices.push(i);
        }
    }
    let missing = (0..classes).filter(|&c| counts[c] == 0).collect();
    Ok(Selection {
        examples,
        indices,
        per_class: counts,
        missing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Layer;

    fn onehot_net(c: usize) -> Network {
        let mut w = vec![0.0; c * c];
        for i in 0..c {
            w[i * c + i] = 1.0;
        }
        Network::new(
            vec![Layer::Dense {
                weight: Tensor::new(vec![c, c], w).unwrap(),
                bias: Tensor::zeros(vec![c]),
            }],
            vec![c],
            0,
        )
        .unwrap()
    }

    fn onehot(c: usize, k: usize) -> Tensor {
        let mut v = vec![0.0; c];
        v[k] = 1.0;
        Tensor::from_vec(v)
    }

    #[test]
    fn pixel_range_enforced() {
        assert!(LabeledExample::new(Tensor::from_vec(vec![0.0, 1.0]), 0).is_ok());
        assert!(LabeledExample::new(Tensor::from_vec(vec![1.5]), 0).is_err());
        assert!(LabeledExample::new(Tensor::from_vec(vec![f32::NAN]), 0).is_err());
    }

    #[test]
    fn onehot_logits_through_identity() {
        let net = onehot_net(5);
        let z = predict_logits(&net, &onehot(5, 3)).unwrap();
        assert_eq!(z.data(), onehot(5, 3).data());
        assert_eq!(z.argmax(), 3);
        let again = predict_logits(&net, &onehot(5, 3)).unwrap();
        assert!(z.bitwise_eq(&again));
    }

    #[test]
    fn accuracy_counts() {
        let net = onehot_net(4);
        let mut data: Vec<LabeledExample> = (0..4).map(|k| LabeledExample::new(onehot(4, k), k).unwrap()).collect();
        assert_eq!(evaluate_accuracy(&net, &data).unwrap().fraction(), 1.0);
        data[2].label = 0;
        let acc = evaluate_accuracy(&net, &data).unwrap();
        assert_eq!((acc.correct, acc.total), (3, 4));
        assert_eq!(acc.fraction(), 0.75);
        for (k, ex) in data.iter_mut().enumerate() {
            ex.label = (k + 1) % 4;
        }
        assert_eq!(evaluate_accuracy(&net, &data).unwrap().fraction(), 0.0);
        assert!(matches!(evaluate_accuracy(&net, &[]), Err(Error::EmptyDataset)));
    }

    #[test]
    fn selection_respects_per_class_and_reports_missing() {
        let net = onehot_net(10);
        let mut data: Vec<LabeledExample> = (0..30)
            .map(|i| LabeledExample::new(onehot(10, i % 10), i % 10).unwrap())
            .collect();
        let sel = select_correct_subset(&net, &data, 1).unwrap();
        assert_eq!(sel.examples.len(), 10);
        assert_eq!(sel.indices, (0..10).collect::<Vec<_>>());
        assert!(sel.missing.is_empty());
        assert_eq!(evaluate_accuracy(&net, &sel.examples).unwrap().fraction(), 1.0);

        // every class-3 example now predicts 4
        for ex in data.iter_mut().filter(|e| e.label == 3) {
            ex.image = onehot(10, 4);
        }
        let sel = select_correct_subset(&net, &data, 2).unwrap();
        assert_eq!(sel.missing, vec![3]);
        assert_eq!(sel.per_class[3], 0);
        assert_eq!(sel.examples.len(), 18);
    }

    #[test]
    fn zero_epochs_returns_initialised_network() {
        let data: Vec<LabeledExample> = (0..20)
            .map(|i| LabeledExample::new(Tensor::from_vec(vec![(i % 2) as f32, 0.5]), i % 2).unwrap())
            .collect();
        let mut spec = ClassifierSpec::new(Architecture::Mlp2h);
        spec.classes = 2;
        spec.widths = vec![4, 4];
        spec.epochs = 0;
        let (net, log) = train_classifier(&data, &spec, |_| {}).unwrap();
        assert!(log.is_empty());
        assert_eq!(net, spec.build(&[2]).unwrap());
    }

    #[test]
    fn empty_and_inconsistent_datasets() {
        let spec = ClassifierSpec::new(Architecture::Mlp2h);
        assert!(matches!(train_classifier(&[], &spec, |_| {}), Err(Error::EmptyDataset)));
        let data = vec![
            LabeledExample::new(Tensor::from_vec(vec![0.0, 1.0]), 0).unwrap(),
            LabeledExample::new(Tensor::from_vec(vec![0.0]), 1).unwrap(),
        ];
        assert!(matches!(
            train_classifier(&data, &spec, |_| {}),
            Err(Error::Shape { .. })
        ));
    }
}
