//! Logits datasets and the logits-correction network `g`.
//!
//! `g` maps a (possibly adversarial) logits vector to corrected logits. It is
//! trained on pairs `(z, z*)` from the target classifier, taking the clean
//! member of each pair with probability `p`, and evaluated by comparing the
//! argmax of raw versus corrected logits against the true label.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::attacks::{attack_dataset, AttackConfig, AttackKind, AttackOutcome, AttackSummary};
use crate::classifier::{predict_all, Accuracy, EpochLog, LabeledExample};
use crate::error::{Error, Result};
use crate::nn::{softmax_cross_entropy_batch, Mode, Network, OptimizerState};
use crate::rng::{self, purpose};
use crate::tensor::{argmax, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct LogitsRecord {
    pub z: Tensor,
    pub z_adv: Tensor,
    pub label: usize,
    /// The attack changed the prediction.
    pub success: bool,
    /// The attack itself errored; `z_adv` is then a copy of `z`.
    pub attack_failed: bool,
}

impl LogitsRecord {
    pub const FLAG_SUCCESS: u32 = 1;
    pub const FLAG_ATTACK_FAILED: u32 = 2;

    pub fn flags(&self) -> u32 {
        u32::from(self.success) * Self::FLAG_SUCCESS | u32::from(self.attack_failed) * Self::FLAG_ATTACK_FAILED
    }
}

/// Records from one attack. A record's source example id is its position.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsSet {
    pub attack: AttackKind,
    pub records: Vec<LogitsRecord>,
}

impl LogitsSet {
    pub fn classes(&self) -> Option<usize> {
        self.records.first().map(|r| r.z.len())
    }
}

/// One record per example, in order. Attack errors are carried in the
/// record flags instead of aborting the run.
pub fn build_logits_dataset(
    net: &Network,
    config: &AttackConfig,
    data: &[LabeledExample],
    parallelism: usize,
) -> Result<(LogitsSet, AttackSummary)> {
    let run = attack_dataset(net, data, config, parallelism)?;
    let records = logits_records(net, data, &run.outcomes)?;
    Ok((
        LogitsSet {
            attack: config.kind,
            records,
        },
        run.summary,
    ))
}

/// Pairs each example's clean logits with those of its attack outcome. A
/// failed attack contributes `z* = z`.
pub fn logits_records(
    net: &Network,
    data: &[LabeledExample],
    outcomes: &[Result<AttackOutcome>],
) -> Result<Vec<LogitsRecord>> {
    if data.len() != outcomes.len() {
        return Err(Error::InvalidData(format!(
            "{} examples but {} attack outcomes",
            data.len(),
            outcomes.len()
        )));
    }
    let clean = predict_all(net, data)?;
    clean
        .into_par_iter()
        .zip(outcomes)
        .zip(data)
        .map(|((z, outcome), ex)| {
            Ok(match outcome {
                Ok(o) => LogitsRecord {
                    z_adv: net.logits(&o.adversarial)?,
                    z,
                    label: ex.label,
                    success: o.success,
                    attack_failed: false,
                },
                Err(_) => LogitsRecord {
                    z_adv: z.clone(),
                    z,
                    label: ex.label,
                    success: false,
                    attack_failed: true,
                },
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Depth {
    /// C → D → C with ReLU and dropout on the hidden layer.
    TwoLayer,
    /// A single affine map C → C.
    SingleLayer,
}

impl Depth {
    pub fn id(&self) -> &'static str {
        match self {
            Depth::TwoLayer => "two-layer",
            Depth::SingleLayer => "single-layer",
        }
    }
}

impl std::str::FromStr for Depth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-layer" => Ok(Depth::TwoLayer),
            "single-layer" => Ok(Depth::SingleLayer),
            other => Err(Error::Config(format!("unknown defender depth '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DefenderConfig {
    pub hidden: usize,
    pub keep: f32,
    /// Probability of training on the clean logits of a pair.
    pub clean_prob: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub depth: Depth,
}

impl Default for DefenderConfig {
    fn default() -> Self {
        Self {
            hidden: 512,
            keep: 0.5,
            clean_prob: 0.8,
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            seed: 0,
            depth: Depth::TwoLayer,
        }
    }
}

impl DefenderConfig {
    /// The ImageNet-scale settings: D = 10000, p = 0.3, 50 epochs, batch 256, lr 5e-5.
    pub fn paper() -> Self {
        Self {
            hidden: 10_000,
            clean_prob: 0.3,
            epochs: 50,
            batch_size: 256,
            learning_rate: 5e-5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.clean_prob) {
            return Err(Error::Config(format!("clean_prob {} outside [0, 1]", self.clean_prob)));
        }
        if self.hidden == 0 || self.batch_size == 0 {
            return Err(Error::Config("hidden width and batch size must be positive".into()));
        }
        if !(self.keep > 0.0 && self.keep <= 1.0) {
            return Err(Error::Config(format!("keep {} outside (0, 1]", self.keep)));
        }
        Ok(())
    }

    pub fn build(&self, classes: usize) -> Result<Network> {
        let b = Network::builder(vec![classes], self.seed);
        match self.depth {
            Depth::TwoLayer => b.dense(self.hidden).relu().dropout(self.keep).dense(classes),
            Depth::SingleLayer => b.dense(classes),
        }
        .build()
    }

    pub fn echo(&self) -> Vec<(String, String)> {
        vec![
            ("depth".into(), self.depth.id().into()),
            ("hidden".into(), self.hidden.to_string()),
            ("keep".into(), self.keep.to_string()),
            ("clean_prob".into(), self.clean_prob.to_string()),
            ("epochs".into(), self.epochs.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("lr".into(), self.learning_rate.to_string()),
            ("weight_decay".into(), self.weight_decay.to_string()),
            ("seed".into(), self.seed.to_string()),
        ]
    }
}

/// One Bernoulli(`p`) draw per example: `true` selects the clean logits.
pub fn sample_clean_choices(rng: &mut impl Rng, count: usize, p: f64) -> Vec<bool> {
    (0..count).map(|_| rng.gen_bool(p)).collect()
}

fn check_records(records: &[LogitsRecord]) -> Result<usize> {
    let c = records.first().ok_or(Error::EmptyDataset)?.z.len();
    for r in records {
        if r.z.len() != c || r.z_adv.len() != c {
            return Err(Error::Shape {
                expected: vec![c],
                actual: vec![r.z.len().max(r.z_adv.len())],
            });
        }
        if r.label >= c {
            return Err(Error::LabelOutOfRange {
                label: r.label,
                classes: c,
            });
        }
    }
    Ok(c)
}

pub fn train_defender(
    records: &[LogitsRecord],
    config: &DefenderConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(Network, Vec<EpochLog>)> {
    config.validate()?;
    let classes = check_records(records)?;
    let mut g = config.build(classes)?;
    let mut opt = OptimizerState::adam(config.learning_rate, config.weight_decay);
    let mut shuffle_rng = rng::stream(config.seed, purpose::SHUFFLE);
    let mut dropout_rng = rng::stream(config.seed, purpose::DROPOUT);
    let mut choice_rng = rng::stream(config.seed, purpose::SOURCE_CHOICE);
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut logs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let clean = sample_clean_choices(&mut choice_rng, records.len(), config.clean_prob);
        let (mut loss_sum, mut correct) = (0.0, 0);
        for chunk in order.chunks(config.batch_size) {
            let mut data = Vec::with_capacity(chunk.len() * classes);
            let mut labels = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let r = &records[i];
                data.extend_from_slice(if clean[i] { r.z.data() } else { r.z_adv.data() });
                labels.push(r.label);
            }
            let acts = g.forward(
                &Tensor::new(vec![chunk.len(), classes], data)?,
                Mode::Train(&mut dropout_rng),
            )?;
            let (loss, grad) = softmax_cross_entropy_batch(acts.logits(), &labels)?;
            loss_sum += loss * chunk.len() as f64;
            correct += acts
                .logits()
                .data()
                .chunks(classes)
                .zip(&labels)
                .filter(|(z, &y)| argmax(z) == y)
                .count();
            let grads = g.backward(&acts, &grad, true)?;
            opt.step(&mut g.parameters_mut(), &grads.parameters())?;
        }
        let log = EpochLog {
            epoch: epoch + 1,
            mean_loss: loss_sum / records.len() as f64,
            train_accuracy: Accuracy {
                correct,
                total: records.len(),
            },
        };
        on_epoch(&log);
        logs.push(log);
    }
    Ok((g, logs))
}

/// Eval-mode pass of `g`.
pub fn correct_logits(g: &Network, logits: &Tensor) -> Result<Tensor> {
    g.logits(logits)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DefenseEvalReport {
    pub set_id: String,
    pub clean_no_defense: Accuracy,
    pub clean_corrected: Accuracy,
    pub adversarial_no_defense: Accuracy,
    pub adversarial_corrected: Accuracy,
}

pub fn evaluate_defense(g: &Network, records: &[LogitsRecord], set_id: &str) -> Result<DefenseEvalReport> {
    check_records(records)?;
    let hits: Vec<[bool; 4]> = records
        .par_iter()
        .map(|r| {
            Ok([
                r.z.argmax() == r.label,
                correct_logits(g, &r.z)?.argmax() == r.label,
                r.z_adv.argmax() == r.label,
                correct_logits(g, &r.z_adv)?.argmax() == r.label,
            ])
        })
        .collect::<Result<_>>()?;
    let count = |k: usize| Accuracy {
        correct: hits.iter().filter(|h| h[k]).count(),
        total: records.len(),
    };
    Ok(DefenseEvalReport {
        set_id: set_id.to_string(),
        clean_no_defense: count(0),
        clean_corrected: count(1),
        adversarial_no_defense: count(2),
        adversarial_corrected: count(3),
    })
}

/// Adversarial corrected accuracy of every defender on every attack's
/// records. Rows are attacks, columns defenders; a cell is `None` when either
/// side is missing.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferMatrix {
    pub attacks: Vec<AttackKind>,
    pub defenders: Vec<AttackKind>,
    pub cells: Vec<Vec<Option<Accuracy>>>,
}

impl TransferMatrix {
    pub fn get(&self, attack: AttackKind, defender: AttackKind) -> Option<Accuracy> {
        let i = self.attacks.iter().position(|&a| a == attack)?;
        let j = self.defenders.iter().position(|&d| d == defender)?;
        self.cells[i][j]
    }
}

pub fn transfer_matrix(
    defenders: &BTreeMap<AttackKind, Network>,
    record_sets: &BTreeMap<AttackKind, Vec<LogitsRecord>>,
) -> Result<TransferMatrix> {
    let mut classes = None;
    for g in defenders.values() {
        if *classes.get_or_insert(g.classes()) != g.classes() {
            return Err(Error::Config("defenders disagree on the class count".into()));
        }
    }
    let axis: Vec<AttackKind> = defenders
        .keys()
        .chain(record_sets.keys())
        .copied()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut cells = Vec::with_capacity(axis.len());
    for attack in &axis {
        let mut row = Vec::with_capacity(axis.len());
        for defender in &axis {
            row.push(match (record_sets.get(attack), defenders.get(defender)) {
                (Some(records), Some(g)) => Some(evaluate_defense(g, records, attack.id())?.adversarial_corrected),
                _ => None,
            });
        }
        cells.push(row);
    }
    Ok(TransferMatrix {
        attacks: axis.clone(),
        defenders: axis,
        cells,
    })
}
