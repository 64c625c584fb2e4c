//! Non-targeted white-box attacks against a classifier.
//!
//! The ℓ∞ family ([`fgsm`], [`pgd`], [`mim`]) takes signed-gradient steps and
//! projects every iterate onto the ε-ball around the clean image and then onto
//! the `[0, 1]` box. [`deepfool`] and [`cw`] search for small ℓ2 perturbations.
//! All attacks are pure functions of `(network, example, config, stream)`.

mod cw;
mod deepfool;
mod linf;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;

pub use cw::cw;
pub use deepfool::deepfool;
pub use linf::{fgsm, mim, mim_traced, pgd, project, LinfBounds};

use crate::classifier::LabeledExample;
use crate::error::{Error, Result};
use crate::nn::{softmax_cross_entropy, Mode, Network};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttackKind {
    Fgsm,
    Pgd,
    Mim,
    DeepFool,
    Cw,
}

impl AttackKind {
    pub const ALL: [AttackKind; 5] = [
        AttackKind::Fgsm,
        AttackKind::Pgd,
        AttackKind::Mim,
        AttackKind::DeepFool,
        AttackKind::Cw,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Pgd => "pgd",
            AttackKind::Mim => "mim",
            AttackKind::DeepFool => "deepfool",
            AttackKind::Cw => "cw",
        }
    }

    pub fn is_linf(&self) -> bool {
        matches!(self, AttackKind::Fgsm | AttackKind::Pgd | AttackKind::Mim)
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.id() == s)
            .ok_or_else(|| Error::Config(format!("unknown attack '{s}'")))
    }
}

/// Named hyperparameter sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// The ImageNet-scale settings: ε = 16/255, T = 10, α = 2/255 (PGD),
    /// α = ε/T with μ = 1 (MIM), K = 10 / 100 iterations (DeepFool),
    /// 25 iterations × 4 search steps, c₀ = 10, κ = 0, lr = 0.01 (C&W).
    PaperImagenet,
    /// MNIST-scale settings: ε = 0.2, α = 0.04, T = 10; C&W lr = 0.1.
    DeskMnist,
}

impl Preset {
    pub fn id(&self) -> &'static str {
        match self {
            Preset::PaperImagenet => "paper-imagenet",
            Preset::DeskMnist => "desk-mnist",
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper-imagenet" => Ok(Preset::PaperImagenet),
            "desk-mnist" => Ok(Preset::DeskMnist),
            other => Err(Error::Config(format!("unknown preset '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// ℓ∞ radius (fgsm / pgd / mim).
    pub epsilon: f32,
    /// Per-iteration step α (pgd / mim).
    pub step_size: f32,
    /// Iteration count T (pgd / mim).
    pub iterations: usize,
    /// Momentum decay μ (mim).
    pub momentum: f32,
    /// Number of most-likely classes K considered by DeepFool (including the
    /// current one).
    pub deepfool_candidates: usize,
    pub deepfool_max_iter: usize,
    /// DeepFool overshoot η.
    pub overshoot: f32,
    pub cw_iterations: usize,
    pub cw_search_steps: usize,
    pub cw_initial_const: f64,
    pub cw_kappa: f64,
    pub cw_learning_rate: f64,
    pub seed: u64,
}

impl AttackConfig {
    pub fn preset(kind: AttackKind, preset: Preset) -> Self {
        let (epsilon, step_size, cw_lr) = match preset {
            Preset::PaperImagenet => (16.0 / 255.0, 2.0 / 255.0, 0.01),
            Preset::DeskMnist => (0.2, 0.04, 0.1),
        };
        let iterations = 10;
        let step_size = match kind {
            AttackKind::Mim => epsilon / iterations as f32,
            AttackKind::Fgsm => epsilon,
            _ => step_size,
        };
        Self {
            kind,
            epsilon,
            step_size,
            iterations,
            momentum: 1.0,
            deepfool_candidates: 10,
            deepfool_max_iter: 100,
            overshoot: 0.02,
            cw_iterations: 25,
            cw_search_steps: 4,
            cw_initial_const: 10.0,
            cw_kappa: 0.0,
            cw_learning_rate: cw_lr,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("{}: {m}", self.kind)));
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be finite and >= 0");
        }
        match self.kind {
            AttackKind::Pgd | AttackKind::Mim => {
                if !(self.step_size > 0.0) {
                    return bad("step size must be > 0");
                }
                if self.iterations == 0 {
                    return bad("iterations must be >= 1");
                }
            }
            AttackKind::DeepFool => {
                if self.deepfool_candidates < 2 || self.deepfool_max_iter == 0 {
                    return bad("needs >= 2 candidates and >= 1 iteration");
                }
                if !(self.overshoot >= 0.0) {
                    return bad("overshoot must be >= 0");
                }
            }
            AttackKind::Cw => {
                if self.cw_iterations == 0 || self.cw_search_steps == 0 {
                    return bad("iterations and search steps must be >= 1");
                }
                if !(self.cw_learning_rate > 0.0 && self.cw_initial_const > 0.0) {
                    return bad("learning rate and initial constant must be > 0");
                }
            }
            AttackKind::Fgsm => {}
        }
        Ok(())
    }

    /// Flat key/value echo, the inverse of [`AttackConfig::set`].
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut v: Vec<(&str, String)> = vec![("attack", self.kind.id().to_string()), ("seed", self.seed.to_string())];
        match self.kind {
            AttackKind::Fgsm => v.push(("epsilon", self.epsilon.to_string())),
            AttackKind::Pgd | AttackKind::Mim => {
                v.push(("epsilon", self.epsilon.to_string()));
                v.push(("step_size", self.step_size.to_string()));
                v.push(("iterations", self.iterations.to_string()));
                if self.kind == AttackKind::Mim {
                    v.push(("momentum", self.momentum.to_string()));
                }
            }
            AttackKind::DeepFool => {
                v.push(("deepfool.candidates", self.deepfool_candidates.to_string()));
                v.push(("deepfool.max_iter", self.deepfool_max_iter.to_string()));
                v.push(("deepfool.overshoot", self.overshoot.to_string()));
            }
            AttackKind::Cw => {
                v.push(("cw.iterations", self.cw_iterations.to_string()));
                v.push(("cw.search_steps", self.cw_search_steps.to_string()));
                v.push(("cw.initial_const", self.cw_initial_const.to_string()));
                v.push(("cw.kappa", self.cw_kappa.to_string()));
                v.push(("cw.lr", self.cw_learning_rate.to_string()));
            }
        }
        v.into_iter().map(|(k, val)| (k.to_string(), val)).collect()
    }

    /// Overrides one hyperparameter by key. Returns `Ok(false)` for keys that
    /// are not attack settings.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value '{value}' for {key}")))
        }
        match key {
            "attack" => self.kind = value.parse()?,
            "epsilon" => self.epsilon = parse(key, value)?,
            "step_size" => self.step_size = parse(key, value)?,
            "iterations" => self.iterations = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "deepfool.candidates" => self.deepfool_candidates = parse(key, value)?,
            "deepfool.max_iter" => self.deepfool_max_iter = parse(key, value)?,
            "deepfool.overshoot" => self.overshoot = parse(key, value)?,
            "cw.iterations" => self.cw_iterations = parse(key, value)?,
            "cw.search_steps" => self.cw_search_steps = parse(key, value)?,
            "cw.initial_const" => self.cw_initial_const = parse(key, value)?,
            "cw.kappa" => self.cw_kappa = parse(key, value)?,
            "cw.lr" => self.cw_learning_rate = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub adversarial: Tensor,
    /// `argmax f(x*) != y`.
    pub success: bool,
    pub linf: f32,
    pub l2: f32,
    pub iterations: usize,
    /// Steps where a zero gradient had to be guarded (MIM normalisation,
    /// DeepFool candidates with a vanishing boundary normal).
    pub degenerate_steps: usize,
}

impl AttackOutcome {
    fn new(net: &Network, example: &LabeledExample, adversarial: Tensor, iterations: usize) -> Result<Self> {
        let success = net.logits(&adversarial)?.argmax() != example.label;
        Ok(Self {
            linf: adversarial.linf_distance(&example.image),
            l2: adversarial.l2_distance(&example.image),
            adversarial,
            success,
            iterations,
            degenerate_steps: 0,
        })
    }
}

/// Eval-mode logits and `∇ₓ J(x, y)` for one example.
pub(crate) fn loss_gradient(net: &Network, image: &Tensor, label: usize) -> Result<(Vec<f32>, Vec<f32>)> {
    let acts = forward_one(net, image)?;
    let logits = acts.logits().data().to_vec();
    let (_, grad) = softmax_cross_entropy(&logits, label)?;
    let g = net.backward(&acts, &Tensor::new(vec![1, logits.len()], grad)?, false)?;
    Ok((logits, g.input.into_data()))
}

pub(crate) fn forward_one(net: &Network, image: &Tensor) -> Result<crate::nn::Activations> {
    let mut shape = vec![1];
    shape.extend_from_slice(image.shape());
    net.forward(&image.clone().reshape(shape)?, Mode::Eval)
}

/// Runs the configured attack on one example. `index` selects the example's
/// private random stream.
pub fn run_attack(
    net: &Network,
    example: &LabeledExample,
    config: &AttackConfig,
    index: usize,
) -> Result<AttackOutcome> {
    if example.image.shape() != net.input_shape() {
        return Err(Error::Shape {
            expected: net.input_shape().to_vec(),
            actual: example.image.shape().to_vec(),
        });
    }
    if example.label >= net.classes() {
        return Err(Error::LabelOutOfRange {
            label: example.label,
            classes: net.classes(),
        });
    }
    match config.kind {
        AttackKind::Fgsm => fgsm(net, example, config),
        AttackKind::Pgd => pgd(net, example, config, &mut rng::example_stream(config.seed, index)),
        AttackKind::Mim => mim(net, example, config),
        AttackKind::DeepFool => deepfool(net, example, config),
        AttackKind::Cw => cw(net, example, config),
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttackSummary {
    pub count: usize,
    pub errors: usize,
    pub successes: usize,
    pub mean_linf: f64,
    pub mean_l2: f64,
    pub mean_iterations: f64,
}

impl AttackSummary {
    /// Fraction of non-failed attack runs that changed the prediction.
    pub fn success_rate(&self) -> f64 {
        let ran = self.count - self.errors;
        if ran == 0 {
            0.0
        } else {
            self.successes as f64 / ran as f64
        }
    }
}

pub struct AttackRun {
    pub outcomes: Vec<Result<AttackOutcome>>,
    pub summary: AttackSummary,
}

/// Attacks every example, in order. Each example draws from its own stream
/// derived from `(config.seed, index)`, so output does not depend on
/// `parallelism` (0 = all cores).
pub fn attack_dataset(
    net: &Network,
    data: &[LabeledExample],
    config: &AttackConfig,
    parallelism: usize,
) -> Result<AttackRun> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let outcomes: Vec<Result<AttackOutcome>> = pool.install(|| {
        data.par_iter()
            .enumerate()
            .map(|(i, ex)| run_attack(net, ex, config, i))
            .collect()
    });
    let summary = summarize(&outcomes);
    Ok(AttackRun { outcomes, summary })
}

pub fn summarize(outcomes: &[Result<AttackOutcome>]) -> AttackSummary {
    let mut s = AttackSummary {
        count: outcomes.len(),
        ..Default::default()
    };
    let (mut linf, mut l2, mut iters) = (0.0, 0.0, 0.0);
    for o in outcomes {
        match o {
            Ok(o) => {
                s.successes += usize::from(o.success);
                linf += f64::from(o.linf);
                l2 += f64::from(o.l2);
                iters += o.iterations as f64;
            }
            Err(_) => s.errors += 1,
        }
    }
    let ran = (s.count - s.errors).max(1) as f64;
    s.mean_linf = linf / ran;
    s.mean_l2 = l2 / ran;
    s.mean_iterations = iters / ran;
    s
}

pub(crate) fn uniform_in(rng: &mut impl Rng, half_width: f32) -> f32 {
    if half_width == 0.0 {
        0.0
    } else {
        rng.gen_range(-half_width..=half_width)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_carry_reference_values() {
        let p = AttackConfig::preset(AttackKind::Pgd, Preset::PaperImagenet);
        assert_eq!((p.epsilon, p.iterations, p.step_size), (16.0 / 255.0, 10, 2.0 / 255.0));
        let m = AttackConfig::preset(AttackKind::Mim, Preset::PaperImagenet);
        assert_eq!(m.momentum, 1.0);
        assert_eq!(m.step_size, m.epsilon / 10.0);
        let d = AttackConfig::preset(AttackKind::DeepFool, Preset::PaperImagenet);
        assert_eq!((d.deepfool_candidates, d.deepfool_max_iter), (10, 100));
        let c = AttackConfig::preset(AttackKind::Cw, Preset::PaperImagenet);
        assert_eq!(
            (
                c.cw_iterations,
                c.cw_search_steps,
                c.cw_initial_const,
                c.cw_kappa,
                c.cw_learning_rate
            ),
            (25, 4, 10.0, 0.0, 0.01)
        );
        let desk = AttackConfig::preset(AttackKind::Pgd, Preset::DeskMnist);
        assert_eq!((desk.epsilon, desk.step_size, desk.iterations), (0.2, 0.04, 10));
    }

    #[test]
    fn pairs_round_trip_through_set() {
        for kind in AttackKind::ALL {
            let mut cfg = AttackConfig::preset(kind, Preset::DeskMnist);
            cfg.seed = 99;
            let mut back = AttackConfig::preset(AttackKind::Fgsm, Preset::PaperImagenet);
            for (k, v) in cfg.to_pairs() {
                assert!(back.set(&k, &v).unwrap(), "{k}");
            }
            assert_eq!(back.to_pairs(), cfg.to_pairs());
        }
        let mut cfg = AttackConfig::preset(AttackKind::Pgd, Preset::DeskMnist);
        assert!(!cfg.set("out", "x").unwrap());
        assert!(cfg.set("epsilon", "abc").is_err());
    }

    #[test]
    fn validation() {
        let mut cfg = AttackConfig::preset(AttackKind::Pgd, Preset::DeskMnist);
        assert!(cfg.validate().is_ok());
        cfg.iterations = 0;
        assert!(cfg.validate().is_err());
        cfg.iterations = 1;
        cfg.epsilon = -0.1;
        assert!(cfg.validate().is_err());
        cfg.epsilon = 0.0;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("deepfool".parse::<AttackKind>().unwrap(), AttackKind::DeepFool);
        assert!("bim".parse::<AttackKind>().is_err());
        assert_eq!("desk-mnist".parse::<Preset>().unwrap(), Preset::DeskMnist);
    }
}
