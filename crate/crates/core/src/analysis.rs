//! What the defender learned.
//!
//! For a defender `g` and input `z`, `H[i][k] = ∂g(z)_i / ∂z_k`. The support
//! score of class `k` for an image of true class `i` is
//! `S_k = H[i][k] − mean_l H[l][k]`: how much more `z_k` pushes the true class
//! up than it pushes an average class. The classes with the largest `S_k`,
//! counted over a corpus, are the attack's supporting classes.

use rayon::prelude::*;

use crate::attacks::forward_one;
use crate::classifier::Accuracy;
use crate::defender::{correct_logits, LogitsRecord};
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct JacobianMatrix {
    size: usize,
    data: Vec<f64>,
}

impl JacobianMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let size = rows.len();
        if rows.iter().any(|r| r.len() != size) {
            return Err(Error::InvalidData("Jacobian rows must form a square matrix".into()));
        }
        Ok(Self {
            size,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.data[i * self.size + k]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.size..(i + 1) * self.size]
    }

    /// Column means `H_mean[k] = (1/C) Σ_l H[l][k]`.
    pub fn column_means(&self) -> Vec<f64> {
        let c = self.size as f64;
        (0..self.size)
            .map(|k| (0..self.size).map(|l| self.get(l, k)).sum::<f64>() / c)
            .collect()
    }
}

/// Exact eval-mode Jacobian, one reverse pass per output.
pub fn defender_jacobian(g: &Network, z: &Tensor) -> Result<JacobianMatrix> {
    let c = g.classes();
    if z.shape() != g.input_shape() || g.input_shape() != [c] {
        return Err(Error::Shape {
            expected: vec![c],
            actual: z.shape().to_vec(),
        });
    }
    let acts = forward_one(g, z)?;
    let mut rows = Vec::with_capacity(c);
    for i in 0..c {
        let mut seed = vec![0.0f32; c];
        seed[i] = 1.0;
        let grad = g.backward(&acts, &Tensor::new(vec![1, c], seed)?, false)?;
        rows.push(grad.input.data().iter().map(|&v| f64::from(v)).collect());
    }
    JacobianMatrix::from_rows(rows)
}

pub fn support_scores(h: &JacobianMatrix, label: usize) -> Result<Vec<f64>> {
    if label >= h.size() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: h.size(),
        });
    }
    Ok(h.row(label).iter().zip(h.column_means()).map(|(a, m)| a - m).collect())
}

/// Which per-image score ranks the classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ranking {
    /// `S_k`.
    Support,
    /// The raw row `H[i][k]`.
    Jacobian,
    /// `−H_mean[k]`, independent of the label.
    NegativeMean,
}

impl Ranking {
    pub fn id(&self) -> &'static str {
        match self {
            Ranking::Support => "support",
            Ranking::Jacobian => "jacobian",
            Ranking::NegativeMean => "negative-mean",
        }
    }

    pub fn scores(&self, h: &JacobianMatrix, label: usize) -> Result<Vec<f64>> {
        match self {
            Ranking::Support => support_scores(h, label),
            Ranking::Jacobian => {
                support_scores(h, label)?;
                Ok(h.row(label).to_vec())
            }
            Ranking::NegativeMean => Ok(h.column_means().into_iter().map(|m| -m).collect()),
        }
    }
}

impl std::str::FromStr for Ranking {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "support" => Ok(Ranking::Support),
            "jacobian" => Ok(Ranking::Jacobian),
            "negative-mean" => Ok(Ranking::NegativeMean),
            other => Err(Error::Config(format!("unknown ranking '{other}'"))),
        }
    }
}

/// Indices of the `n` largest scores, descending, ties to the lower index.
pub fn top_n(scores: &[f64], n: usize) -> Vec<(usize, f64)> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.into_iter().take(n).map(|k| (k, scores[k])).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSupport {
    pub label: usize,
    pub top: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupportReport {
    pub n: usize,
    pub ranking: Ranking,
    pub per_image: Vec<ImageSupport>,
    /// Number of per-image top-n lists each class appears in.
    pub frequencies: Vec<usize>,
    /// The `n` most frequent classes with their counts.
    pub supporting: Vec<(usize, usize)>,
}

impl SupportReport {
    /// Frequencies normalised to a distribution over all classes.
    pub fn distribution(&self) -> Vec<f64> {
        let total: usize = self.frequencies.iter().sum();
        self.frequencies
            .iter()
            .map(|&f| if total == 0 { 0.0 } else { f as f64 / total as f64 })
            .collect()
    }

    pub fn supporting_classes(&self) -> Vec<usize> {
        self.supporting.iter().map(|&(k, _)| k).collect()
    }
}

/// Ranks classes on each record's adversarial logits and tallies the
/// per-image top-n lists.
pub fn supporting_classes(g: &Network, records: &[LogitsRecord], n: usize, ranking: Ranking) -> Result<SupportReport> {
    let c = g.classes();
    let per_image: Vec<ImageSupport> = records
        .par_iter()
        .map(|r| {
            let h = defender_jacobian(g, &r.z_adv)?;
            Ok(ImageSupport {
                label: r.label,
                top: top_n(&ranking.scores(&h, r.label)?, n),
            })
        })
        .collect::<Result<_>>()?;
    let mut frequencies = vec![0usize; c];
    for img in &per_image {
        for &(k, _) in &img.top {
            frequencies[k] += 1;
        }
    }
    let counts: Vec<f64> = frequencies.iter().map(|&f| f as f64).collect();
    let supporting = top_n(&counts, n)
        .into_iter()
        .map(|(k, _)| (k, frequencies[k]))
        .collect();
    Ok(SupportReport {
        n,
        ranking,
        per_image,
        frequencies,
        supporting,
    })
}

const NORMALIZATION_TOLERANCE: f64 = 1e-6;

fn check_distribution(p: &[f64], name: &str) -> Result<()> {
    if let Some(v) = p.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::NotNormalized(format!("{name} has entry {v}")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(Error::NotNormalized(format!("{name} sums to {sum}")));
    }
    Ok(())
}

/// `Σ_k √(p_k q_k)` for two normalised distributions.
pub fn bhattacharyya(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape {
            expected: vec![p.len()],
            actual: vec![q.len()],
        });
    }
    check_distribution(p, "p")?;
    check_distribution(q, "q")?;
    let bc: f64 = p.iter().zip(q).map(|(a, b)| (a * b).sqrt()).sum();
    Ok(bc.min(1.0))
}

/// Pairwise coefficients between labelled support distributions. Symmetric
/// with an exact unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct BcMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

pub fn transfer_prediction_report(reports: &[(String, &SupportReport)]) -> Result<BcMatrix> {
    let named: Vec<(String, Vec<f64>)> = reports.iter().map(|(l, r)| (l.clone(), r.distribution())).collect();
    bc_matrix(&named)
}

/// Pairwise coefficients between labelled distributions.
pub fn bc_matrix(named: &[(String, Vec<f64>)]) -> Result<BcMatrix> {
    if named.len() < 2 {
        return Err(Error::Config("need at least two distributions".into()));
    }
    let c = named[0].1.len();
    if let Some((_, d)) = named.iter().find(|(_, d)| d.len() != c) {
        return Err(Error::Shape {
            expected: vec![c],
            actual: vec![d.len()],
        });
    }
    let m = named.len();
    let mut values = vec![vec![1.0; m]; m];
    for i in 0..m {
        for j in i + 1..m {
            let bc = bhattacharyya(&named[i].1, &named[j].1)?;
            values[i][j] = bc;
            values[j][i] = bc;
        }
    }
    Ok(BcMatrix {
        labels: named.iter().map(|(l, _)| l.clone()).collect(),
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnockoutReport {
    pub classes: Vec<usize>,
    pub before: Accuracy,
    pub after: Accuracy,
}

/// Corrected accuracy on the adversarial logits before and after lowering
/// the listed classes' entries by `delta`.
pub fn knockout_test(g: &Network, records: &[LogitsRecord], classes: &[usize], delta: f32) -> Result<KnockoutReport> {
    if !(delta >= 0.0) {
        return Err(Error::Config(format!("knock-out delta must be >= 0, got {delta}")));
    }
    let c = g.classes();
    if let Some(&k) = classes.iter().find(|&&k| k >= c) {
        return Err(Error::LabelOutOfRange { label: k, classes: c });
    }
    let hits: Vec<(bool, bool)> = records
        .par_iter()
        .map(|r| {
            let before = correct_logits(g, &r.z_adv)?.argmax() == r.label;
            let mut z = r.z_adv.clone();
            for &k in classes {
                z.data_mut()[k] -= delta;
            }
            let after = correct_logits(g, &z)?.argmax() == r.label;
            Ok((before, after))
        })
        .collect::<Result<_>>()?;
    Ok(KnockoutReport {
        classes: classes.to_vec(),
        before: Accuracy {
            correct: hits.iter().filter(|h| h.0).count(),
            total: records.len(),
        },
        after: Accuracy {
            correct: hits.iter().filter(|h| h.1).count(),
            total: records.len(),
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationStats {
    pub counts: Vec<usize>,
    pub mean: f64,
    /// Sample standard deviation.
    pub sd: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanLogitHistogram {
    /// `bins + 1` shared edges spanning the pooled range.
    pub edges: Vec<f64>,
    pub clean: PopulationStats,
    pub adversarial: PopulationStats,
}

impl MeanLogitHistogram {
    /// `(mean_adv − mean_clean) / √(s²_clean/n_clean + s²_adv/n_adv)`.
    pub fn gap_z(&self) -> f64 {
        let (a, b) = (&self.clean, &self.adversarial);
        let se = (a.sd * a.sd / a.size as f64 + b.sd * b.sd / b.size as f64).sqrt();
        (b.mean - a.mean) / se
    }
}

fn mean_logit(z: &Tensor) -> f64 {
    z.data().iter().map(|&v| f64::from(v)).sum::<f64>() / z.len() as f64
}

/// Histograms of the per-image mean logit for two populations on shared bins.
pub fn logits_mean_histogram(clean: &[Tensor], adversarial: &[Tensor], bins: usize) -> Result<MeanLogitHistogram> {
    if clean.is_empty() || adversarial.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if bins == 0 {
        return Err(Error::Config("bins must be positive".into()));
    }
    let a: Vec<f64> = clean.iter().map(mean_logit).collect();
    let b: Vec<f64> = adversarial.iter().map(mean_logit).collect();
    let lo = a.iter().chain(&b).copied().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(&b).copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 })
        .collect();
    let stats = |xs: &[f64]| {
        let mut counts = vec![0usize; bins];
        for &x in xs {
            let bin = (((x - lo) / width) as usize).min(bins - 1);
            counts[bin] += 1;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        PopulationStats {
            counts,
            mean,
            sd: var.sqrt(),
            size: xs.len(),
        }
    };
    Ok(MeanLogitHistogram {
        edges,
        clean: stats(&a),
        adversarial: stats(&b),
    })
}
