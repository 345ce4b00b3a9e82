//! Shared fixtures and brute-force oracles for the integration tests.
#![allow(dead_code)]

use bnnood::data::{gen_toy_gaussians, gen_uniform_ood, ToyGaussians};
use bnnood::dataset::LabeledSet;
use bnnood::likelihoods::{JointObjective, Likelihood, LikelihoodSpec};
use bnnood::models::{Activation, Mlp};
use bnnood::{Matrix, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ECE_BINS: usize = 15;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Single-layer network whose logits are `biases` for every input.
pub fn bias_net(n_in: usize, biases: &[f64]) -> Mlp {
    let mut p = vec![0.0; n_in * biases.len()];
    p.extend_from_slice(biases);
    Mlp::from_params(&[n_in, biases.len()], Activation::Relu, p).unwrap()
}

pub fn all_variants(c: usize) -> Vec<Likelihood> {
    let gamma = c as f64;
    vec![
        Likelihood::Categorical,
        Likelihood::NoneClass,
        Likelihood::SoftLabel { gamma },
        Likelihood::MixedLabel { gamma },
        Likelihood::Oe,
    ]
}

/// Small 4-class problem for gradient checks: a two-hidden-layer tanh network
/// with the none-class output when needed, a toy subset and uniform outliers.
pub struct GradCase {
    pub model: Mlp,
    pub spec: LikelihoodSpec,
    pub d: LabeledSet,
    pub d_out: Option<LabeledSet>,
    pub prior_precision: f64,
}

pub fn grad_case(lik: Likelihood, seed: u64) -> GradCase {
    let spec = LikelihoodSpec::new(lik);
    let outputs = if lik == Likelihood::NoneClass { 5 } else { 4 };
    let model = Mlp::init(&[2, 8, 8, outputs], Activation::Tanh, seed).unwrap();
    let toy = ToyGaussians {
        n_per_class: 3,
        ..ToyGaussians::with_seed(seed)
    };
    let d = gen_toy_gaussians(&toy).unwrap();
    let d_out = spec
        .uses_ood()
        .then(|| gen_uniform_ood(-6.0, 6.0, 2, 7, seed ^ 0xa5).unwrap());
    GradCase {
        model,
        spec,
        d,
        d_out,
        prior_precision: 0.3,
    }
}

impl GradCase {
    /// `θ ↦ (objective, gradient)` over the full data.
    pub fn objective(&self) -> impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)> + '_ {
        move |theta: &[f64]| {
            let obj = JointObjective::full_batch(
                &self.spec,
                self.prior_precision,
                &self.d,
                self.d_out.as_ref(),
            );
            let v = obj.evaluate(&self.model, theta, &self.d, self.d_out.as_ref(), true)?;
            Ok((v.total, v.grad.expect("requested")))
        }
    }
}

/// Random predictive rows on a coarse grid so that confidences tie and land on bin edges.
pub fn random_probs(r: &mut ChaCha8Rng, n: usize, c: usize) -> Matrix {
    let mut data = Vec::with_capacity(n * c);
    for _ in 0..n {
        let w: Vec<u32> = (0..c).map(|_| r.random_range(0..=6)).collect();
        let total: u32 = w.iter().sum();
        if total == 0 {
            data.extend(std::iter::repeat_n(1.0 / c as f64, c));
        } else {
            data.extend(w.iter().map(|&k| f64::from(k) / f64::from(total)));
        }
    }
    Matrix::new(n, c, data).unwrap()
}

/// Scores drawn from a few levels so that ties are common.
pub fn random_scores(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let levels = r.random_range(2..=12);
    (0..n)
        .map(|_| f64::from(r.random_range(0..levels)) / f64::from(levels))
        .collect()
}

fn max_and_arg(row: &[f64]) -> (f64, usize) {
    let mut best = (row[0], 0);
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > best.0 {
            best = (v, k);
        }
    }
    best
}

/// Bin by bin: gather every row whose confidence lies in `(b/B, (b+1)/B]`
/// (zero joins bin 0) and accumulate the weighted gap.
pub fn ece_oracle(probs: &Matrix, labels: &[usize], n_bins: usize) -> f64 {
    let m = labels.len() as f64;
    let mut total = 0.0;
    for b in 0..n_bins {
        let lo = b as f64 / n_bins as f64;
        let hi = (b + 1) as f64 / n_bins as f64;
        let (mut count, mut conf_sum, mut correct) = (0usize, 0.0, 0usize);
        for (row, &y) in probs.iter_rows().zip(labels) {
            let (conf, pred) = max_and_arg(row);
            let inside = (conf > lo || (b == 0 && conf >= 0.0)) && conf <= hi;
            if inside {
                count += 1;
                conf_sum += conf;
                correct += usize::from(pred == y);
            }
        }
        if count > 0 {
            let acc = correct as f64 / count as f64;
            let conf = conf_sum / count as f64;
            total += count as f64 / m * (acc - conf).abs();
        }
    }
    total
}

/// Sweep every in-score as a threshold and keep the largest with TPR ≥ 0.95.
pub fn fpr95_oracle(in_scores: &[f64], out_scores: &[f64]) -> f64 {
    let n = in_scores.len();
    let mut best: Option<f64> = None;
    for &t in in_scores {
        let tp = in_scores.iter().filter(|&&s| s >= t).count();
        if tp as f64 / n as f64 >= 0.95 && best.is_none_or(|b| t > b) {
            best = Some(t);
        }
    }
    let t = best.expect("the minimum in-score always qualifies");
    out_scores.iter().filter(|&&s| s >= t).count() as f64 / out_scores.len() as f64
}

/// Every (in, out) pair compared directly.
pub fn auroc_oracle(in_scores: &[f64], out_scores: &[f64]) -> f64 {
    let (mut greater, mut ties) = (0u64, 0u64);
    for &a in in_scores {
        for &b in out_scores {
            if a > b {
                greater += 1;
            } else if a == b {
                ties += 1;
            }
        }
    }
    let total = (in_scores.len() * out_scores.len()) as u64;
    // evaluated from the side at most one half, like the library, so that both agree bit for bit
    let twice = 2 * greater + ties;
    if twice > total {
        let lesser = total - greater - ties;
        1.0 - (2 * lesser + ties) as f64 / (2 * total) as f64
    } else {
        twice as f64 / (2 * total) as f64
    }
}

/// Precision at each positive's own score (all items scoring at least as high),
/// averaged over positives taken from the highest score down.
pub fn auprc_oracle(in_scores: &[f64], out_scores: &[f64]) -> f64 {
    let mut pos = in_scores.to_vec();
    pos.sort_by(|a, b| b.total_cmp(a));
    let mut ap = 0.0;
    for &s in &pos {
        let tp = in_scores.iter().filter(|&&v| v >= s).count();
        let fp = out_scores.iter().filter(|&&v| v >= s).count();
        ap += tp as f64 / (tp + fp) as f64;
    }
    ap / in_scores.len() as f64
}
