use std::ops::Range;

use crate::autodiff::softmax_in_place;
use crate::dataset::LabeledSet;
use crate::error::{Error, Result};
use crate::likelihoods::{Likelihood, LikelihoodSpec};
use crate::metrics;
use crate::models::{DiagGaussian, Mlp, ParamSlice, Posterior, DEFAULT_LA_SAMPLES};
use crate::special::digamma;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaplaceScope {
    Full,
    LastLayer,
}

impl std::str::FromStr for LaplaceScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(LaplaceScope::Full),
            "last-layer" => Ok(LaplaceScope::LastLayer),
            other => Err(Error::config(format!(
                "unknown Laplace scope '{other}' (full|last-layer)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceConfig {
    pub prior_grid: Vec<f64>,
    pub include_ood_in_fisher: bool,
    pub predict_samples: usize,
    pub scope: LaplaceScope,
    /// Seed of the MC draws used to score every grid candidate.
    pub seed: u64,
}

impl Default for LaplaceConfig {
    fn default() -> Self {
        LaplaceConfig {
            prior_grid: log_grid(1e-4, 1e4, 15),
            include_ood_in_fisher: true,
            predict_samples: DEFAULT_LA_SAMPLES,
            scope: LaplaceScope::Full,
            seed: 0,
        }
    }
}

impl LaplaceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.prior_grid.is_empty() {
            return Err(Error::config("prior precision grid is empty"));
        }
        if let Some(bad) = self
            .prior_grid
            .iter()
            .find(|&&l| !(l > 0.0) || !l.is_finite())
        {
            return Err(Error::config(format!(
                "prior precisions must be positive, got {bad}"
            )));
        }
        if self.predict_samples == 0 {
            return Err(Error::config(
                "Laplace prediction needs at least one MC sample",
            ));
        }
        Ok(())
    }

    pub fn slice(&self, model: &Mlp) -> ParamSlice {
        match self.scope {
            LaplaceScope::Full => model.full_slice(),
            LaplaceScope::LastLayer => model.last_layer_slice(),
        }
    }
}

/// `n` points spaced evenly in log scale over `[lo, hi]`, endpoints included.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| match i {
                0 => lo,
                i if i == n - 1 => hi,
                i => lo * (hi / lo).powf(i as f64 / (n - 1) as f64),
            })
            .collect(),
    }
}

/// Result of a Laplace fit: the posterior plus what went into it.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceFit {
    pub posterior: DiagGaussian,
    /// Fisher diagonal over the posterior slice.
    pub fisher: Vec<f64>,
    pub prior_precision: f64,
    /// `(λ, validation Brier)` for every grid candidate.
    pub scores: Vec<(f64, f64)>,
}

impl LaplaceFit {
    pub fn to_posterior(&self) -> Posterior {
        Posterior::DiagGaussian(self.posterior.clone())
    }
}

/// How a row's logits turn into weighted score vectors `(w, ∂ℓ/∂z)`.
#[derive(Debug, Clone, Copy)]
enum RowKind {
    /// `Σ_k p_k (∇ log p_k)²`.
    Expected,
    /// `w · Σ_k (∇ log p_k)²` over label-replicated copies.
    Replicated(f64),
    /// `w · (∇ log Dir(u | γσ))²` with `u` uniform.
    DirichletUniform { weight: f64, gamma: f64 },
}

fn score_vectors(kind: RowKind, logits: &[f64]) -> Vec<(f64, Vec<f64>)> {
    let c = logits.len();
    let mut p = logits.to_vec();
    softmax_in_place(&mut p);
    let one_hot_minus_p = |k: usize| {
        p.iter()
            .enumerate()
            .map(|(j, &pj)| f64::from(j == k) - pj)
            .collect::<Vec<_>>()
    };
    match kind {
        RowKind::Expected => (0..c).map(|k| (p[k], one_hot_minus_p(k))).collect(),
        RowKind::Replicated(w) => (0..c).map(|k| (w, one_hot_minus_p(k))).collect(),
        RowKind::DirichletUniform { weight, gamma } => {
            let log_u = -(c as f64).ln();
            let a: Vec<f64> = p.iter().map(|&pk| log_u - digamma(gamma * pk)).collect();
            let mean: f64 = p.iter().zip(&a).map(|(pk, ak)| pk * ak).sum();
            let g = p
                .iter()
                .zip(&a)
                .map(|(pk, ak)| gamma * pk * (ak - mean))
                .collect();
            vec![(weight, g)]
        }
    }
}

/// Adds one row's Fisher contribution for every layer from `first` on into `out`
/// (indexed from the start of layer `first`).
fn accumulate_row(model: &Mlp, first: usize, x: &[f64], kind: RowKind, out: &mut [f64]) {
    let layers = model.layers();
    let params = model.params();
    let n = layers.len();
    let act_fn = model.activation();

    let mut acts: Vec<Vec<f64>> = vec![x.to_vec()];
    for (idx, l) in layers.iter().enumerate() {
        let w = &params[l.weight_range()];
        let b = &params[l.bias_range()];
        let input = &acts[idx];
        let mut z: Vec<f64> = (0..l.outputs)
            .map(|o| {
                let row = &w[o * l.inputs..(o + 1) * l.inputs];
                row.iter().zip(input).fold(0.0, |s, (wi, ai)| s + wi * ai) + b[o]
            })
            .collect();
        if idx + 1 < n {
            z.iter_mut().for_each(|v| *v = act_fn.apply(*v));
        }
        acts.push(z);
    }

    let mut deltas: Vec<(f64, Vec<f64>)> = score_vectors(kind, &acts[n]);
    let base = layers[first].weight_offset;
    for idx in (first..n).rev() {
        let l = &layers[idx];
        let mut s = vec![0.0; l.outputs];
        for (w, d) in &deltas {
            s.iter_mut().zip(d).for_each(|(si, di)| *si += w * di * di);
        }
        let input = &acts[idx];
        let wo = l.weight_offset - base;
        for (o, &so) in s.iter().enumerate() {
            if so == 0.0 {
                continue;
            }
            let row = &mut out[wo + o * l.inputs..wo + (o + 1) * l.inputs];
            row.iter_mut()
                .zip(input)
                .for_each(|(f, a)| *f += so * a * a);
        }
        let bo = l.bias_offset - base;
        out[bo..bo + l.outputs]
            .iter_mut()
            .zip(&s)
            .for_each(|(f, si)| *f += si);

        if idx > first {
            let w = &params[l.weight_range()];
            let below = &acts[idx];
            for (_, d) in deltas.iter_mut() {
                let mut next = vec![0.0; l.inputs];
                for (o, &dv) in d.iter().enumerate() {
                    if dv == 0.0 {
                        continue;
                    }
                    let row = &w[o * l.inputs..(o + 1) * l.inputs];
                    next.iter_mut().zip(row).for_each(|(nx, wi)| *nx += wi * dv);
                }
                next.iter_mut()
                    .zip(below)
                    .for_each(|(nx, a)| *nx *= act_fn.derivative_from_output(*a));
                *d = next;
            }
        }
    }
}

const LEAF_ROWS: usize = 16;

/// Fixed-tree sum over row ranges: split at the midpoint, sequential leaves.
fn tree_sum(range: Range<usize>, len: usize, leaf: &dyn Fn(Range<usize>, &mut [f64])) -> Vec<f64> {
    if range.len() <= LEAF_ROWS {
        let mut out = vec![0.0; len];
        leaf(range, &mut out);
        return out;
    }
    let mid = range.start + range.len() / 2;
    let mut left = tree_sum(range.start..mid, len, leaf);
    let right = tree_sum(mid..range.end, len, leaf);
    left.iter_mut().zip(&right).for_each(|(a, b)| *a += b);
    left
}

fn set_fisher(model: &Mlp, first: usize, len: usize, set: &LabeledSet, kind: RowKind) -> Vec<f64> {
    let x = set.x();
    tree_sum(0..set.len(), len, &|rows, out| {
        for i in rows {
            accumulate_row(model, first, x.row(i), kind, out);
        }
    })
}

/// Diagonal Fisher of the log-likelihood over `slice`. In-distribution rows use
/// the expected Categorical form; outliers (when given) use the spec's OOD term.
pub fn fisher_diagonal(
    model: &Mlp,
    spec: &LikelihoodSpec,
    d: &LabeledSet,
    d_out: Option<&LabeledSet>,
    scope: LaplaceScope,
) -> Result<Vec<f64>> {
    if d.n_features() != model.n_inputs() && !d.is_empty() {
        return Err(Error::config(format!(
            "data has {} features, network expects {}",
            d.n_features(),
            model.n_inputs()
        )));
    }
    let layers = model.layers();
    let first = match scope {
        LaplaceScope::Full => 0,
        LaplaceScope::LastLayer => layers.len() - 1,
    };
    let len = model.n_params() - layers[first].weight_offset;
    let mut fisher = set_fisher(model, first, len, d, RowKind::Expected);

    if let Some(out) = d_out.filter(|o| spec.uses_ood() && !o.is_empty()) {
        if out.n_features() != model.n_inputs() {
            return Err(Error::config(
                "OOD data does not match the network input width",
            ));
        }
        let c = model.n_outputs();
        let w = spec.ood_weight_value(c, d.len(), out.len());
        let kind = match spec.likelihood {
            Likelihood::NoneClass => RowKind::Expected,
            Likelihood::Oe => RowKind::Replicated(w),
            Likelihood::SoftLabel { gamma } | Likelihood::MixedLabel { gamma } => {
                RowKind::DirichletUniform { weight: w, gamma }
            }
            Likelihood::Categorical => unreachable!("filtered by uses_ood"),
        };
        let f_out = set_fisher(model, first, len, out, kind);
        fisher.iter_mut().zip(&f_out).for_each(|(a, b)| *a += b);
    }
    if let Some(i) = fisher.iter().position(|f| !f.is_finite()) {
        return Err(Error::numerical(format!("Fisher entry {i} is not finite")));
    }
    Ok(fisher)
}

/// Grid point with the lowest validation Brier score of the Laplace predictive;
/// ties go to the larger precision. Returns `(λ*, [(λ, Brier)])`.
pub fn tune_prior_precision(
    model: &Mlp,
    fisher: &[f64],
    slice: ParamSlice,
    grid: &[f64],
    validation: &LabeledSet,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, Vec<(f64, f64)>)> {
    if grid.is_empty() {
        return Err(Error::config("prior precision grid is empty"));
    }
    if fisher.len() != slice.len {
        return Err(Error::config(
            "Fisher diagonal does not match the posterior slice",
        ));
    }
    if grid.len() == 1 && validation.is_empty() {
        return Ok((grid[0], Vec::new()));
    }
    let labels = validation
        .hard_labels()
        .filter(|_| !validation.is_empty())
        .ok_or_else(|| Error::usage("prior tuning needs a labelled, non-empty validation set"))?;
    let mean = model.params()[slice.range()].to_vec();
    let mut scores = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &lambda in grid {
        let variance: Vec<f64> = fisher.iter().map(|f| 1.0 / (f + lambda)).collect();
        let q = DiagGaussian::new(slice, mean.clone(), variance, n_samples)?;
        let probs =
            crate::models::predict(model, &Posterior::DiagGaussian(q), validation.x(), seed)?;
        let score = metrics::brier(&probs, labels)?;
        scores.push((lambda, score));
        best = match best {
            Some((bl, bs)) if bs < score || (bs == score && bl > lambda) => Some((bl, bs)),
            _ => Some((lambda, score)),
        };
    }
    Ok((best.expect("grid is non-empty").0, scores))
}

/// Diagonal Laplace approximation around the MAP point `model`.
pub fn fit_laplace(
    model: &Mlp,
    spec: &LikelihoodSpec,
    d: &LabeledSet,
    d_out: Option<&LabeledSet>,
    cfg: &LaplaceConfig,
    validation: &LabeledSet,
) -> Result<LaplaceFit> {
    cfg.validate()?;
    spec.validate()?;
    let d_out = d_out.filter(|_| cfg.include_ood_in_fisher);
    let fisher = fisher_diagonal(model, spec, d, d_out, cfg.scope)?;
    let slice = cfg.slice(model);
    let (prior_precision, scores) = tune_prior_precision(
        model,
        &fisher,
        slice,
        &cfg.prior_grid,
        validation,
        cfg.predict_samples,
        cfg.seed,
    )?;
    let variance = fisher.iter().map(|f| 1.0 / (f + prior_precision)).collect();
    let posterior = DiagGaussian::new(
        slice,
        model.params()[slice.range()].to_vec(),
        variance,
        cfg.predict_samples,
    )?;
    Ok(LaplaceFit {
        posterior,
        fisher,
        prior_precision,
        scores,
    })
}
