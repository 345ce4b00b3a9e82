use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::mlp::{Mlp, ParamSlice};
use crate::autodiff::softmax_in_place;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Monte Carlo sample counts used when none is configured.
pub const DEFAULT_LA_SAMPLES: usize = 20;
pub const DEFAULT_VB_SAMPLES: usize = 200;

/// Factorized Gaussian over one block of the parameter vector. The other
/// coordinates stay at the model's (MAP) values.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    slice: ParamSlice,
    mean: Vec<f64>,
    variance: Vec<f64>,
    n_samples: usize,
}

impl DiagGaussian {
    pub fn new(
        slice: ParamSlice,
        mean: Vec<f64>,
        variance: Vec<f64>,
        n_samples: usize,
    ) -> Result<Self> {
        if mean.len() != slice.len || variance.len() != slice.len {
            return Err(Error::config(format!(
                "slice covers {} coordinates but mean/variance have {}/{}",
                slice.len,
                mean.len(),
                variance.len()
            )));
        }
        if let Some(v) = variance.iter().find(|&&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::domain(format!(
                "posterior variance must be positive and finite, got {v}"
            )));
        }
        if n_samples == 0 {
            return Err(Error::config("posterior needs at least one MC sample"));
        }
        Ok(DiagGaussian {
            slice,
            mean,
            variance,
            n_samples,
        })
    }

    pub fn slice(&self) -> ParamSlice {
        self.slice
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> &[f64] {
        &self.variance
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn with_samples(mut self, n_samples: usize) -> Result<Self> {
        if n_samples == 0 {
            return Err(Error::config("posterior needs at least one MC sample"));
        }
        self.n_samples = n_samples;
        Ok(self)
    }
}

/// Approximate posterior `q(θ)` attached to a network.
#[derive(Debug, Clone, PartialEq)]
pub enum Posterior {
    MapPoint,
    DiagGaussian(DiagGaussian),
}

/// Row-wise softmax of a logit matrix.
pub fn softmax_rows(mut logits: Matrix) -> Matrix {
    let cols = logits.cols();
    if cols > 0 {
        logits
            .data_mut()
            .chunks_exact_mut(cols)
            .for_each(softmax_in_place);
    }
    logits
}

/// Predictive probabilities: softmax at the MAP, or the MC average of softmax
/// outputs over posterior samples drawn with `seed`.
pub fn predict(model: &Mlp, posterior: &Posterior, x: &Matrix, seed: u64) -> Result<Matrix> {
    match posterior {
        Posterior::MapPoint => Ok(softmax_rows(model.logits(x)?)),
        Posterior::DiagGaussian(q) => {
            let slice = q.slice();
            if slice.offset + slice.len > model.n_params() {
                return Err(Error::config(format!(
                    "posterior slice {slice:?} exceeds the {} model parameters",
                    model.n_params()
                )));
            }
            // nothing before the first sampled layer changes between draws
            let layers = model.layers();
            let first = layers
                .iter()
                .position(|l| l.end() > slice.offset)
                .unwrap_or(0);
            if x.cols() != model.n_inputs() && x.rows() > 0 {
                return Err(Error::config(format!(
                    "input has {} columns, network expects {}",
                    x.cols(),
                    model.n_inputs()
                )));
            }
            let prefix = model.activations_before(model.params(), x, first);

            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut theta = model.params().to_vec();
            let std: Vec<f64> = q.variance().iter().map(|v| v.sqrt()).collect();
            let mut acc = Matrix::zeros(x.rows(), model.n_outputs());
            for _ in 0..q.n_samples() {
                for (j, t) in theta[slice.range()].iter_mut().enumerate() {
                    let eps: f64 = StandardNormal.sample(&mut rng);
                    *t = q.mean()[j] + std[j] * eps;
                }
                let probs = softmax_rows(model.logits_from(&theta, &prefix, first));
                acc.data_mut()
                    .iter_mut()
                    .zip(probs.data())
                    .for_each(|(a, p)| *a += p);
            }
            let inv = 1.0 / q.n_samples() as f64;
            acc.data_mut().iter_mut().for_each(|a| *a *= inv);
            Ok(acc)
        }
    }
}

/// Arithmetic mean of member softmax outputs.
pub fn ensemble_predict(models: &[Mlp], x: &Matrix) -> Result<Matrix> {
    let first = models
        .first()
        .ok_or_else(|| Error::usage("ensemble has no members"))?;
    if models.iter().any(|m| m.widths() != first.widths()) {
        return Err(Error::config("ensemble members have different shapes"));
    }
    let mut acc = Matrix::zeros(x.rows(), first.n_outputs());
    for m in models {
        let p = softmax_rows(m.logits(x)?);
        acc.data_mut()
            .iter_mut()
            .zip(p.data())
            .for_each(|(a, b)| *a += b);
    }
    let inv = 1.0 / models.len() as f64;
    acc.data_mut().iter_mut().for_each(|a| *a *= inv);
    Ok(acc)
}
