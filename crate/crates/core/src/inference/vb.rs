use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::kl_diag_gaussian;
use super::map::{check_ood, Ascent, Batcher, TrainConfig};
use super::trace::{Trace, TraceRow};
use crate::dataset::LabeledSet;
use crate::error::{Error, Result};
use crate::likelihoods::{JointObjective, LikelihoodSpec};
use crate::models::{DiagGaussian, Mlp, DEFAULT_VB_SAMPLES};

#[derive(Debug, Clone, PartialEq)]
pub struct VbConfig {
    /// Weight on the KL term.
    pub tau: f64,
    pub prior_precision: f64,
    pub elbo_samples: usize,
    pub predict_samples: usize,
    pub init_log_std: f64,
    /// Keep every log-std at `init_log_std` (only the means are optimized).
    pub freeze_log_std: bool,
}

impl Default for VbConfig {
    fn default() -> Self {
        VbConfig {
            tau: 0.1,
            prior_precision: 5e-4,
            elbo_samples: 5,
            predict_samples: DEFAULT_VB_SAMPLES,
            init_log_std: -3.0,
            freeze_log_std: false,
        }
    }
}

impl VbConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0) || !self.tau.is_finite() {
            return Err(Error::config(format!(
                "τ must be non-negative, got {}",
                self.tau
            )));
        }
        if !(self.prior_precision > 0.0) || !self.prior_precision.is_finite() {
            return Err(Error::config(format!(
                "prior precision must be positive, got {}",
                self.prior_precision
            )));
        }
        if self.elbo_samples == 0 || self.predict_samples == 0 {
            return Err(Error::config("VB needs at least one MC sample"));
        }
        if !self.init_log_std.is_finite() {
            return Err(Error::config("initial log-std must be finite"));
        }
        Ok(())
    }
}

/// Mean-field Gaussian over the last layer, parameterized by mean and log-std.
#[derive(Debug, Clone, PartialEq)]
pub struct LastLayerVb {
    pub head: Mlp,
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl LastLayerVb {
    pub fn variance(&self) -> Vec<f64> {
        self.log_std.iter().map(|r| (2.0 * r).exp()).collect()
    }

    /// `KL(q ‖ N(0, I/λ))`.
    pub fn kl(&self, prior_precision: f64) -> Result<f64> {
        let pv = 1.0 / prior_precision;
        let n = self.mean.len();
        kl_diag_gaussian(&self.mean, &self.variance(), &vec![0.0; n], &vec![pv; n])
    }

    /// MC estimate of `E_q[log p(D̃ | θ)] − τ·KL` over the given standard-normal
    /// draws. `d` and `d_out` hold penultimate features, not raw inputs.
    pub fn elbo(
        &self,
        spec: &LikelihoodSpec,
        cfg: &VbConfig,
        d: &LabeledSet,
        d_out: Option<&LabeledSet>,
        draws: &[Vec<f64>],
    ) -> Result<(f64, f64)> {
        let obj = JointObjective::full_batch(spec, 0.0, d, d_out);
        let mut data = 0.0;
        for eps in draws {
            let theta = self.sample(eps);
            data += obj.evaluate(&self.head, &theta, d, d_out, false)?.total;
        }
        let kl = self.kl(cfg.prior_precision)?;
        Ok((data / draws.len() as f64 - cfg.tau * kl, kl))
    }

    fn sample(&self, eps: &[f64]) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.log_std)
            .zip(eps)
            .map(|((m, r), e)| m + r.exp() * e)
            .collect()
    }
}

fn normal_draws(rng: &mut ChaCha8Rng, count: usize, n: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| (0..n).map(|_| StandardNormal.sample(rng)).collect())
        .collect()
}

/// Penultimate features of a set, with its labels kept.
pub fn feature_set(model: &Mlp, set: &LabeledSet) -> Result<LabeledSet> {
    set.with_x(model.features(set.x())?)
}

/// Last-layer mean-field VB started at the MAP point `model`. Earlier layers stay
/// frozen. The trace's `elbo` column is the full-data ELBO under fixed draws.
pub fn fit_vb(
    model: &Mlp,
    spec: &LikelihoodSpec,
    d: &LabeledSet,
    d_out: Option<&LabeledSet>,
    cfg: &VbConfig,
    train: &TrainConfig,
) -> Result<(DiagGaussian, Trace)> {
    cfg.validate()?;
    train.validate()?;
    spec.validate()?;
    if d.is_empty() {
        return Err(Error::usage("training set is empty"));
    }
    check_ood(spec, d_out)?;
    let d_out = d_out.filter(|_| spec.uses_ood());

    let feats = feature_set(model, d)?;
    let feats_out = d_out.map(|o| feature_set(model, o)).transpose()?;
    let slice = model.last_layer_slice();
    let head = model.head();
    let n = slice.len;
    let mut q = LastLayerVb {
        head,
        mean: model.params()[slice.range()].to_vec(),
        log_std: vec![cfg.init_log_std; n],
    };

    let n_in = feats.len();
    let n_out = feats_out.as_ref().map_or(0, LabeledSet::len);
    let objective = JointObjective::new(spec, 0.0, n_in, n_out);
    let pv = 1.0 / cfg.prior_precision;

    let mut rng = ChaCha8Rng::seed_from_u64(train.seed ^ 0x5645_4c42);
    let eval_draws = normal_draws(&mut rng, cfg.elbo_samples, n);
    let mut batcher = Batcher::new(train.seed, n_in, n_out, train.batch_size);
    let total = train.epochs * batcher.steps_per_epoch();
    let mut opt_mean = Ascent::new(train.optimizer, n);
    let mut opt_rho = Ascent::new(train.optimizer, n);
    let mut trace = Trace::default();
    let mut step = 0;
    for _ in 0..train.epochs {
        for (idx_in, idx_out) in batcher.epoch() {
            let lr = train.lr_at(step, total);
            let (elbo, kl) = q.elbo(spec, cfg, &feats, feats_out.as_ref(), &eval_draws)?;
            if !elbo.is_finite() {
                return Err(Error::numerical(format!(
                    "non-finite ELBO at step {step} (lr {lr:.3e})"
                )));
            }
            trace.push(TraceRow {
                step,
                lr,
                objective: elbo / n_in as f64,
                elbo: Some(elbo),
                kl: Some(kl),
            });

            let batch_in = feats.subset(&idx_in);
            let batch_out = feats_out.as_ref().map(|o| o.subset(&idx_out));
            let std: Vec<f64> = q.log_std.iter().map(|r| r.exp()).collect();
            let mut g_mean = vec![0.0; n];
            let mut g_rho = vec![0.0; n];
            let inv_s = 1.0 / cfg.elbo_samples as f64;
            for _ in 0..cfg.elbo_samples {
                let eps: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
                let theta = q.sample(&eps);
                let v = objective.evaluate(&q.head, &theta, &batch_in, batch_out.as_ref(), true)?;
                let g = v.grad.expect("gradient requested");
                for j in 0..n {
                    g_mean[j] += inv_s * g[j];
                    g_rho[j] += inv_s * g[j] * eps[j] * std[j];
                }
            }
            for j in 0..n {
                g_mean[j] -= cfg.tau * q.mean[j] / pv;
                g_rho[j] -= cfg.tau * (std[j] * std[j] / pv - 1.0);
            }
            // per-example scale keeps step sizes comparable with MAP training
            let inv_n = 1.0 / n_in as f64;
            g_mean
                .iter_mut()
                .chain(g_rho.iter_mut())
                .for_each(|g| *g *= inv_n);
            if g_mean.iter().chain(&g_rho).any(|g| !g.is_finite()) {
                return Err(Error::numerical(format!(
                    "non-finite ELBO gradient at step {step} (lr {lr:.3e})"
                )));
            }
            opt_mean.step(&mut q.mean, &g_mean, lr);
            if !cfg.freeze_log_std {
                opt_rho.step(&mut q.log_std, &g_rho, lr);
            }
            step += 1;
        }
    }
    let posterior = DiagGaussian::new(slice, q.mean.clone(), q.variance(), cfg.predict_samples)?;
    Ok((posterior, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Origin;
    use crate::likelihoods::{categorical_log_lik, Likelihood};
    use crate::matrix::Matrix;
    use crate::models::Activation;

    fn setup() -> (Mlp, LabeledSet) {
        let m = Mlp::init(&[2, 6, 3], Activation::Tanh, 5).unwrap();
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|i| vec![(i as f64).sin(), (i as f64 * 0.7).cos()])
            .collect();
        let d = LabeledSet::hard(
            Matrix::from_rows(&rows).unwrap(),
            (0..30).map(|i| i % 3).collect(),
            3,
            Origin::InDistribution,
        )
        .unwrap();
        (m, d)
    }

    #[test]
    fn degenerate_q_recovers_the_data_log_likelihood() {
        let (m, d) = setup();
        let feats = feature_set(&m, &d).unwrap();
        let slice = m.last_layer_slice();
        let q = LastLayerVb {
            head: m.head(),
            mean: m.params()[slice.range()].to_vec(),
            log_std: vec![-30.0; slice.len],
        };
        let cfg = VbConfig {
            tau: 0.0,
            ..VbConfig::default()
        };
        let spec = LikelihoodSpec::new(Likelihood::Categorical);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws = normal_draws(&mut rng, 5, slice.len);
        let (elbo, _) = q.elbo(&spec, &cfg, &feats, None, &draws).unwrap();
        let ll = categorical_log_lik(&m, m.params(), &d).unwrap();
        assert!((elbo - ll).abs() < 1e-6, "{elbo} vs {ll}");
    }

    #[test]
    fn kl_at_initialization_is_the_closed_form() {
        let (m, _) = setup();
        let slice = m.last_layer_slice();
        let mean = m.params()[slice.range()].to_vec();
        let q = LastLayerVb {
            head: m.head(),
            mean: mean.clone(),
            log_std: vec![-3.0; slice.len],
        };
        let n = slice.len;
        let direct = kl_diag_gaussian(
            &mean,
            &vec![(-6.0f64).exp(); n],
            &vec![0.0; n],
            &vec![1.0 / 5e-4; n],
        )
        .unwrap();
        assert_eq!(q.kl(5e-4).unwrap(), direct);
    }

    #[test]
    fn frozen_log_std_stays_put() {
        let (m, d) = setup();
        let spec = LikelihoodSpec::new(Likelihood::Categorical);
        let cfg = VbConfig {
            freeze_log_std: true,
            ..VbConfig::default()
        };
        let train = TrainConfig {
            epochs: 3,
            batch_size: 10,
            lr: 1e-2,
            ..TrainConfig::default()
        };
        let (q, trace) = fit_vb(&m, &spec, &d, None, &cfg, &train).unwrap();
        assert!(q.variance().iter().all(|&v| v == (-6.0f64).exp()));
        assert_eq!(q.slice(), m.last_layer_slice());
        assert_eq!(q.n_samples(), DEFAULT_VB_SAMPLES);
        assert_eq!(trace.len(), 9);
        assert!(trace.to_csv().starts_with("step,lr,objective,elbo,kl\n"));
    }
}
