use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::trace::{Trace, TraceRow};
use crate::dataset::LabeledSet;
use crate::error::{Error, Result};
use crate::likelihoods::{JointObjective, LikelihoodSpec};
use crate::models::Mlp;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    SgdMomentum { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub lr: f64,
    /// Per-example weight decay; the prior precision is `weight_decay · |D|`.
    pub weight_decay: f64,
    pub cosine_decay: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 128,
            optimizer: Optimizer::adam(),
            lr: 1e-3,
            weight_decay: 5e-4,
            cosine_decay: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight decay must be non-negative"));
        }
        match self.optimizer {
            Optimizer::SgdMomentum { momentum } if !(0.0..1.0).contains(&momentum) => {
                Err(Error::config("momentum must lie in [0, 1)"))
            }
            Optimizer::Adam { beta1, beta2, eps }
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) =>
            {
                Err(Error::config("Adam needs β₁, β₂ in [0, 1) and ε > 0"))
            }
            _ => Ok(()),
        }
    }

    /// Learning rate at step `t` of `total`.
    pub fn lr_at(&self, t: usize, total: usize) -> f64 {
        if self.cosine_decay {
            cosine_lr(self.lr, t, total)
        } else {
            self.lr
        }
    }
}

/// `lr₀ · ½(1 + cos(π t / T))`.
pub fn cosine_lr(lr0: f64, t: usize, total: usize) -> f64 {
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * t as f64 / total.max(1) as f64).cos())
}

/// First-order ascent state for one parameter vector.
#[derive(Debug, Clone)]
pub(crate) struct Ascent {
    optimizer: Optimizer,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Ascent {
    pub(crate) fn new(optimizer: Optimizer, n: usize) -> Self {
        Ascent {
            optimizer,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Moves `theta` along the ascent direction `grad`.
    pub(crate) fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        match self.optimizer {
            Optimizer::SgdMomentum { momentum } => {
                for ((p, m), g) in theta.iter_mut().zip(&mut self.m).zip(grad) {
                    *m = momentum * *m + g;
                    *p += lr * *m;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                for (((p, m), v), g) in theta.iter_mut().zip(&mut self.m).zip(&mut self.v).zip(grad)
                {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p += lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
        }
    }
}

/// Epoch-wise shuffled minibatches of `D`, each paired with an equally sized
/// batch cycling through a shuffled `D_out`.
pub(crate) struct Batcher {
    rng: ChaCha8Rng,
    n_in: usize,
    n_out: usize,
    batch: usize,
    out_order: Vec<usize>,
    out_cursor: usize,
}

impl Batcher {
    pub(crate) fn new(seed: u64, n_in: usize, n_out: usize, batch: usize) -> Self {
        Batcher {
            rng: ChaCha8Rng::seed_from_u64(seed),
            n_in,
            n_out,
            batch,
            out_order: Vec::new(),
            out_cursor: 0,
        }
    }

    pub(crate) fn steps_per_epoch(&self) -> usize {
        self.n_in.div_ceil(self.batch)
    }

    /// Index batches for one epoch: `(in indices, out indices)`.
    pub(crate) fn epoch(&mut self) -> Vec<(Vec<usize>, Vec<usize>)> {
        let mut order: Vec<usize> = (0..self.n_in).collect();
        order.shuffle(&mut self.rng);
        let mut batches = Vec::with_capacity(self.steps_per_epoch());
        for chunk in order.chunks(self.batch) {
            let mut out = Vec::new();
            if self.n_out > 0 {
                while out.len() < chunk.len().min(self.n_out) {
                    if self.out_cursor == self.out_order.len() {
                        self.out_order = (0..self.n_out).collect();
                        self.out_order.shuffle(&mut self.rng);
                        self.out_cursor = 0;
                    }
                    out.push(self.out_order[self.out_cursor]);
                    self.out_cursor += 1;
                }
            }
            batches.push((chunk.to_vec(), out));
        }
        batches
    }
}

pub(crate) fn check_ood(spec: &LikelihoodSpec, d_out: Option<&LabeledSet>) -> Result<()> {
    if spec.uses_ood() && d_out.is_none_or(LabeledSet::is_empty) {
        return Err(Error::config(format!(
            "the '{}' likelihood needs a non-empty OOD training set",
            spec.likelihood.short_name()
        )));
    }
    Ok(())
}

/// Minibatch ascent on the joint objective. The trace records the per-example
/// objective `joint / |D|` of every step's batch.
pub fn train_map(
    model: &Mlp,
    spec: &LikelihoodSpec,
    d: &LabeledSet,
    d_out: Option<&LabeledSet>,
    cfg: &TrainConfig,
) -> Result<(Mlp, Trace)> {
    cfg.validate()?;
    spec.validate()?;
    if d.is_empty() {
        return Err(Error::usage("training set is empty"));
    }
    check_ood(spec, d_out)?;
    let d_out = d_out.filter(|_| spec.uses_ood());
    let n_in = d.len();
    let n_out = d_out.map_or(0, LabeledSet::len);
    let objective = JointObjective::new(spec, cfg.weight_decay * n_in as f64, n_in, n_out);

    let mut theta = model.params().to_vec();
    let mut ascent = Ascent::new(cfg.optimizer, theta.len());
    let mut batcher = Batcher::new(cfg.seed, n_in, n_out, cfg.batch_size);
    let total = cfg.epochs * batcher.steps_per_epoch();
    let inv_n = 1.0 / n_in as f64;
    let mut trace = Trace::default();
    let mut step = 0;
    for _ in 0..cfg.epochs {
        for (idx_in, idx_out) in batcher.epoch() {
            let batch_in = d.subset(&idx_in);
            let batch_out = d_out.map(|o| o.subset(&idx_out));
            let lr = cfg.lr_at(step, total);
            let v = objective.evaluate(model, &theta, &batch_in, batch_out.as_ref(), true)?;
            let mut grad = v.grad.expect("gradient requested");
            if !v.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::numerical(format!(
                    "non-finite objective at step {step} (lr {lr:.3e})"
                )));
            }
            grad.iter_mut().for_each(|g| *g *= inv_n);
            trace.push(TraceRow {
                step,
                lr,
                objective: v.total * inv_n,
                elbo: None,
                kl: None,
            });
            ascent.step(&mut theta, &grad, lr);
            step += 1;
        }
    }
    Ok((model.with_params(theta)?, trace))
}
