//! Log-likelihoods for training with outlier data, and the joint MAP objective
//! `log p(D | θ) + log p(θ) + L(θ; D_out)` built from them.

mod terms;

pub use terms::{
    categorical_log_lik, categorical_term, dirichlet_log_lik, dirichlet_term, evaluate,
    mixed_log_lik, none_class_transform, oe_log_lik, oe_log_lik_tempered, oe_term,
    replicate_ood_labels, smoothed_one_hot, uniform_labels,
};

use crate::autodiff::{Graph, NodeId};
use crate::dataset::{LabeledSet, Labels};
use crate::error::{Error, Result};
use crate::models::Mlp;

/// Label-smoothing ε applied to one-hot labels under the soft-label likelihood.
pub const DEFAULT_LABEL_SMOOTHING: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Likelihood {
    /// Plain softmax-Categorical; outliers are ignored.
    Categorical,
    /// Outliers labelled with an extra output class.
    NoneClass,
    /// Dirichlet over (smoothed) one-hot labels and uniform outlier labels.
    SoftLabel { gamma: f64 },
    /// Categorical in-distribution, Dirichlet on uniform outlier labels.
    MixedLabel { gamma: f64 },
    /// Categorical in-distribution, Categorical over label-replicated outliers.
    Oe,
}

impl Likelihood {
    pub fn short_name(&self) -> &'static str {
        match self {
            Likelihood::Categorical => "cat",
            Likelihood::NoneClass => "nc",
            Likelihood::SoftLabel { .. } => "sl",
            Likelihood::MixedLabel { .. } => "ml",
            Likelihood::Oe => "oe",
        }
    }

    /// Parses `cat|nc|sl|ml|oe`; Dirichlet variants get `gamma`.
    pub fn parse(name: &str, gamma: f64) -> Result<Self> {
        match name {
            "cat" => Ok(Likelihood::Categorical),
            "nc" => Ok(Likelihood::NoneClass),
            "sl" => Ok(Likelihood::SoftLabel { gamma }),
            "ml" => Ok(Likelihood::MixedLabel { gamma }),
            "oe" => Ok(Likelihood::Oe),
            other => Err(Error::config(format!(
                "unknown likelihood '{other}' (cat|nc|sl|ml|oe)"
            ))),
        }
    }
}

/// Multiplier on each outlier's log-likelihood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OodWeight {
    /// 1 for NC/SL/ML, tempered for OE.
    Default,
    /// `m / (c·m_out)`: the OE loss scale relative to the in-distribution average.
    Tempered,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikelihoodSpec {
    pub likelihood: Likelihood,
    pub ood_weight: OodWeight,
    pub label_smoothing: f64,
}

impl LikelihoodSpec {
    pub fn new(likelihood: Likelihood) -> Self {
        LikelihoodSpec {
            likelihood,
            ood_weight: OodWeight::Default,
            label_smoothing: DEFAULT_LABEL_SMOOTHING,
        }
    }

    pub fn with_ood_weight(mut self, w: OodWeight) -> Self {
        self.ood_weight = w;
        self
    }

    pub fn uses_ood(&self) -> bool {
        !matches!(self.likelihood, Likelihood::Categorical)
    }

    pub fn validate(&self) -> Result<()> {
        if let Likelihood::SoftLabel { gamma } | Likelihood::MixedLabel { gamma } = self.likelihood
        {
            if !(gamma > 0.0) || !gamma.is_finite() {
                return Err(Error::config(format!(
                    "Dirichlet precision must be positive, got {gamma}"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::config("label smoothing must lie in [0, 1)"));
        }
        if let OodWeight::Fixed(w) = self.ood_weight {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::config(format!(
                    "OOD weight must be non-negative, got {w}"
                )));
            }
        }
        Ok(())
    }

    /// Number of real classes for a network with `n_outputs` outputs.
    pub fn n_classes(&self, n_outputs: usize) -> usize {
        match self.likelihood {
            Likelihood::NoneClass => n_outputs - 1,
            _ => n_outputs,
        }
    }

    /// Weight on each outlier term given full-set sizes.
    pub fn ood_weight_value(&self, n_outputs: usize, n_in: usize, n_out: usize) -> f64 {
        let tempered = || n_in.max(1) as f64 / (n_outputs * n_out.max(1)) as f64;
        match (self.ood_weight, self.likelihood) {
            (OodWeight::Fixed(w), _) => w,
            (OodWeight::Tempered, _) | (OodWeight::Default, Likelihood::Oe) => tempered(),
            (OodWeight::Default, _) => 1.0,
        }
    }

    /// In-distribution term for the batch `d` (unscaled).
    pub fn in_term(&self, g: &mut Graph, logits: NodeId, d: &LabeledSet) -> Result<NodeId> {
        let n_outputs = g.value(logits).shape()[1];
        let c = self.n_classes(n_outputs);
        match (&self.likelihood, d.labels()) {
            (Likelihood::SoftLabel { gamma }, Labels::Soft(y)) => {
                dirichlet_term(g, logits, y, *gamma)
            }
            (Likelihood::SoftLabel { gamma }, Labels::Hard(y)) => {
                let smooth = smoothed_one_hot(y, c, self.label_smoothing);
                dirichlet_term(g, logits, &smooth, *gamma)
            }
            (_, Labels::Hard(y)) => {
                if let Some(&bad) = y.iter().find(|&&k| k >= c) {
                    return Err(Error::config(format!(
                        "label {bad} is not below the class count {c}"
                    )));
                }
                categorical_term(g, logits, y)
            }
            _ => Err(Error::usage("in-distribution data needs labels")),
        }
    }

    /// Per-outlier log-likelihood summed over the batch (unscaled, unweighted).
    pub fn ood_term(&self, g: &mut Graph, logits: NodeId) -> Result<NodeId> {
        let shape = g.value(logits).shape().to_vec();
        let (rows, n_outputs) = (shape[0], shape[1]);
        match self.likelihood {
            Likelihood::Categorical => {
                Err(Error::usage("the Categorical likelihood has no OOD term"))
            }
            Likelihood::NoneClass => categorical_term(g, logits, &vec![n_outputs - 1; rows]),
            Likelihood::SoftLabel { gamma } | Likelihood::MixedLabel { gamma } => {
                dirichlet_term(g, logits, &uniform_labels(rows, n_outputs), gamma)
            }
            Likelihood::Oe => Ok(oe_term(g, logits)),
        }
    }
}

/// Breakdown of one objective evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue {
    pub total: f64,
    pub in_dist: f64,
    pub ood: f64,
    pub log_prior: f64,
    pub grad: Option<Vec<f64>>,
}

/// `log p(D|θ) + w·log p(D_out|θ) − (λ/2)‖θ‖²`, with minibatch terms scaled to
/// the full-set sizes `n_in` and `n_out`.
#[derive(Debug, Clone, Copy)]
pub struct JointObjective<'a> {
    pub spec: &'a LikelihoodSpec,
    pub prior_precision: f64,
    pub n_in: usize,
    pub n_out: usize,
}

impl<'a> JointObjective<'a> {
    pub fn new(spec: &'a LikelihoodSpec, prior_precision: f64, n_in: usize, n_out: usize) -> Self {
        JointObjective {
            spec,
            prior_precision,
            n_in,
            n_out,
        }
    }

    /// Sizes taken from the sets themselves (no minibatch scaling).
    pub fn full_batch(
        spec: &'a LikelihoodSpec,
        prior_precision: f64,
        d: &LabeledSet,
        d_out: Option<&LabeledSet>,
    ) -> Self {
        JointObjective::new(
            spec,
            prior_precision,
            d.len(),
            d_out.map_or(0, LabeledSet::len),
        )
    }

    pub fn evaluate(
        &self,
        model: &Mlp,
        params: &[f64],
        d: &LabeledSet,
        d_out: Option<&LabeledSet>,
        with_grad: bool,
    ) -> Result<ObjectiveValue> {
        self.spec.validate()?;
        if matches!(self.spec.likelihood, Likelihood::NoneClass) && model.n_outputs() < 2 {
            return Err(Error::config(
                "the none-class likelihood needs an expanded output layer",
            ));
        }
        let d_out = if self.spec.uses_ood() {
            Some(d_out.ok_or_else(|| {
                Error::config(format!(
                    "the '{}' likelihood needs OOD data",
                    self.spec.likelihood.short_name()
                ))
            })?)
        } else {
            None
        };

        let mut g = Graph::new();
        let nodes = model.param_leaves(&mut g, params)?;
        let mut parts: Vec<NodeId> = Vec::new();
        let mut in_node = None;
        let mut ood_node = None;

        if !d.is_empty() {
            let x = g.constant(d.x().to_tensor());
            let z = model.forward_graph(&mut g, &nodes, x)?;
            let t = self.spec.in_term(&mut g, z, d)?;
            let scaled = g.scale(t, self.n_in as f64 / d.len() as f64);
            in_node = Some(scaled);
            parts.push(scaled);
        }
        if let Some(out) = d_out.filter(|o| !o.is_empty()) {
            let x = g.constant(out.x().to_tensor());
            let z = model.forward_graph(&mut g, &nodes, x)?;
            let t = self.spec.ood_term(&mut g, z)?;
            let w = self
                .spec
                .ood_weight_value(model.n_outputs(), self.n_in, self.n_out);
            let scaled = g.scale(t, w * self.n_out as f64 / out.len() as f64);
            ood_node = Some(scaled);
            parts.push(scaled);
        }

        let log_prior = -0.5 * self.prior_precision * params.iter().map(|p| p * p).sum::<f64>();
        let in_dist = in_node.map_or(0.0, |n| g.scalar(n));
        let ood = ood_node.map_or(0.0, |n| g.scalar(n));
        let total = in_dist + ood + log_prior;

        let grad = if with_grad {
            let mut grad = match parts.as_slice() {
                [] => vec![0.0; params.len()],
                [single] => {
                    g.backward(*single)?;
                    nodes.gradient(&g)
                }
                [a, b] => {
                    let root = g.add(*a, *b)?;
                    g.backward(root)?;
                    nodes.gradient(&g)
                }
                _ => unreachable!("at most two data terms"),
            };
            grad.iter_mut()
                .zip(params)
                .for_each(|(gi, p)| *gi -= self.prior_precision * p);
            Some(grad)
        } else {
            None
        };
        Ok(ObjectiveValue {
            total,
            in_dist,
            ood,
            log_prior,
            grad,
        })
    }
}

/// Full-batch joint objective value.
pub fn joint_objective(
    spec: &LikelihoodSpec,
    model: &Mlp,
    params: &[f64],
    d: &LabeledSet,
    d_out: Option<&LabeledSet>,
    prior_precision: f64,
) -> Result<f64> {
    Ok(JointObjective::full_batch(spec, prior_precision, d, d_out)
        .evaluate(model, params, d, d_out, false)?
        .total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Origin;
    use crate::matrix::Matrix;
    use crate::models::Activation;

    fn data() -> (LabeledSet, LabeledSet) {
        let x = Matrix::from_rows(&[vec![0.5, 1.0], vec![-1.0, 0.3], vec![2.0, -2.0]]).unwrap();
        let d = LabeledSet::hard(x, vec![0, 2, 1], 3, Origin::InDistribution).unwrap();
        let xo = Matrix::from_rows(&[vec![5.0, 5.0], vec![-4.0, 3.0]]).unwrap();
        (d, LabeledSet::unlabeled(xo, Origin::OutOfDistribution))
    }

    #[test]
    fn categorical_variant_without_prior_is_categorical_log_lik() {
        let (d, _) = data();
        let m = Mlp::init(&[2, 6, 3], Activation::Tanh, 0).unwrap();
        let spec = LikelihoodSpec::new(Likelihood::Categorical);
        let v = joint_objective(&spec, &m, m.params(), &d, None, 0.0).unwrap();
        assert_eq!(v, categorical_log_lik(&m, m.params(), &d).unwrap());
    }

    #[test]
    fn zero_parameters_have_zero_log_prior() {
        let (d, _) = data();
        let m = Mlp::init(&[2, 6, 3], Activation::Tanh, 0).unwrap();
        let zeros = vec![0.0; m.n_params()];
        let spec = LikelihoodSpec::new(Likelihood::Categorical);
        let v = JointObjective::full_batch(&spec, 3.0, &d, None)
            .evaluate(&m, &zeros, &d, None, false)
            .unwrap();
        assert_eq!(v.log_prior, 0.0);
    }

    #[test]
    fn components_add_up() {
        let (d, out) = data();
        let m = Mlp::init(&[2, 6, 3], Activation::Tanh, 4).unwrap();
        let lam = 0.3;
        let prior = -0.5 * lam * m.params().iter().map(|p| p * p).sum::<f64>();
        let u = LabeledSet::soft(
            out.x().clone(),
            uniform_labels(2, 3),
            Origin::OutOfDistribution,
        )
        .unwrap();

        let ml = LikelihoodSpec::new(Likelihood::MixedLabel { gamma: 3.0 });
        let v = joint_objective(&ml, &m, m.params(), &d, Some(&out), lam).unwrap();
        let expected = mixed_log_lik(&m, m.params(), &d, &u, 3.0, 1.0).unwrap() + prior;
        assert!((v - expected).abs() < 1e-12);

        let oe = LikelihoodSpec::new(Likelihood::Oe).with_ood_weight(OodWeight::Fixed(1.0));
        let v = joint_objective(&oe, &m, m.params(), &d, Some(&out), lam).unwrap();
        let expected = categorical_log_lik(&m, m.params(), &d).unwrap()
            + oe_log_lik(&m, m.params(), &out).unwrap()
            + prior;
        assert!((v - expected).abs() < 1e-12);

        let oe_t = LikelihoodSpec::new(Likelihood::Oe);
        let v = joint_objective(&oe_t, &m, m.params(), &d, Some(&out), lam).unwrap();
        let expected = categorical_log_lik(&m, m.params(), &d).unwrap()
            + d.len() as f64 * oe_log_lik_tempered(&m, m.params(), &out).unwrap()
            + prior;
        assert!((v - expected).abs() < 1e-12);

        let sl = LikelihoodSpec::new(Likelihood::SoftLabel { gamma: 2.5 });
        let soft_d = LabeledSet::soft(
            d.x().clone(),
            smoothed_one_hot(d.hard_labels().unwrap(), 3, 0.01),
            Origin::InDistribution,
        )
        .unwrap();
        let v = joint_objective(&sl, &m, m.params(), &d, Some(&out), lam).unwrap();
        let expected = dirichlet_log_lik(&m, m.params(), &soft_d, 2.5).unwrap()
            + dirichlet_log_lik(&m, m.params(), &u, 2.5).unwrap()
            + prior;
        assert!((v - expected).abs() < 1e-12);

        let nc_model = m.expand_none_class(1);
        let nc = LikelihoodSpec::new(Likelihood::NoneClass);
        let v = joint_objective(&nc, &nc_model, nc_model.params(), &d, Some(&out), 0.0).unwrap();
        let merged = none_class_transform(&d, &out, 3).unwrap();
        let expected = categorical_log_lik(&nc_model, nc_model.params(), &merged).unwrap();
        assert!((v - expected).abs() < 1e-12);
    }

    #[test]
    fn ood_variants_require_outliers() {
        let (d, _) = data();
        let m = Mlp::init(&[2, 4, 3], Activation::Relu, 0).unwrap();
        for lik in [
            Likelihood::Oe,
            Likelihood::MixedLabel { gamma: 3.0 },
            Likelihood::SoftLabel { gamma: 3.0 },
        ] {
            let spec = LikelihoodSpec::new(lik);
            assert!(matches!(
                joint_objective(&spec, &m, m.params(), &d, None, 0.0),
                Err(Error::Config(_))
            ));
        }
    }

    #[test]
    fn minibatch_scaling() {
        let (d, out) = data();
        let m = Mlp::init(&[2, 4, 3], Activation::Relu, 2).unwrap();
        let spec = LikelihoodSpec::new(Likelihood::MixedLabel { gamma: 3.0 });
        let small_in = d.truncate(1);
        let small_out = out.truncate(1);
        let obj = JointObjective::new(&spec, 0.0, 30, 20);
        let v = obj
            .evaluate(&m, m.params(), &small_in, Some(&small_out), false)
            .unwrap();
        let cat = categorical_log_lik(&m, m.params(), &small_in).unwrap();
        assert!((v.in_dist - 30.0 * cat).abs() < 1e-10);
        let u = LabeledSet::soft(
            small_out.x().clone(),
            uniform_labels(1, 3),
            Origin::OutOfDistribution,
        )
        .unwrap();
        let dir = dirichlet_log_lik(&m, m.params(), &u, 3.0).unwrap();
        assert!((v.ood - 20.0 * dir).abs() < 1e-10);
    }
}
