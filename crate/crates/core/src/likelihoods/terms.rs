//! Per-batch log-likelihood terms, both as graph fragments over a logits node
//! and as plain functions of `(model, θ, batch)`.

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::dataset::{LabeledSet, Labels, Origin};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::models::Mlp;
use crate::special::lgamma;

/// `Σᵢ log σ_{yᵢ}(zᵢ)`.
pub fn categorical_term(g: &mut Graph, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
    let ls = g.log_softmax(logits);
    let picked = g.index_select_row(ls, labels)?;
    Ok(g.sum(picked))
}

/// `Σᵢ [ln Γ(γ) − Σₖ ln Γ(γσₖ(zᵢ)) + Σₖ (γσₖ(zᵢ) − 1) ln yᵢₖ]`, the Dirichlet
/// log-density of `y` with mean `σ(z)` and precision `γ`.
pub fn dirichlet_term(g: &mut Graph, logits: NodeId, y: &Matrix, gamma: f64) -> Result<NodeId> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::domain(format!(
            "Dirichlet precision must be positive, got {gamma}"
        )));
    }
    if let Some(bad) = y.data().iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::domain(format!(
            "Dirichlet labels must lie in the simplex interior, found entry {bad}"
        )));
    }
    let shape = g.value(logits).shape().to_vec();
    if shape != [y.rows(), y.cols()] {
        return Err(Error::config(format!(
            "soft labels are {}x{}, logits are {shape:?}",
            y.rows(),
            y.cols()
        )));
    }
    let log_y = g.constant(Tensor::matrix(
        y.rows(),
        y.cols(),
        y.data().iter().map(|v| v.ln()).collect(),
    )?);
    let ls = g.log_softmax(logits);
    let mean = g.exp(ls);
    let alpha = g.scale(mean, gamma);
    let lg = g.lgamma(alpha)?;
    let normalizer = g.sum(lg);
    let alpha_m1 = g.add_scalar(alpha, -1.0);
    let weighted = g.mul(alpha_m1, log_y)?;
    let kernel = g.sum(weighted);
    let diff = g.sub(kernel, normalizer)?;
    Ok(g.add_scalar(diff, y.rows() as f64 * lgamma(gamma)))
}

/// `V = Σᵢ Σₖ log σₖ(zᵢ)`: the Categorical log-likelihood of every row under every label.
pub fn oe_term(g: &mut Graph, logits: NodeId) -> NodeId {
    let ls = g.log_softmax(logits);
    g.sum(ls)
}

/// Row-uniform soft labels `u = (1/c, …, 1/c)`.
pub fn uniform_labels(rows: usize, c: usize) -> Matrix {
    Matrix::new(rows, c, vec![1.0 / c as f64; rows * c]).expect("consistent by construction")
}

/// `(1 − ε)·onehot + ε/c`.
pub fn smoothed_one_hot(labels: &[usize], c: usize, eps: f64) -> Matrix {
    let mut y = Matrix::new(labels.len(), c, vec![eps / c as f64; labels.len() * c])
        .expect("consistent by construction");
    for (i, &k) in labels.iter().enumerate() {
        y.row_mut(i)[k] += 1.0 - eps;
    }
    y
}

/// Evaluates `term(logits)` for `x` under `params`; the gradient w.r.t. `params` when asked.
pub fn evaluate<F>(
    model: &Mlp,
    params: &[f64],
    x: &Matrix,
    with_grad: bool,
    term: F,
) -> Result<(f64, Option<Vec<f64>>)>
where
    F: FnOnce(&mut Graph, NodeId) -> Result<NodeId>,
{
    let (mut g, logits, nodes) = model.graph_for(params, x)?;
    let root = term(&mut g, logits)?;
    let value = g.scalar(root);
    if !with_grad {
        return Ok((value, None));
    }
    g.backward(root)?;
    Ok((value, Some(nodes.gradient(&g))))
}

fn require_hard<'a>(batch: &'a LabeledSet, what: &str) -> Result<&'a [usize]> {
    batch
        .hard_labels()
        .ok_or_else(|| Error::usage(format!("{what} needs hard integer labels")))
}

fn check_classes(model: &Mlp, labels: &[usize]) -> Result<()> {
    if let Some(&bad) = labels.iter().find(|&&y| y >= model.n_outputs()) {
        return Err(Error::config(format!(
            "label {bad} but the network has {} outputs",
            model.n_outputs()
        )));
    }
    Ok(())
}

/// `Σᵢ log σ_{yᵢ}(F(xᵢ; θ))` over a hard-labelled batch.
pub fn categorical_log_lik(model: &Mlp, params: &[f64], batch: &LabeledSet) -> Result<f64> {
    let labels = require_hard(batch, "categorical_log_lik")?;
    check_classes(model, labels)?;
    Ok(evaluate(model, params, batch.x(), false, |g, z| {
        categorical_term(g, z, labels)
    })?
    .0)
}

/// Dirichlet log-likelihood of the soft labels with `α = γ·σ(F(x; θ))`.
pub fn dirichlet_log_lik(
    model: &Mlp,
    params: &[f64],
    batch: &LabeledSet,
    gamma: f64,
) -> Result<f64> {
    let y = match batch.labels() {
        Labels::Soft(y) => y,
        _ => return Err(Error::usage("dirichlet_log_lik needs soft labels")),
    };
    Ok(evaluate(model, params, batch.x(), false, |g, z| {
        dirichlet_term(g, z, y, gamma)
    })?
    .0)
}

/// Categorical over the hard in-distribution set plus `ood_weight` times the
/// Dirichlet term over the soft-labelled OOD set.
pub fn mixed_log_lik(
    model: &Mlp,
    params: &[f64],
    d: &LabeledSet,
    d_out: &LabeledSet,
    gamma: f64,
    ood_weight: f64,
) -> Result<f64> {
    let in_part = categorical_log_lik(model, params, d)?;
    if d_out.is_empty() {
        return Ok(in_part);
    }
    Ok(in_part + ood_weight * dirichlet_log_lik(model, params, d_out, gamma)?)
}

/// Untempered `V = Σᵢ Σₖ log σₖ(F(x_outⁱ; θ))`; zero for an empty set.
pub fn oe_log_lik(model: &Mlp, params: &[f64], d_out: &LabeledSet) -> Result<f64> {
    if d_out.is_empty() {
        return Ok(0.0);
    }
    Ok(evaluate(model, params, d_out.x(), false, |g, z| Ok(oe_term(g, z)))?.0)
}

/// `V / (c·m_out)`, the outlier-exposure loss scale.
pub fn oe_log_lik_tempered(model: &Mlp, params: &[f64], d_out: &LabeledSet) -> Result<f64> {
    if d_out.is_empty() {
        return Ok(0.0);
    }
    let v = oe_log_lik(model, params, d_out)?;
    Ok(v / (model.n_outputs() * d_out.len()) as f64)
}

/// Disjoint union of `d` and `d_out`, the OOD rows labelled with the extra class `c`.
pub fn none_class_transform(d: &LabeledSet, d_out: &LabeledSet, c: usize) -> Result<LabeledSet> {
    let labels = require_hard(d, "none_class_transform")?;
    if !d.is_empty() && !d_out.is_empty() && d.n_features() != d_out.n_features() {
        return Err(Error::config(format!(
            "in-distribution data has {} features, OOD data has {}",
            d.n_features(),
            d_out.n_features()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::config(format!(
            "label {bad} is not below the class count {c}"
        )));
    }
    let x = d.x().vstack(d_out.x())?;
    let mut y = labels.to_vec();
    y.extend(std::iter::repeat_n(c, d_out.len()));
    LabeledSet::hard(x, y, c + 1, Origin::InDistribution)
}

/// Each OOD row once per class, i-major / k-minor.
pub fn replicate_ood_labels(d_out: &LabeledSet, c: usize) -> Result<LabeledSet> {
    if c < 2 {
        return Err(Error::config(format!(
            "label replication needs at least two classes, got {c}"
        )));
    }
    let idx: Vec<usize> = (0..d_out.len())
        .flat_map(|i| std::iter::repeat_n(i, c))
        .collect();
    let x = d_out.x().select_rows(&idx);
    let y = (0..d_out.len()).flat_map(|_| 0..c).collect();
    LabeledSet::hard(x, y, c, Origin::OutOfDistribution)
}
