//! MAP training, diagonal Laplace and last-layer mean-field VB.

mod laplace;
mod map;
mod trace;
mod vb;

pub use laplace::{
    fisher_diagonal, fit_laplace, log_grid, tune_prior_precision, LaplaceConfig, LaplaceFit,
    LaplaceScope,
};
pub use map::{cosine_lr, train_map, Optimizer, TrainConfig};
pub use trace::{window_means, Trace, TraceRow};
pub use vb::{feature_set, fit_vb, LastLayerVb, VbConfig};

use crate::error::{Error, Result};

/// `KL(N(q_mean, diag q_var) ‖ N(p_mean, diag p_var))`.
pub fn kl_diag_gaussian(
    q_mean: &[f64],
    q_var: &[f64],
    p_mean: &[f64],
    p_var: &[f64],
) -> Result<f64> {
    let n = q_mean.len();
    if q_var.len() != n || p_mean.len() != n || p_var.len() != n {
        return Err(Error::config("KL operands have different lengths"));
    }
    if let Some(v) = q_var
        .iter()
        .chain(p_var)
        .find(|&&v| !(v > 0.0) || !v.is_finite())
    {
        return Err(Error::domain(format!(
            "variances must be positive and finite, got {v}"
        )));
    }
    let mut total = 0.0;
    for i in 0..n {
        let d = q_mean[i] - p_mean[i];
        let ratio = q_var[i] / p_var[i];
        total += ratio + d * d / p_var[i] - 1.0 - ratio.ln();
    }
    Ok(0.5 * total)
}
