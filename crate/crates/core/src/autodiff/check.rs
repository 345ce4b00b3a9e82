use crate::error::{Error, Result};

/// Compares an analytic gradient against central differences.
///
/// `f` returns `(value, gradient)` at a parameter vector. The result is
/// `max_i |analytic_i − fd_i| / max(1, |analytic_i|)`.
pub fn grad_check<F>(mut f: F, theta: &[f64], eps: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (value, analytic) = f(theta)?;
    if !value.is_finite() {
        return Err(Error::domain(format!(
            "objective is not finite at the check point: {value}"
        )));
    }
    if analytic.len() != theta.len() {
        return Err(Error::config(format!(
            "gradient has {} entries for {} parameters",
            analytic.len(),
            theta.len()
        )));
    }
    let mut probe = theta.to_vec();
    let mut worst = 0.0f64;
    for i in 0..theta.len() {
        probe[i] = theta[i] + eps;
        let (plus, _) = f(&probe)?;
        probe[i] = theta[i] - eps;
        let (minus, _) = f(&probe)?;
        probe[i] = theta[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::domain(format!(
                "objective is not finite near coordinate {i}"
            )));
        }
        let fd = (plus - minus) / (2.0 * eps);
        let err = (analytic[i] - fd).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let f = |t: &[f64]| {
            Ok((
                t.iter().map(|x| x * x).sum(),
                t.iter().map(|x| 2.0 * x).collect(),
            ))
        };
        let err = grad_check(f, &[1.0, 2.0], 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let f = |t: &[f64]| Ok((t[0] * t[0], vec![t[0]]));
        let err = grad_check(f, &[3.0], 1e-5).unwrap();
        assert!(err > 0.4);
    }

    #[test]
    fn non_finite_objective_is_domain_error() {
        let f = |t: &[f64]| Ok((t[0].ln(), vec![1.0 / t[0]]));
        assert!(matches!(
            grad_check(f, &[-1.0], 1e-5),
            Err(Error::Domain(_))
        ));
    }
}
