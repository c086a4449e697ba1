//! Central finite-difference gradient checking.

use crate::tensor::Tensor;

/// Result of comparing analytic and numeric gradients for one parameter group.
#[derive(Clone, Debug)]
pub struct GroupCheck {
    pub name: String,
    pub relative_error: f64,
    pub analytic_norm: f64,
}

/// `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)`, or the absolute difference norm when both
/// gradients are below `1e-10`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let denom = na.max(nn);
    if denom < 1e-10 {
        diff
    } else {
        diff / denom
    }
}

/// Checks every named parameter tensor.
///
/// `loss` evaluates the scalar objective for a full parameter set; `analytic`
/// holds the tape gradients in the same order as `params`.
pub fn check_groups(
    params: &[(String, Tensor)],
    analytic: &[Tensor],
    eps: f64,
    mut loss: impl FnMut(&[Tensor]) -> f64,
) -> Vec<GroupCheck> {
    let mut values: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    let mut out = Vec::with_capacity(params.len());
    for (g, (name, _)) in params.iter().enumerate() {
        let mut numeric = vec![0.0; values[g].len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = values[g].data()[i];
            values[g].data_mut()[i] = orig + eps;
            let plus = loss(&values);
            values[g].data_mut()[i] = orig - eps;
            let minus = loss(&values);
            values[g].data_mut()[i] = orig;
            *slot = (plus - minus) / (2.0 * eps);
        }
        let a = analytic[g].data();
        out.push(GroupCheck {
            name: name.clone(),
            relative_error: relative_error(a, &numeric),
            analytic_norm: a.iter().map(|v| v * v).sum::<f64>().sqrt(),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_checks() {
        let params = vec![("x".to_string(), Tensor::vector(vec![1.0, -2.0, 0.5]))];
        let analytic = vec![Tensor::vector(vec![2.0, -4.0, 1.0])];
        let res = check_groups(&params, &analytic, 1e-5, |p| {
            p[0].data().iter().map(|v| v * v).sum()
        });
        assert!(res[0].relative_error < 1e-9);
    }

    #[test]
    fn wrong_gradient_is_flagged() {
        let params = vec![("x".to_string(), Tensor::vector(vec![1.0]))];
        let analytic = vec![Tensor::vector(vec![3.0])];
        let res = check_groups(&params, &analytic, 1e-5, |p| p[0].data()[0].powi(2));
        assert!(res[0].relative_error > 0.1);
    }
}
