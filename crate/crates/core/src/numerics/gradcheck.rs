use crate::error::{RaiseError, Result};
use crate::numerics::{Matrix, Parameter, Parameterized};

/// Central-difference gradient of `loss` with respect to every entry of `p`.
pub fn finite_diff_grad(
    mut loss: impl FnMut(&Parameter) -> f64,
    p: &Parameter,
    eps: f64,
) -> Result<Matrix> {
    let (r, c) = p.shape();
    let mut probe = p.clone();
    let mut grad = Matrix::zeros(r, c);
    for i in 0..r * c {
        let orig = p.value.as_slice()[i];
        probe.value.as_mut_slice()[i] = orig + eps;
        let plus = loss(&probe);
        probe.value.as_mut_slice()[i] = orig - eps;
        let minus = loss(&probe);
        probe.value.as_mut_slice()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(RaiseError::NonFinite(format!(
                "loss while probing `{}` entry {i}",
                p.name
            )));
        }
        grad.as_mut_slice()[i] = (plus - minus) / (2.0 * eps);
    }
    Ok(grad)
}

/// Largest entrywise relative error `|a − b| / max(|a|, |b|, floor)`.
///
/// The floor keeps entries whose true gradient is (near) zero from
/// dominating through round-off in the numerator.
pub fn max_relative_error(analytic: &Matrix, numeric: &Matrix, floor: f64) -> f64 {
    analytic
        .as_slice()
        .iter()
        .zip(numeric.as_slice())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Compares the gradients accumulated in `trained` against central
/// differences of `loss` around `model`, parameter by parameter. Returns the
/// worst relative error and the name of the parameter it came from.
pub fn worst_gradient_error<M: Parameterized + Clone>(
    model: &M,
    trained: &M,
    loss: impl Fn(&M) -> f64,
    eps: f64,
    floor: f64,
) -> Result<(f64, String)> {
    let mut worst = (0.0, String::new());
    for (i, (p, g)) in model.params().into_iter().zip(trained.params()).enumerate() {
        let numeric = finite_diff_grad(
            |probe| {
                let mut m = model.clone();
                m.params_mut()[i].value = probe.value.clone();
                loss(&m)
            },
            p,
            eps,
        )?;
        let err = max_relative_error(&g.grad, &numeric, floor);
        if err > worst.0 || worst.1.is_empty() {
            worst = (err, p.name.clone());
        }
    }
    Ok(worst)
}
