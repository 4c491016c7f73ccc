//! Central finite-difference gradient checking in 64-bit precision.

use crate::error::Result;
use crate::tensor::Tensor;

/// ‖a − b‖ / max(‖a‖, ‖b‖), or 0 when both are zero.
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
    if denom == 0.0 {
        0.0
    } else {
        diff / denom
    }
}

/// Central differences of `loss` w.r.t. each entry of `values`.
pub fn numeric_gradient(
    values: &[f64],
    step: f64,
    mut loss: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<Vec<f64>> {
    let mut probe = values.to_vec();
    let mut out = Vec::with_capacity(values.len());
    for i in 0..values.len() {
        probe[i] = values[i] + step;
        let up = loss(&probe)?;
        probe[i] = values[i] - step;
        let down = loss(&probe)?;
        probe[i] = values[i];
        out.push((up - down) / (2.0 * step));
    }
    Ok(out)
}

/// Compares analytic and numeric gradients of a scalar function of several
/// tensor inputs. Returns the relative error for each input.
pub fn check_inputs(
    inputs: &[(Vec<f64>, Vec<usize>)],
    step: f64,
    f: impl Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
) -> Result<Vec<f64>> {
    let params: Vec<Tensor<f64>> = inputs
        .iter()
        .map(|(v, s)| Tensor::param(v.clone(), s))
        .collect::<Result<_>>()?;
    f(&params)?.backward()?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| {
            p.grad()
                .map(|g| g.clone())
                .unwrap_or_else(|| vec![0.0; p.numel()])
        })
        .collect();

    let mut errors = Vec::with_capacity(inputs.len());
    for (idx, (values, _)) in inputs.iter().enumerate() {
        let numeric = numeric_gradient(values, step, |probe| {
            let _guard = crate::tensor::no_grad();
            let ts: Vec<Tensor<f64>> = inputs
                .iter()
                .enumerate()
                .map(|(j, (v, s))| {
                    Tensor::from_vec(if j == idx { probe.to_vec() } else { v.clone() }, s)
                })
                .collect::<Result<_>>()?;
            Ok(f(&ts)?.item())
        })?;
        errors.push(relative_error(&analytic[idx], &numeric));
    }
    Ok(errors)
}
