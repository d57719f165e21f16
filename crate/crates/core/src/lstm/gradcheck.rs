//! Central finite-difference gradient checking.
//!
//! Only [`LstmModel::forward`] is used to build the numerical gradient, so the
//! check is independent of the backpropagation code it validates.

use super::model::LstmModel;
use crate::error::Result;

/// `J = 0.5 * sum((v - target)^2)` for the prediction `v`.
pub fn squared_error(model: &LstmModel, sequence: &[Vec<f64>], target: &[f64]) -> Result<f64> {
    let pred = model.predict(sequence)?;
    Ok(0.5 * pred.iter().zip(target).map(|(v, y)| (v - y).powi(2)).sum::<f64>())
}

/// Numerical gradient of [`squared_error`] in [`LstmModel::to_flat`] order.
pub fn numerical_gradient(model: &LstmModel, sequence: &[Vec<f64>], target: &[f64], eps: f64) -> Result<Vec<f64>> {
    let base = model.to_flat();
    let mut probe = model.clone();
    let mut params = base.clone();
    let mut out = Vec::with_capacity(base.len());
    for k in 0..base.len() {
        params[k] = base[k] + eps;
        probe.set_flat(&params)?;
        let plus = squared_error(&probe, sequence, target)?;
        params[k] = base[k] - eps;
        probe.set_flat(&params)?;
        let minus = squared_error(&probe, sequence, target)?;
        params[k] = base[k];
        out.push((plus - minus) / (2.0 * eps));
    }
    Ok(out)
}

/// Analytic gradient of [`squared_error`] in [`LstmModel::to_flat`] order.
pub fn analytic_gradient(model: &LstmModel, sequence: &[Vec<f64>], target: &[f64]) -> Result<Vec<f64>> {
    let (pred, tape) = model.forward(sequence)?;
    let seed: Vec<f64> = pred.iter().zip(target).map(|(v, y)| v - y).collect();
    Ok(model.backward(&tape, &seed)?.to_flat())
}

/// `|a - n| / max(|a|, |n|, floor)`. The floor keeps entries that are zero in
/// both routes from dividing by zero.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_relative_error: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
}

pub fn check_gradients(model: &LstmModel, sequence: &[Vec<f64>], target: &[f64], eps: f64) -> Result<GradCheckReport> {
    let analytic = analytic_gradient(model, sequence, target)?;
    let numeric = numerical_gradient(model, sequence, target, eps)?;
    let (worst_index, max_relative_error) = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(*a, *n, 1e-7))
        .enumerate()
        .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best });
    Ok(GradCheckReport {
        analytic,
        numeric,
        max_relative_error,
        worst_index,
    })
}
