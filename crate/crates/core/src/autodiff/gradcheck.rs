//! Finite-difference verification of analytic gradients.
//!
//! The numeric side only ever calls the loss forward, so it stays
//! independent of the reverse pass it is checking.

use serde::Serialize;
use thiserror::Error;

use super::tape::GradientMap;
use super::tensor::Tensor;

#[derive(Debug, Error)]
pub enum GradCheckError {
    #[error("gradient check requires eps > 0 and tau > 0")]
    BadTolerance,
    #[error("loss evaluation was non-finite ({context})")]
    NonFiniteLoss { context: String },
    #[error("{0}")]
    Loss(String),
}

/// Anything whose scalar loss can be evaluated and differentiated.
///
/// `loss` must be a pure function of the current parameter values;
/// the checker perturbs entries in place and restores them bit-exactly.
pub trait DifferentiableLoss {
    /// Names of all parameters, in a stable order.
    fn parameter_names(&self) -> Vec<String>;
    /// Shape of one parameter.
    fn parameter_shape(&self, name: &str) -> Vec<usize>;
    /// Mutable access to one parameter's value.
    fn parameter_value_mut(&mut self, name: &str) -> &mut Tensor;
    /// Forward-only loss at the current parameters.
    fn loss(&self) -> Result<f64, String>;
    /// Loss and analytic gradients at the current parameters.
    fn loss_and_gradients(&mut self) -> Result<(f64, GradientMap), String>;
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub eps: f64,
    pub tolerance: f64,
    pub max_rel_err: f64,
    pub worst: Option<GradCheckEntry>,
    pub entries: Vec<GradCheckEntry>,
    pub pass: bool,
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Builds a report from paired analytic/numeric values.
pub fn compare_gradients(
    pairs: Vec<(String, usize, f64, f64)>,
    eps: f64,
    tolerance: f64,
) -> GradCheckReport {
    let entries: Vec<GradCheckEntry> = pairs
        .into_iter()
        .map(|(param, index, analytic, numeric)| GradCheckEntry {
            rel_err: rel_err(analytic, numeric),
            param,
            index,
            analytic,
            numeric,
        })
        .collect();
    let worst = entries
        .iter()
        .cloned()
        .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err));
    let max_rel_err = worst.as_ref().map(|e| e.rel_err).unwrap_or(0.0);
    GradCheckReport {
        eps,
        tolerance,
        max_rel_err,
        pass: max_rel_err <= tolerance,
        worst,
        entries,
    }
}

/// Checks every parameter entry of `target` against a central
/// difference `(loss(x+eps) - loss(x-eps)) / (2 eps)`.
pub fn check_gradients(
    target: &mut impl DifferentiableLoss,
    eps: f64,
    tolerance: f64,
) -> Result<GradCheckReport, GradCheckError> {
    if !(eps > 0.0) || !(tolerance > 0.0) {
        return Err(GradCheckError::BadTolerance);
    }
    let (base_loss, analytic) = target
        .loss_and_gradients()
        .map_err(GradCheckError::Loss)?;
    if !base_loss.is_finite() {
        return Err(GradCheckError::NonFiniteLoss {
            context: "base point".into(),
        });
    }

    let mut pairs = Vec::new();
    for name in target.parameter_names() {
        let shape = target.parameter_shape(&name);
        let dense = analytic.dense(&name, &shape);
        for idx in 0..dense.numel() {
            let saved = {
                let value = target.parameter_value_mut(&name);
                let v = value.data()[idx];
                value.data_mut()[idx] = v + eps;
                v
            };
            let up = target.loss().map_err(GradCheckError::Loss)?;
            {
                let value = target.parameter_value_mut(&name);
                value.data_mut()[idx] = saved - eps;
            }
            let down = target.loss().map_err(GradCheckError::Loss)?;
            {
                let value = target.parameter_value_mut(&name);
                value.data_mut()[idx] = saved;
            }
            if !up.is_finite() || !down.is_finite() {
                return Err(GradCheckError::NonFiniteLoss {
                    context: format!("{name}[{idx}]"),
                });
            }
            let numeric = (up - down) / (2.0 * eps);
            pairs.push((name.clone(), idx, dense.data()[idx], numeric));
        }
    }
    Ok(compare_gradients(pairs, eps, tolerance))
}
