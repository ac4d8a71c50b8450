use crate::data::LabeledPair;
use crate::error::Result;
use crate::graph::GraphDomain;
use crate::kernel::FeatureMatrix;
use crate::scalar::Scalar;

use super::objective::{minibatch_elbo, minibatch_elbo_with_gradient};
use super::quadrature::GaussHermite;
use super::{LinkGpModel, ParameterGroup};

/// Gradients below this magnitude are compared in absolute terms.
pub const GRADIENT_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheckReport {
    pub max_relative_error: f64,
    /// Worst relative error within each parameter group.
    pub per_group: Vec<(ParameterGroup, f64)>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// `|a - n| / max(|a|, |n|, GRADIENT_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRADIENT_FLOOR)
}

/// Compares the analytic ELBO gradient with central finite differences of
/// width `step` for every scalar parameter.
pub fn gradient_check<T: Scalar>(
    model: &LinkGpModel<T>,
    graph: &GraphDomain,
    features: &FeatureMatrix<T>,
    pairs: &[LabeledPair],
    n_total: usize,
    step: T,
    quadrature_points: usize,
) -> Result<GradientCheckReport> {
    let quadrature = GaussHermite::new(quadrature_points);
    let (_, grad) =
        minibatch_elbo_with_gradient(model, graph, features, pairs, n_total, &quadrature)?;
    let theta = model.parameters();
    let mut probe = model.clone();
    let mut numeric = Vec::with_capacity(theta.len());
    for k in 0..theta.len() {
        let mut shifted = theta.clone();
        shifted[k] = theta[k] + step;
        probe.set_parameters(&shifted);
        let up = minibatch_elbo(&probe, graph, features, pairs, n_total, &quadrature)?;
        shifted[k] = theta[k] - step;
        probe.set_parameters(&shifted);
        let down = minibatch_elbo(&probe, graph, features, pairs, n_total, &quadrature)?;
        numeric.push(((up - down) / (step + step)).as_f64());
    }
    let analytic: Vec<f64> = grad.flat.iter().map(|g| g.as_f64()).collect();
    let per_group: Vec<(ParameterGroup, f64)> = model
        .layout()
        .into_iter()
        .map(|(group, off, len)| {
            let worst = (off..off + len)
                .map(|k| relative_error(analytic[k], numeric[k]))
                .fold(0.0, f64::max);
            (group, worst)
        })
        .collect();
    let max_relative_error = per_group.iter().map(|g| g.1).fold(0.0, f64::max);
    Ok(GradientCheckReport {
        max_relative_error,
        per_group,
        analytic,
        numeric,
    })
}
