use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledPair;
use crate::error::{Error, Result};
use crate::graph::GraphDomain;
use crate::kernel::FeatureMatrix;
use crate::link::EdgePair;
use crate::scalar::Scalar;

use super::objective::minibatch_elbo_with_gradient;
use super::optim::Adam;
use super::quadrature::GaussHermite;
use super::{kl_term, LinkGpModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience_epochs: usize,
    pub elbo_tolerance: f64,
    pub quadrature_points: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 256,
            max_epochs: 250,
            patience_epochs: 20,
            elbo_tolerance: 1e-2,
            quadrature_points: 20,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| {
            Err(Error::InvalidInput(format!(
                "training config: {what} must be positive"
            )))
        };
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate");
        }
        if self.batch_size == 0 {
            return bad("batch_size");
        }
        if !(self.elbo_tolerance.is_finite() && self.elbo_tolerance > 0.0) {
            return bad("elbo_tolerance");
        }
        if self.quadrature_points == 0 {
            return bad("quadrature_points");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport<T> {
    /// Full-data ELBO after each epoch.
    pub elbo_trace: Vec<T>,
    pub stopped_early: bool,
}

impl<T: Scalar> TrainingReport<T> {
    pub fn epochs_run(&self) -> usize {
        self.elbo_trace.len()
    }

    pub fn final_elbo(&self) -> Option<T> {
        self.elbo_trace.last().copied()
    }
}

/// Exact ELBO over all `pairs`, evaluated in chunks of `chunk` pairs.
pub fn full_elbo<T: Scalar>(
    model: &LinkGpModel<T>,
    graph: &GraphDomain,
    features: &FeatureMatrix<T>,
    pairs: &[LabeledPair],
    chunk: usize,
    quadrature: &GaussHermite,
) -> Result<T> {
    let mut ell = T::zero();
    for batch in pairs.chunks(chunk.max(1)) {
        let edges: Vec<EdgePair> = batch.iter().map(|p| p.pair).collect();
        let pred = model.predict(graph, features, &edges)?;
        for (b, p) in batch.iter().enumerate() {
            ell = ell
                + quadrature.bernoulli_expected_loglik(pred.means[b], pred.variances[b], p.label);
        }
    }
    Ok(ell - kl_term(&model.variational))
}

fn non_finite(model: &LinkGpModel<impl Scalar>, quantity: &'static str) -> Error {
    let params = model.parameters();
    let group = model
        .layout()
        .into_iter()
        .find(|&(_, off, len)| params[off..off + len].iter().any(|v| !v.is_finite()))
        .map_or("objective", |(g, _, _)| g.name());
    Error::NonFinite {
        quantity,
        group: group.to_string(),
    }
}

/// Adam over every parameter group with per-epoch shuffled minibatches.
///
/// Stops after `max_epochs`, or once the full-data ELBO changed by less than
/// `elbo_tolerance` over the last `patience_epochs` epochs.
pub fn train<T: Scalar>(
    model: &mut LinkGpModel<T>,
    graph: &GraphDomain,
    features: &FeatureMatrix<T>,
    pairs: &[LabeledPair],
    config: &TrainingConfig,
) -> Result<TrainingReport<T>> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no training pairs".into()));
    }
    let quadrature = GaussHermite::new(config.quadrature_points);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = model.parameters();
    let mut adam = Adam::new(T::of(config.learning_rate), params.len());
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut trace: Vec<T> = Vec::new();
    let mut stopped_early = false;
    let tolerance = T::of(config.elbo_tolerance);

    for _ in 0..config.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<LabeledPair> = chunk.iter().map(|&k| pairs[k]).collect();
            let (elbo, grad) = minibatch_elbo_with_gradient(
                model,
                graph,
                features,
                &batch,
                pairs.len(),
                &quadrature,
            )?;
            if let Some(group) = grad.non_finite_group(model) {
                return Err(Error::NonFinite {
                    quantity: "gradient",
                    group: group.name().to_string(),
                });
            }
            if !elbo.is_finite() {
                return Err(non_finite(model, "ELBO"));
            }
            adam.ascend(&mut params, &grad.flat);
            model.set_parameters(&params);
        }
        let elbo = full_elbo(
            model,
            graph,
            features,
            pairs,
            config.batch_size,
            &quadrature,
        )?;
        if !elbo.is_finite() {
            return Err(non_finite(model, "ELBO"));
        }
        trace.push(elbo);
        let t = trace.len();
        if config.patience_epochs > 0 && t > config.patience_epochs {
            let change = (trace[t - 1] - trace[t - 1 - config.patience_epochs]).abs();
            if change < tolerance {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(TrainingReport {
        elbo_trace: trace,
        stopped_early,
    })
}
