//! Sparse variational inference over inducing edges.
//!
//! The variational distribution is whitened: `u = L_uu v` with
//! `q(v) = N(m, L Lᵀ)`, so the prior over `v` is standard normal.

mod gradcheck;
mod objective;
mod optim;
pub mod quadrature;
mod train;

use serde::{Deserialize, Serialize};

pub use gradcheck::{gradient_check, relative_error, GradientCheckReport, GRADIENT_FLOOR};
pub use objective::{minibatch_elbo, minibatch_elbo_with_gradient, ElboGradient};
pub use optim::Adam;
pub use quadrature::{bernoulli_expected_loglik, GaussHermite};
pub use train::{full_elbo, train, TrainingConfig, TrainingReport};

use crate::error::{Error, Result};
use crate::graph::{ConvolutionConfig, GraphDomain};
use crate::inducing::InducingStructure;
use crate::kernel::{FeatureMatrix, KernelParams};
use crate::linalg::{dot, solve_lower, Matrix};
use crate::link::{batch_blocks, ConvolutionSupport, EdgePair, LinkPrior};
use crate::scalar::Scalar;

/// Whitened `q(v) = N(mean, scale · scaleᵀ)`; the diagonal of the scale
/// factor is stored through an inverse softplus.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState<T> {
    mean: Vec<T>,
    scale_raw: Matrix<T>,
}

impl<T: Scalar> VariationalState<T> {
    /// `m = 0`, `L = I`: the whitened prior.
    pub fn prior(size: usize) -> Self {
        let mut scale_raw = Matrix::zeros(size, size);
        let d = T::one().softplus_inv();
        for i in 0..size {
            scale_raw[(i, i)] = d;
        }
        Self {
            mean: vec![T::zero(); size],
            scale_raw,
        }
    }

    /// From a mean and a lower-triangular factor with positive diagonal.
    pub fn new(mean: Vec<T>, scale: &Matrix<T>) -> Result<Self> {
        let m = mean.len();
        if scale.rows() != m || scale.cols() != m {
            return Err(Error::Dimension {
                context: "variational scale factor",
                expected: m,
                actual: scale.rows(),
            });
        }
        let mut raw = Matrix::zeros(m, m);
        for i in 0..m {
            if !(scale[(i, i)].is_finite() && scale[(i, i)] > T::zero()) {
                return Err(Error::InvalidInput(
                    "variational scale diagonal must be positive".into(),
                ));
            }
            for j in 0..i {
                raw[(i, j)] = scale[(i, j)];
            }
            raw[(i, i)] = scale[(i, i)].softplus_inv();
        }
        Ok(Self {
            mean,
            scale_raw: raw,
        })
    }

    /// From the unconstrained representation, lower triangle packed row by row.
    pub fn from_unconstrained(mean: Vec<T>, packed_scale: &[T]) -> Result<Self> {
        let m = mean.len();
        if packed_scale.len() != m * (m + 1) / 2 {
            return Err(Error::Dimension {
                context: "packed variational scale",
                expected: m * (m + 1) / 2,
                actual: packed_scale.len(),
            });
        }
        let mut raw = Matrix::zeros(m, m);
        let mut it = packed_scale.iter();
        for i in 0..m {
            for j in 0..=i {
                raw[(i, j)] = *it.next().unwrap();
            }
        }
        Ok(Self {
            mean,
            scale_raw: raw,
        })
    }

    pub fn size(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    pub fn mean_mut(&mut self) -> &mut [T] {
        &mut self.mean
    }

    /// Lower-triangular factor with the softplus applied to its diagonal.
    pub fn scale(&self) -> Matrix<T> {
        let m = self.size();
        Matrix::from_fn(m, m, |i, j| match j.cmp(&i) {
            std::cmp::Ordering::Less => self.scale_raw[(i, j)],
            std::cmp::Ordering::Equal => self.scale_raw[(i, i)].softplus(),
            std::cmp::Ordering::Greater => T::zero(),
        })
    }

    /// Unconstrained lower triangle, packed row by row.
    pub fn packed_unconstrained_scale(&self) -> Vec<T> {
        let m = self.size();
        let mut out = Vec::with_capacity(m * (m + 1) / 2);
        for i in 0..m {
            out.extend_from_slice(&self.scale_raw.row(i)[..=i]);
        }
        out
    }

    pub(crate) fn set_packed_unconstrained_scale(&mut self, packed: &[T]) {
        let mut it = packed.iter();
        for i in 0..self.size() {
            for j in 0..=i {
                self.scale_raw[(i, j)] = *it.next().unwrap();
            }
        }
    }

    pub(crate) fn scale_raw(&self) -> &Matrix<T> {
        &self.scale_raw
    }
}

/// `KL(N(m, LLᵀ) ‖ N(0, I))`.
pub fn kl_term<T: Scalar>(state: &VariationalState<T>) -> T {
    let l = state.scale();
    let m = state.size();
    let mean_sq = dot(state.mean(), state.mean());
    let frob = l.frobenius_dot(&l);
    let log_det: T = (0..m).map(|i| l[(i, i)].ln()).sum();
    T::of(0.5) * (mean_sq + frob - T::of_usize(m) - T::of(2.0) * log_det)
}

/// Trainable parameter groups, in packing order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParameterGroup {
    Variance,
    Lengthscales,
    ConvolutionWeights,
    InducingFeatures,
    VariationalMean,
    VariationalScale,
}

impl ParameterGroup {
    pub const ALL: [ParameterGroup; 6] = [
        ParameterGroup::Variance,
        ParameterGroup::Lengthscales,
        ParameterGroup::ConvolutionWeights,
        ParameterGroup::InducingFeatures,
        ParameterGroup::VariationalMean,
        ParameterGroup::VariationalScale,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParameterGroup::Variance => "kernel variance",
            ParameterGroup::Lengthscales => "kernel lengthscales",
            ParameterGroup::ConvolutionWeights => "convolution weights",
            ParameterGroup::InducingFeatures => "inducing features",
            ParameterGroup::VariationalMean => "variational mean",
            ParameterGroup::VariationalScale => "variational scale",
        }
    }
}

/// Full model state: prior hyperparameters, inducing structure and `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkGpModel<T> {
    pub convolution: ConvolutionConfig<T>,
    pub kernel: KernelParams<T>,
    pub inducing: InducingStructure<T>,
    pub variational: VariationalState<T>,
}

impl<T: Scalar> LinkGpModel<T> {
    /// Model with the variational distribution at the whitened prior.
    pub fn new(
        convolution: ConvolutionConfig<T>,
        kernel: KernelParams<T>,
        inducing: InducingStructure<T>,
    ) -> Result<Self> {
        if inducing.features().dim() != kernel.dim() {
            return Err(Error::Dimension {
                context: "inducing features vs kernel lengthscales",
                expected: kernel.dim(),
                actual: inducing.features().dim(),
            });
        }
        let variational = VariationalState::prior(inducing.edge_count());
        Ok(Self {
            convolution,
            kernel,
            inducing,
            variational,
        })
    }

    pub fn prior<'a>(
        &'a self,
        graph: &'a GraphDomain,
        features: &'a FeatureMatrix<T>,
    ) -> LinkPrior<'a, T> {
        LinkPrior {
            graph,
            features,
            convolution: &self.convolution,
            kernel: &self.kernel,
        }
    }

    /// `(group, offset, length)` for every group in the flat parameter vector.
    pub fn layout(&self) -> Vec<(ParameterGroup, usize, usize)> {
        let m = self.variational.size();
        let sizes = [
            1,
            self.kernel.dim(),
            self.convolution.depth(),
            self.inducing.features().rows() * self.inducing.features().dim(),
            m,
            m * (m + 1) / 2,
        ];
        let mut offset = 0;
        ParameterGroup::ALL
            .iter()
            .zip(sizes)
            .map(|(&g, len)| {
                let entry = (g, offset, len);
                offset += len;
                entry
            })
            .collect()
    }

    /// All unconstrained parameters in [`ParameterGroup::ALL`] order.
    pub fn parameters(&self) -> Vec<T> {
        let mut p = vec![self.kernel.log_variance()];
        p.extend_from_slice(self.kernel.log_lengthscales());
        p.extend_from_slice(self.convolution.logits());
        p.extend_from_slice(self.inducing.features().matrix().as_slice());
        p.extend_from_slice(self.variational.mean());
        p.extend(self.variational.packed_unconstrained_scale());
        p
    }

    pub fn set_parameters(&mut self, flat: &[T]) {
        let layout = self.layout();
        let total: usize = layout.iter().map(|l| l.2).sum();
        assert_eq!(flat.len(), total, "parameter vector length");
        for (group, off, len) in layout {
            let s = &flat[off..off + len];
            match group {
                ParameterGroup::Variance => *self.kernel.log_variance_mut() = s[0],
                ParameterGroup::Lengthscales => {
                    self.kernel.log_lengthscales_mut().copy_from_slice(s)
                }
                ParameterGroup::ConvolutionWeights => {
                    self.convolution.logits_mut().copy_from_slice(s)
                }
                ParameterGroup::InducingFeatures => self
                    .inducing
                    .features_mut()
                    .matrix_mut()
                    .as_mut_slice()
                    .copy_from_slice(s),
                ParameterGroup::VariationalMean => self.variational.mean_mut().copy_from_slice(s),
                ParameterGroup::VariationalScale => {
                    self.variational.set_packed_unconstrained_scale(s)
                }
            }
        }
    }

    /// Predictive means and variances of the latent link function.
    pub fn predict(
        &self,
        graph: &GraphDomain,
        features: &FeatureMatrix<T>,
        batch: &[EdgePair],
    ) -> Result<Predictive<T>> {
        predictive_link_distribution(self, graph, features, batch)
    }
}

/// Latent predictive marginals for a batch of pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictive<T> {
    pub means: Vec<T>,
    pub variances: Vec<T>,
    /// Diagonal jitter that was added to the inducing Gram.
    pub jitter: T,
}

/// Cholesky of the jittered inducing Gram; jitter scales with `ν`.
pub(crate) fn inducing_cholesky<T: Scalar>(kuu: &Matrix<T>, variance: T) -> Result<(Matrix<T>, T)> {
    kuu.cholesky_jittered(variance)
}

pub(crate) fn variance_floor<T: Scalar>(prior_var: T) -> T {
    prior_var.abs() * T::of(1e-12) + T::min_positive_value()
}

/// Whitened predictive: `mean = A m`, `var = c - ‖A_b‖² + ‖A_b L‖²` with
/// `A = K_fu L_uu^{-T}`.
pub fn predictive_link_distribution<T: Scalar>(
    model: &LinkGpModel<T>,
    graph: &GraphDomain,
    features: &FeatureMatrix<T>,
    batch: &[EdgePair],
) -> Result<Predictive<T>> {
    let blocks = batch_blocks(
        &model.prior(graph, features),
        batch,
        model.inducing.features(),
        model.inducing.edges(),
        ConvolutionSupport::PreImage,
    )?;
    let (lu, jitter) = inducing_cholesky(&blocks.gram.inducing, model.kernel.variance())?;
    let a = solve_lower(&lu, &blocks.gram.cross.transpose()).transpose();
    let al = a.matmul(&model.variational.scale());
    let mut means = Vec::with_capacity(batch.len());
    let mut variances = Vec::with_capacity(batch.len());
    for b in 0..batch.len() {
        means.push(dot(a.row(b), model.variational.mean()));
        let c = blocks.gram.batch_diag[b];
        let v = c - dot(a.row(b), a.row(b)) + dot(al.row(b), al.row(b));
        variances.push(v.max(variance_floor(c)));
    }
    Ok(Predictive {
        means,
        variances,
        jitter,
    })
}

/// How predicted links are turned into ranking scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkScoring {
    /// `E[σ(f)]` under the predictive marginal.
    #[default]
    Probability,
    /// `σ` of the predictive mean.
    Latent,
}

/// Scores for every pair, predicted in chunks of `chunk` pairs.
pub fn score_pairs<T: Scalar>(
    model: &LinkGpModel<T>,
    graph: &GraphDomain,
    features: &FeatureMatrix<T>,
    pairs: &[EdgePair],
    chunk: usize,
    scoring: LinkScoring,
    quadrature_points: usize,
) -> Result<Vec<f64>> {
    let quadrature = GaussHermite::new(quadrature_points);
    let mut scores = Vec::with_capacity(pairs.len());
    for batch in pairs.chunks(chunk.max(1)) {
        let pred = model.predict(graph, features, batch)?;
        for (mean, var) in pred.means.iter().zip(&pred.variances) {
            let s = match scoring {
                LinkScoring::Probability => quadrature.expected_probability(*mean, *var),
                LinkScoring::Latent => mean.sigmoid(),
            };
            if !s.is_finite() {
                return Err(Error::NonFinite {
                    quantity: "prediction",
                    group: "predictive distribution".into(),
                });
            }
            scores.push(s.as_f64());
        }
    }
    Ok(scores)
}
