//! Prior diagnostics: covariance against geodesic distance, and smoothness
//! of prior samples, as functions of the number of convolutions.

use std::fmt::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::graph::{ConvolutionConfig, GraphDomain};
use crate::kernel::{
    convolved_node_kernel, covariance_distance_profile, FeatureMatrix, KernelParams,
};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

pub const DEFAULT_DIRICHLET_SAMPLES: usize = 5000;
const SAMPLE_JITTER: f64 = 1e-8;

/// `K` full-strength convolutions.
fn full_convolutions<T: Scalar>(k: usize) -> ConvolutionConfig<T> {
    ConvolutionConfig::from_weights(&vec![T::one(); k]).expect("unit weights are valid")
}

/// Mean covariance profile for every `K` in `depths`, with all weights 1.
pub fn covariance_profiles<T: Scalar>(
    g: &GraphDomain,
    x: &FeatureMatrix<T>,
    params: &KernelParams<T>,
    center: usize,
    depths: &[usize],
    max_d: usize,
) -> Result<Vec<Vec<Option<T>>>> {
    depths
        .iter()
        .map(|&k| covariance_distance_profile(g, &full_convolutions(k), params, x, center, max_d))
        .collect()
}

/// CSV with header `K,d,mean_covariance`; empty distance classes print `NA`.
pub fn covariance_profile_report<T: Scalar>(
    g: &GraphDomain,
    x: &FeatureMatrix<T>,
    params: &KernelParams<T>,
    center: usize,
    depths: &[usize],
    max_d: usize,
) -> Result<String> {
    let profiles = covariance_profiles(g, x, params, center, depths, max_d)?;
    let mut out = String::from("K,d,mean_covariance\n");
    for (&k, profile) in depths.iter().zip(&profiles) {
        for (d, value) in profile.iter().enumerate() {
            match value {
                Some(v) => writeln!(out, "{k},{},{}", d + 1, v.as_f64()),
                None => writeln!(out, "{k},{},NA", d + 1),
            }
            .expect("writing to a String");
        }
    }
    Ok(out)
}

fn sample_factor<T: Scalar>(khat: &Matrix<T>, variance: T) -> Result<Matrix<T>> {
    let mut jittered = khat.clone();
    jittered.add_diagonal(T::of(SAMPLE_JITTER));
    match jittered.cholesky() {
        Some(l) => Ok(l),
        None => khat.cholesky_jittered(variance).map(|(l, _)| l),
    }
}

/// Average Dirichlet norm of `samples` draws from `N(0, K̂ + 1e-8 I)` for
/// every `K` in `depths`, all weights 1. The same standard-normal draws are
/// reused for every `K`.
pub fn dirichlet_sweep<T: Scalar>(
    g: &GraphDomain,
    x: &FeatureMatrix<T>,
    params: &KernelParams<T>,
    depths: &[usize],
    samples: usize,
    seed: u64,
) -> Result<Vec<T>> {
    let n = g.node_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // samples × n, one draw per row
    let z = Matrix::from_fn(samples, n, |_, _| {
        let v: f64 = StandardNormal.sample(&mut rng);
        T::of(v)
    });
    depths
        .iter()
        .map(|&k| {
            let khat = convolved_node_kernel(g, &full_convolutions(k), params, x)?;
            let l = sample_factor(&khat, params.variance())?;
            // row s of z Lᵀ is L z_s
            let draws = z.matmul_transposed(&l);
            let mut total = T::zero();
            for s in 0..samples {
                total = total + g.dirichlet_norm(draws.row(s))?;
            }
            Ok(total / T::of_usize(samples.max(1)))
        })
        .collect()
}

/// CSV with header `K,mean_dirichlet_norm`.
pub fn dirichlet_sweep_report<T: Scalar>(
    g: &GraphDomain,
    x: &FeatureMatrix<T>,
    params: &KernelParams<T>,
    depths: &[usize],
    samples: usize,
    seed: u64,
) -> Result<String> {
    let norms = dirichlet_sweep(g, x, params, depths, samples, seed)?;
    let mut out = String::from("K,mean_dirichlet_norm\n");
    for (k, v) in depths.iter().zip(norms) {
        writeln!(out, "{k},{}", v.as_f64()).expect("writing to a String");
    }
    Ok(out)
}
