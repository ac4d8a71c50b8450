#![allow(dead_code)]

use std::collections::VecDeque;

use linkgp::link::{assemble_link_gram, ConvolutionSupport};
use linkgp::svgp::LinkGpModel;
use linkgp::{ConvolutionConfig, EdgePair, FeatureMatrix, GraphDomain, Matrix};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random spanning tree (each node attaches to an earlier one) plus up to
/// `extra` random chords.
pub fn random_connected_graph(n: usize, extra: usize, rng: &mut ChaCha8Rng) -> GraphDomain {
    let mut edges = std::collections::BTreeSet::new();
    for v in 1..n {
        let u = rng.random_range(0..v);
        edges.insert((u, v));
    }
    for _ in 0..extra {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            edges.insert((a.min(b), a.max(b)));
        }
    }
    GraphDomain::new(n, edges).unwrap()
}

pub fn random_features(n: usize, d: usize, scale: f64, rng: &mut ChaCha8Rng) -> FeatureMatrix<f64> {
    FeatureMatrix::new(Matrix::from_fn(n, d, |_, _| {
        scale * (2.0 * rng.random::<f64>() - 1.0)
    }))
    .unwrap()
}

pub fn to_na(m: &Matrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)])
}

/// Dense adjacency built straight from the edge list.
pub fn dense_adjacency(g: &GraphDomain) -> DMatrix<f64> {
    let n = g.node_count();
    let mut a = DMatrix::zeros(n, n);
    for &(i, j) in g.edges() {
        a[(i, j)] = 1.0;
        a[(j, i)] = 1.0;
    }
    a
}

/// `D̃^{-1/2}(A + I)D̃^{-1/2}` from dense matrices.
pub fn dense_normalized(g: &GraphDomain) -> DMatrix<f64> {
    let n = g.node_count();
    let a = dense_adjacency(g) + DMatrix::identity(n, n);
    let d: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
    DMatrix::from_fn(n, n, |i, j| a[(i, j)] / (d[i] * d[j]).sqrt())
}

/// Plain squared-exponential kernel matrix with a shared lengthscale per dimension.
pub fn dense_rbf(
    x: &FeatureMatrix<f64>,
    z: &FeatureMatrix<f64>,
    variance: f64,
    lengthscales: &[f64],
) -> DMatrix<f64> {
    DMatrix::from_fn(x.rows(), z.rows(), |i, j| {
        let r2: f64 = x
            .row(i)
            .iter()
            .zip(z.row(j))
            .zip(lengthscales)
            .map(|((a, b), l)| ((a - b) / l).powi(2))
            .sum();
        variance * (-0.5 * r2).exp()
    })
}

pub fn hops_within(g: &GraphDomain, src: usize, k: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; g.node_count()];
    dist[src] = 0;
    let mut q = VecDeque::from([src]);
    while let Some(u) = q.pop_front() {
        for &v in g.neighbors(u) {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                q.push_back(v);
            }
        }
    }
    (0..g.node_count()).filter(|&v| dist[v] <= k).collect()
}

/// Neighbourhood double sum for full-strength convolutions.
pub fn neighbourhood_double_sum(g: &GraphDomain, k: usize, kx: &DMatrix<f64>) -> DMatrix<f64> {
    let s = dense_normalized(g);
    let mut sk = DMatrix::identity(g.node_count(), g.node_count());
    for _ in 0..k {
        sk = &sk * &s;
    }
    let n = g.node_count();
    let hoods: Vec<Vec<usize>> = (0..n).map(|i| hops_within(g, i, k)).collect();
    DMatrix::from_fn(n, n, |i, j| {
        let mut acc = 0.0;
        for &a in &hoods[i] {
            for &b in &hoods[j] {
                acc += sk[(i, a)] * sk[(b, j)] * kx[(a, b)];
            }
        }
        acc
    })
}

pub fn brute_force_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Recomputes every prefix from scratch.
pub fn prefix_scan_ap(scores: &[f64], labels: &[bool]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let positives = labels.iter().filter(|&&l| l).count() as f64;
    let mut ap = 0.0;
    let mut previous_recall = 0.0;
    for k in 1..=order.len() {
        let hits = order[..k].iter().filter(|&&i| labels[i]).count() as f64;
        let recall = hits / positives;
        let precision = hits / k as f64;
        ap += (recall - previous_recall) * precision;
        previous_recall = recall;
    }
    ap
}

/// Predictive in the original inducing coordinates `u = L_uu v`.
pub fn unwhitened_predictive(
    model: &LinkGpModel<f64>,
    g: &GraphDomain,
    x: &FeatureMatrix<f64>,
    pairs: &[EdgePair],
    jitter: f64,
) -> (Vec<f64>, Vec<f64>) {
    let prior = model.prior(g, x);
    let gram = assemble_link_gram(
        &prior,
        pairs,
        model.inducing.features(),
        model.inducing.edges(),
        ConvolutionSupport::Full,
    )
    .unwrap();
    let m = model.variational.size();
    let kuu = to_na(&gram.inducing) + DMatrix::identity(m, m) * jitter;
    let kfu = to_na(&gram.cross);
    let luu = kuu.clone().cholesky().unwrap().l();
    let mean_u = &luu * DVector::from_column_slice(model.variational.mean());
    let s_v = to_na(&model.variational.scale());
    let cov_u = &luu * &s_v * s_v.transpose() * luu.transpose();
    let kuu_inv = kuu.try_inverse().unwrap();
    let a = &kfu * &kuu_inv;
    let means = (&a * mean_u).iter().copied().collect();
    let variances = (0..pairs.len())
        .map(|b| {
            let row = a.row(b);
            gram.batch_diag[b] - (row * kfu.row(b).transpose())[(0, 0)]
                + (row * &cov_u * row.transpose())[(0, 0)]
        })
        .collect();
    (means, variances)
}

/// Gaussian node signals smoothed by `steps` full convolutions, then
/// standardised per column and scaled by `scale`.
pub fn smoothed_features(
    g: &GraphDomain,
    dim: usize,
    steps: usize,
    scale: f64,
    seed: u64,
) -> FeatureMatrix<f64> {
    let n = g.node_count();
    let mut r = rng(seed);
    let raw = Matrix::from_fn(n, dim, |_, _| StandardNormal.sample(&mut r));
    let p = g.interpolated_convolution_product(
        &ConvolutionConfig::from_weights(&vec![1.0; steps]).unwrap(),
    );
    let mut m = p.matmul(&raw);
    for c in 0..dim {
        let mean = (0..n).map(|i| m[(i, c)]).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (m[(i, c)] - mean).powi(2)).sum::<f64>() / n as f64;
        for i in 0..n {
            m[(i, c)] = scale * (m[(i, c)] - mean) / var.sqrt();
        }
    }
    FeatureMatrix::new(m).unwrap()
}

pub fn gaussian_features(n: usize, dim: usize, scale: f64, seed: u64) -> FeatureMatrix<f64> {
    let mut r = rng(seed);
    FeatureMatrix::new(Matrix::from_fn(n, dim, |_, _| {
        let z: f64 = StandardNormal.sample(&mut r);
        scale * z
    }))
    .unwrap()
}

/// Two equal communities with edge probabilities `p_in` and `p_out`, and
/// one-hot community features.
pub fn two_block_graph(
    n: usize,
    p_in: f64,
    p_out: f64,
    seed: u64,
) -> (GraphDomain, FeatureMatrix<f64>) {
    let mut r = rng(seed);
    let block = |v: usize| usize::from(v >= n / 2);
    let mut edges = Vec::new();
    for a in 0..n {
        for b in (a + 1)..n {
            let p = if block(a) == block(b) { p_in } else { p_out };
            if r.random::<f64>() < p {
                edges.push((a, b));
            }
        }
    }
    let g = GraphDomain::new(n, edges).unwrap();
    let x = FeatureMatrix::new(Matrix::from_fn(
        n,
        2,
        |i, c| if block(i) == c { 1.0 } else { 0.0 },
    ))
    .unwrap();
    (g, x)
}
