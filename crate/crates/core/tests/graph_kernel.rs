mod common;

use common::*;
use linkgp::kernel::{
    convolved_cross_kernel, convolved_node_kernel, covariance_distance_profile, rbf_ard,
};
use linkgp::link::{assemble_link_gram, ConvolutionSupport, LinkPrior};
use linkgp::{ConvolutionConfig, EdgePair, FeatureMatrix, KernelParams};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn graph_strategy(max_n: usize) -> impl Strategy<Value = (usize, usize, u64)> {
    (2..=max_n, 0..20usize, any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn normalized_convolution_matches_dense_definition((n, extra, seed) in graph_strategy(20)) {
        let g = random_connected_graph(n, extra, &mut rng(seed));
        let s = to_na(&g.normalized_convolution::<f64>().to_dense());
        let oracle = dense_normalized(&g);
        prop_assert!((&s - &oracle).abs().max() < 1e-15);
        prop_assert_eq!(s.transpose(), s);
    }

    #[test]
    fn asymmetric_convolution_is_row_stochastic((n, extra, seed) in graph_strategy(20)) {
        let g = random_connected_graph(n, extra, &mut rng(seed));
        let m = g.asymmetric_convolution::<f64>().to_dense();
        for i in 0..n {
            let sum: f64 = m.row(i).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn dirichlet_norm_is_laplacian_quadratic_form((n, extra, seed) in graph_strategy(25)) {
        let mut r = rng(seed);
        let g = random_connected_graph(n, extra, &mut r);
        let x = random_features(n, 1, 3.0, &mut r);
        let signal: Vec<f64> = (0..n).map(|i| x.row(i)[0]).collect();
        let a = dense_adjacency(&g);
        let d = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| a.row(i).sum()));
        let v = DVector::from_vec(signal.clone());
        let quad = (v.transpose() * (d - a) * &v)[(0, 0)];
        let edge_sum = g.dirichlet_norm(&signal).unwrap();
        prop_assert!((quad - edge_sum).abs() <= 1e-10 * quad.abs().max(1.0));
        prop_assert!(edge_sum >= 0.0);
    }

    #[test]
    fn full_strength_kernel_equals_neighbourhood_double_sum(
        (n, extra, seed) in graph_strategy(15),
        k in 0..4usize,
    ) {
        let mut r = rng(seed);
        let g = random_connected_graph(n, extra, &mut r);
        let x = random_features(n, 3, 1.5, &mut r);
        let params = KernelParams::new(1.3, &[0.7, 1.1, 2.0]).unwrap();
        let cfg = ConvolutionConfig::from_weights(&vec![1.0; k]).unwrap();
        let khat = to_na(&convolved_node_kernel(&g, &cfg, &params, &x).unwrap());
        let oracle = neighbourhood_double_sum(&g, k, &dense_rbf(&x, &x, 1.3, &[0.7, 1.1, 2.0]));
        prop_assert!((&khat - &oracle).abs().max() < 1e-10);
    }

    #[test]
    fn convolved_kernel_is_psd(
        (n, extra, seed) in graph_strategy(30),
        k in 0..4usize,
        variance in 0.1..5.0f64,
        lengthscale in 0.2..4.0f64,
    ) {
        let mut r = rng(seed);
        let g = random_connected_graph(n, extra, &mut r);
        let x = random_features(n, 2, 2.0, &mut r);
        let weights: Vec<f64> = (0..k).map(|i| ((seed >> i) % 11) as f64 / 10.0).collect();
        let cfg = ConvolutionConfig::from_weights(&weights).unwrap();
        let params = KernelParams::isotropic(variance, lengthscale, 2).unwrap();
        let khat = to_na(&convolved_node_kernel(&g, &cfg, &params, &x).unwrap());
        prop_assert!((&khat - khat.transpose()).abs().max() < 1e-12);
        let shifted = khat + DMatrix::identity(n, n) * 1e-8;
        let min_eig = shifted.symmetric_eigenvalues().min();
        prop_assert!(min_eig >= 0.0, "min eigenvalue {min_eig}");
    }

    #[test]
    fn preimage_restriction_is_exact(
        (n, extra, seed) in graph_strategy(25),
        k in 0..4usize,
    ) {
        let mut r = rng(seed);
        let g = random_connected_graph(n, extra, &mut r);
        let x = random_features(n, 2, 1.0, &mut r);
        let z = random_features(4, 2, 1.0, &mut r);
        let cfg = ConvolutionConfig::uniform(k, 0.6).unwrap();
        let kernel = KernelParams::new(0.9, &[0.8, 1.4]).unwrap();
        let prior = LinkPrior { graph: &g, features: &x, convolution: &cfg, kernel: &kernel };
        let batch: Vec<EdgePair> = (0..3)
            .filter_map(|t| EdgePair::input((t * 7 + seed as usize) % n, (t * 3 + 1 + seed as usize / 5) % n).ok())
            .collect();
        let inducing = [EdgePair::inducing(0, 1).unwrap(), EdgePair::inducing(1, 2).unwrap(), EdgePair::inducing(2, 3).unwrap()];
        let local = assemble_link_gram(&prior, &batch, &z, &inducing, ConvolutionSupport::PreImage).unwrap();
        let full = assemble_link_gram(&prior, &batch, &z, &inducing, ConvolutionSupport::Full).unwrap();
        prop_assert!(local.cross.max_abs_diff(&full.cross) < 1e-12);
        for (a, b) in local.batch_diag.iter().zip(&full.batch_diag) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn link_gram_matches_dense_product_kernel() {
    let mut r = rng(5);
    let g = random_connected_graph(9, 6, &mut r);
    let x = random_features(9, 2, 1.0, &mut r);
    let z = random_features(3, 2, 1.0, &mut r);
    let cfg = ConvolutionConfig::from_weights(&[0.5, 0.3]).unwrap();
    let kernel = KernelParams::new(1.2, &[0.9, 1.5]).unwrap();
    let prior = LinkPrior {
        graph: &g,
        features: &x,
        convolution: &cfg,
        kernel: &kernel,
    };
    let batch = [
        EdgePair::input(0, 4).unwrap(),
        EdgePair::input(8, 2).unwrap(),
    ];
    let inducing = [
        EdgePair::inducing(0, 2).unwrap(),
        EdgePair::inducing(1, 2).unwrap(),
    ];
    let gram =
        assemble_link_gram(&prior, &batch, &z, &inducing, ConvolutionSupport::PreImage).unwrap();

    let s = dense_normalized(&g);
    let id = DMatrix::<f64>::identity(9, 9);
    let p = (&s * 0.5 + &id * 0.5) * (&s * 0.3 + &id * 0.7);
    let khat = &p * dense_rbf(&x, &x, 1.2, &[0.9, 1.5]) * p.transpose();
    let cross = &p * dense_rbf(&x, &z, 1.2, &[0.9, 1.5]);
    let kzz = dense_rbf(&z, &z, 1.2, &[0.9, 1.5]);
    let prod = |k: &DMatrix<f64>, (i, j): (usize, usize), (a, b): (usize, usize)| {
        k[(i, a)] * k[(j, b)] + k[(i, b)] * k[(j, a)]
    };
    for (bi, e) in batch.iter().enumerate() {
        assert!((gram.batch_diag[bi] - prod(&khat, e.nodes(), e.nodes())).abs() < 1e-12);
        for (ui, u) in inducing.iter().enumerate() {
            assert!((gram.cross[(bi, ui)] - prod(&cross, e.nodes(), u.nodes())).abs() < 1e-12);
        }
    }
    for (a, ea) in inducing.iter().enumerate() {
        for (b, eb) in inducing.iter().enumerate() {
            assert!((gram.inducing[(a, b)] - prod(&kzz, ea.nodes(), eb.nodes())).abs() < 1e-12);
        }
    }
}

#[test]
fn cross_kernel_convolves_input_side_only() {
    let mut r = rng(8);
    let g = random_connected_graph(7, 4, &mut r);
    let x = random_features(7, 2, 1.0, &mut r);
    let z = random_features(3, 2, 1.0, &mut r);
    let params = KernelParams::new(1.0, &[1.0, 1.0]).unwrap();
    let cfg = ConvolutionConfig::from_weights(&[1.0]).unwrap();
    let cross = to_na(&convolved_cross_kernel(&g, &cfg, &params, &x, &z).unwrap());
    let expected = dense_normalized(&g) * to_na(&rbf_ard(&params, &x, &z).unwrap());
    assert!((cross - expected).abs().max() < 1e-14);
}

#[test]
fn distance_profile_matches_dense_kernel() {
    let mut r = rng(21);
    let g = random_connected_graph(25, 10, &mut r);
    let x: FeatureMatrix<f64> = random_features(25, 3, 1.0, &mut r);
    let params = KernelParams::isotropic(1.0, 1.0, 3).unwrap();
    let cfg = ConvolutionConfig::from_weights(&[1.0, 1.0]).unwrap();
    let khat = convolved_node_kernel(&g, &cfg, &params, &x).unwrap();
    let profile = covariance_distance_profile(&g, &cfg, &params, &x, 0, 4).unwrap();
    let dist = g.bfs_distances(0);
    for (d, value) in profile.iter().enumerate() {
        let members: Vec<usize> = (0..25).filter(|&j| dist[j] == Some(d + 1)).collect();
        match value {
            None => assert!(members.is_empty()),
            Some(v) => {
                let mean =
                    members.iter().map(|&j| khat[(0, j)]).sum::<f64>() / members.len() as f64;
                assert!((v - mean).abs() < 1e-12);
            }
        }
    }
}
