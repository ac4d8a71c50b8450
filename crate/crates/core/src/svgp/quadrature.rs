//! Gauss–Hermite quadrature for Gaussian expectations of the Bernoulli
//! log-likelihood with a logistic link.

use std::f64::consts::PI;

use crate::scalar::Scalar;

/// Nodes and weights for `∫ e^{-t²} f(t) dt ≈ Σ w_k f(t_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Newton iteration on the orthonormal Hermite recurrence.
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "quadrature needs at least one point");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let pim4 = PI.powf(-0.25);
        let nf = n as f64;
        let m = n.div_ceil(2);
        let mut z = 0.0f64;
        for i in 0..m {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * nodes[0],
                3 => 1.91 * z - 0.91 * nodes[1],
                _ => 2.0 * z - nodes[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 1..=n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            nodes[i] = z;
            nodes[n - 1 - i] = -z;
            weights[i] = 2.0 / (pp * pp);
            weights[n - 1 - i] = weights[i];
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E_{N(mean, variance)}[f]`.
    pub fn expectation<T: Scalar>(&self, mean: T, variance: T, f: impl Fn(T) -> T) -> T {
        let spread = (T::of(2.0) * variance).sqrt();
        let norm = T::of(PI.sqrt().recip());
        self.nodes
            .iter()
            .zip(&self.weights)
            .fold(T::zero(), |acc, (&t, &w)| {
                acc + T::of(w) * norm * f(mean + spread * T::of(t))
            })
    }

    /// `E_{N(mean, variance)}[log σ(±f)]` together with its derivatives with
    /// respect to `mean` and `variance`.
    pub fn bernoulli_expected_loglik_with_grad<T: Scalar>(
        &self,
        mean: T,
        variance: T,
        label: bool,
    ) -> (T, T, T) {
        let sign = if label { T::one() } else { -T::one() };
        let spread = (T::of(2.0) * variance).sqrt();
        let norm = T::of(PI.sqrt().recip());
        let mut value = T::zero();
        let mut d_mean = T::zero();
        let mut d_var = T::zero();
        for (&t, &w) in self.nodes.iter().zip(&self.weights) {
            let t = T::of(t);
            let w = T::of(w) * norm;
            let f = sign * (mean + spread * t);
            value = value + w * f.log_sigmoid();
            // d/dx log σ(s x) = s σ(-s x)
            let slope = sign * (-f).sigmoid();
            d_mean = d_mean + w * slope;
            d_var = d_var + w * slope * t;
        }
        // ∂f/∂v = t / sqrt(2v)
        let d_var = if spread > T::zero() {
            d_var / spread
        } else {
            T::zero()
        };
        (value, d_mean, d_var)
    }

    pub fn bernoulli_expected_loglik<T: Scalar>(&self, mean: T, variance: T, label: bool) -> T {
        self.bernoulli_expected_loglik_with_grad(mean, variance, label)
            .0
    }

    /// `E_{N(mean, variance)}[σ(f)]`.
    pub fn expected_probability<T: Scalar>(&self, mean: T, variance: T) -> T {
        self.expectation(mean, variance, |f| f.sigmoid())
    }
}

/// `E_{N(mean, variance)}[log p(label | f)]` under a logistic link.
pub fn bernoulli_expected_loglik<T: Scalar>(mean: T, variance: T, label: bool, n_quad: usize) -> T {
    GaussHermite::new(n_quad).bernoulli_expected_loglik(mean, variance, label)
}
