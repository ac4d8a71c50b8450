//! Node-feature kernels: RBF with automatic relevance determination and its
//! graph-convolved forms `K̂ = P K Pᵀ` and `P K_XZ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ConvolutionConfig, GraphDomain};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// RBF-ARD hyperparameters kept on the log scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams<T> {
    log_variance: T,
    log_lengthscales: Vec<T>,
}

impl<T: Scalar> KernelParams<T> {
    pub fn new(variance: T, lengthscales: &[T]) -> Result<Self> {
        if !(variance.is_finite() && variance > T::zero()) {
            return Err(Error::InvalidInput(format!(
                "kernel variance {variance} must be positive"
            )));
        }
        if let Some(l) = lengthscales
            .iter()
            .find(|l| !(l.is_finite() && **l > T::zero()))
        {
            return Err(Error::InvalidInput(format!(
                "lengthscale {l} must be positive"
            )));
        }
        Ok(Self {
            log_variance: variance.ln(),
            log_lengthscales: lengthscales.iter().map(|l| l.ln()).collect(),
        })
    }

    /// Same lengthscale on every one of `dim` inputs.
    pub fn isotropic(variance: T, lengthscale: T, dim: usize) -> Result<Self> {
        Self::new(variance, &vec![lengthscale; dim])
    }

    pub fn from_unconstrained(log_variance: T, log_lengthscales: Vec<T>) -> Self {
        Self {
            log_variance,
            log_lengthscales,
        }
    }

    pub fn variance(&self) -> T {
        self.log_variance.exp()
    }

    pub fn lengthscales(&self) -> Vec<T> {
        self.log_lengthscales.iter().map(|l| l.exp()).collect()
    }

    pub fn dim(&self) -> usize {
        self.log_lengthscales.len()
    }

    pub fn log_variance(&self) -> T {
        self.log_variance
    }

    pub fn log_variance_mut(&mut self) -> &mut T {
        &mut self.log_variance
    }

    pub fn log_lengthscales(&self) -> &[T] {
        &self.log_lengthscales
    }

    pub fn log_lengthscales_mut(&mut self) -> &mut [T] {
        &mut self.log_lengthscales
    }

    fn inverse_squared_lengthscales(&self) -> Vec<T> {
        self.log_lengthscales
            .iter()
            .map(|l| (-(*l + *l)).exp())
            .collect()
    }
}

/// Gradient of a scalar with respect to the unconstrained kernel parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelGradient<T> {
    pub log_variance: T,
    pub log_lengthscales: Vec<T>,
}

impl<T: Scalar> KernelGradient<T> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            log_variance: T::zero(),
            log_lengthscales: vec![T::zero(); dim],
        }
    }
}

/// Row-per-node feature matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T> {
    values: Matrix<T>,
}

impl<T: Scalar> FeatureMatrix<T> {
    pub fn new(values: Matrix<T>) -> Result<Self> {
        if !values.is_finite() {
            return Err(Error::InvalidInput(
                "feature matrix has non-finite entries".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn row(&self, i: usize) -> &[T] {
        self.values.row(i)
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.values
    }

    pub fn matrix_mut(&mut self) -> &mut Matrix<T> {
        &mut self.values
    }

    /// Features of the listed nodes, in order.
    pub fn select(&self, nodes: &[usize]) -> Self {
        let d = self.dim();
        Self {
            values: Matrix::from_fn(nodes.len(), d, |i, j| self.values[(nodes[i], j)]),
        }
    }
}

fn check_dims<T: Scalar>(
    params: &KernelParams<T>,
    a: &FeatureMatrix<T>,
    b: &FeatureMatrix<T>,
) -> Result<()> {
    for (context, actual) in [
        ("rbf_ard left features", a.dim()),
        ("rbf_ard right features", b.dim()),
    ] {
        if actual != params.dim() {
            return Err(Error::Dimension {
                context,
                expected: params.dim(),
                actual,
            });
        }
    }
    Ok(())
}

#[inline]
fn scaled_sq_dist<T: Scalar>(x: &[T], y: &[T], inv_l2: &[T]) -> T {
    x.iter()
        .zip(y)
        .zip(inv_l2)
        .fold(T::zero(), |acc, ((&a, &b), &w)| {
            let d = a - b;
            acc + d * d * w
        })
}

/// `k(a_i, b_j) = ν exp(-½ Σ_d (a_id - b_jd)² / l_d²)`
pub fn rbf_ard<T: Scalar>(
    params: &KernelParams<T>,
    a: &FeatureMatrix<T>,
    b: &FeatureMatrix<T>,
) -> Result<Matrix<T>> {
    check_dims(params, a, b)?;
    let nu = params.variance();
    let inv_l2 = params.inverse_squared_lengthscales();
    let half = T::of(0.5);
    Ok(Matrix::from_fn(a.rows(), b.rows(), |i, j| {
        nu * (-half * scaled_sq_dist(a.row(i), b.row(j), &inv_l2)).exp()
    }))
}

/// Accumulates the adjoint of `k = rbf_ard(params, a, b)` given `∂f/∂k`.
///
/// `a_bar` / `b_bar` receive feature gradients when supplied; pass the same
/// features on both sides together with both adjoints for `k(Z, Z)`.
#[allow(clippy::too_many_arguments)]
pub fn rbf_ard_adjoint<T: Scalar>(
    params: &KernelParams<T>,
    a: &FeatureMatrix<T>,
    b: &FeatureMatrix<T>,
    k: &Matrix<T>,
    k_bar: &Matrix<T>,
    grad: &mut KernelGradient<T>,
    mut a_bar: Option<&mut Matrix<T>>,
    mut b_bar: Option<&mut Matrix<T>>,
) {
    let inv_l2 = params.inverse_squared_lengthscales();
    let dim = params.dim();
    let mut ls = vec![T::zero(); dim];
    let mut var = T::zero();
    for i in 0..a.rows() {
        let ai = a.row(i);
        for j in 0..b.rows() {
            let g = k_bar[(i, j)] * k[(i, j)];
            if g == T::zero() {
                continue;
            }
            var = var + g;
            let bj = b.row(j);
            for d in 0..dim {
                let diff = ai[d] - bj[d];
                let w = diff * inv_l2[d];
                ls[d] = ls[d] + g * diff * w;
                let t = g * w;
                if let Some(ab) = a_bar.as_deref_mut() {
                    ab[(i, d)] = ab[(i, d)] - t;
                }
                if let Some(bb) = b_bar.as_deref_mut() {
                    bb[(j, d)] = bb[(j, d)] + t;
                }
            }
        }
    }
    grad.log_variance = grad.log_variance + var;
    for (g, l) in grad.log_lengthscales.iter_mut().zip(ls) {
        *g = *g + l;
    }
}

fn check_rows<T: Scalar>(g: &GraphDomain, x: &FeatureMatrix<T>) -> Result<()> {
    if x.rows() != g.node_count() {
        return Err(Error::Dimension {
            context: "feature rows vs graph nodes",
            expected: g.node_count(),
            actual: x.rows(),
        });
    }
    Ok(())
}

/// `K̂ = P K Pᵀ` over all nodes of `g`.
pub fn convolved_node_kernel<T: Scalar>(
    g: &GraphDomain,
    cfg: &ConvolutionConfig<T>,
    params: &KernelParams<T>,
    x: &FeatureMatrix<T>,
) -> Result<Matrix<T>> {
    check_rows(g, x)?;
    let k = rbf_ard(params, x, x)?;
    let p = g.interpolated_convolution_product(cfg);
    Ok(p.matmul(&k).matmul_transposed(&p))
}

/// `P K_XZ`: convolution on the graph side only.
pub fn convolved_cross_kernel<T: Scalar>(
    g: &GraphDomain,
    cfg: &ConvolutionConfig<T>,
    params: &KernelParams<T>,
    x: &FeatureMatrix<T>,
    z: &FeatureMatrix<T>,
) -> Result<Matrix<T>> {
    check_rows(g, x)?;
    let kxz = rbf_ard(params, x, z)?;
    let p = g.interpolated_convolution_product(cfg);
    Ok(p.matmul(&kxz))
}

/// Column `center` of `K̂`, computed as `P K P e_c` without forming `K̂`.
pub fn convolved_kernel_column<T: Scalar>(
    g: &GraphDomain,
    cfg: &ConvolutionConfig<T>,
    params: &KernelParams<T>,
    x: &FeatureMatrix<T>,
    center: usize,
) -> Result<Vec<T>> {
    check_rows(g, x)?;
    g.check_node(center)?;
    if x.dim() != params.dim() {
        return Err(Error::Dimension {
            context: "kernel column features",
            expected: params.dim(),
            actual: x.dim(),
        });
    }
    let mut e = vec![T::zero(); g.node_count()];
    e[center] = T::one();
    // P is a polynomial in the symmetric S̃, hence symmetric
    let v = g.apply_convolution(cfg, &e);
    let nu = params.variance();
    let inv_l2 = params.inverse_squared_lengthscales();
    let half = T::of(0.5);
    let support: Vec<(usize, T)> = v
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, w)| *w != T::zero())
        .collect();
    let kv: Vec<T> = (0..g.node_count())
        .map(|i| {
            support.iter().fold(T::zero(), |acc, &(j, w)| {
                acc + w * nu * (-half * scaled_sq_dist(x.row(i), x.row(j), &inv_l2)).exp()
            })
        })
        .collect();
    Ok(g.apply_convolution(cfg, &kv))
}

/// Mean of `K̂[center, j]` over the nodes at each geodesic distance
/// `1..=max_d`; `None` marks an empty distance class.
pub fn covariance_distance_profile<T: Scalar>(
    g: &GraphDomain,
    cfg: &ConvolutionConfig<T>,
    params: &KernelParams<T>,
    x: &FeatureMatrix<T>,
    center: usize,
    max_d: usize,
) -> Result<Vec<Option<T>>> {
    let classes = g.geodesic_distance_classes(center, max_d)?;
    let column = convolved_kernel_column(g, cfg, params, x, center)?;
    Ok(classes
        .iter()
        .map(|nodes| {
            (!nodes.is_empty())
                .then(|| nodes.iter().map(|&j| column[j]).sum::<T>() / T::of_usize(nodes.len()))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feats(rows: &[&[f64]]) -> FeatureMatrix<f64> {
        FeatureMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn rbf_examples() {
        let p = KernelParams::new(1.0, &[1.0]).unwrap();
        let k = rbf_ard(&p, &feats(&[&[0.0]]), &feats(&[&[2.0]])).unwrap();
        assert!((k[(0, 0)] - (-2.0f64).exp()).abs() < 1e-15);

        let p = KernelParams::new(2.5, &[0.3, 4.0]).unwrap();
        let x = feats(&[&[1.0, -2.0]]);
        assert!((rbf_ard(&p, &x, &x).unwrap()[(0, 0)] - 2.5).abs() < 1e-14);

        let far = rbf_ard(&p, &x, &feats(&[&[1e3, 1e3]])).unwrap();
        assert!(far[(0, 0)] < 1e-300);
    }

    #[test]
    fn rbf_dimension_mismatch() {
        let p = KernelParams::new(1.0, &[1.0, 1.0]).unwrap();
        assert!(matches!(
            rbf_ard(&p, &feats(&[&[0.0]]), &feats(&[&[0.0]])),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn invalid_hyperparameters() {
        assert!(KernelParams::new(0.0, &[1.0]).is_err());
        assert!(KernelParams::new(1.0, &[-1.0]).is_err());
        assert!(FeatureMatrix::from_rows(&[vec![f64::NAN]]).is_err());
    }

    #[test]
    fn rbf_adjoint_matches_finite_differences() {
        let x = feats(&[&[0.1, 0.5], &[-0.4, 1.2], &[0.9, -0.3]]);
        let z = feats(&[&[0.0, 0.2], &[0.7, 0.8]]);
        let p = KernelParams::new(1.3, &[0.8, 1.7]).unwrap();
        let w = Matrix::from_fn(3, 2, |i, j| 0.3 + (i as f64) - 0.7 * j as f64);
        let f = |p: &KernelParams<f64>, x: &FeatureMatrix<f64>, z: &FeatureMatrix<f64>| {
            rbf_ard(p, x, z).unwrap().frobenius_dot(&w)
        };
        let k = rbf_ard(&p, &x, &z).unwrap();
        let mut grad = KernelGradient::zeros(2);
        let mut xb = Matrix::zeros(3, 2);
        let mut zb = Matrix::zeros(2, 2);
        rbf_ard_adjoint(&p, &x, &z, &k, &w, &mut grad, Some(&mut xb), Some(&mut zb));
        let h = 1e-6;
        let mut pp = p.clone();
        *pp.log_variance_mut() += h;
        let mut pm = p.clone();
        *pm.log_variance_mut() -= h;
        assert!(((f(&pp, &x, &z) - f(&pm, &x, &z)) / (2.0 * h) - grad.log_variance).abs() < 1e-8);
        for d in 0..2 {
            let mut pp = p.clone();
            pp.log_lengthscales_mut()[d] += h;
            let mut pm = p.clone();
            pm.log_lengthscales_mut()[d] -= h;
            let fd = (f(&pp, &x, &z) - f(&pm, &x, &z)) / (2.0 * h);
            assert!((fd - grad.log_lengthscales[d]).abs() < 1e-8);
        }
        for j in 0..2 {
            for d in 0..2 {
                let mut zp = z.clone();
                zp.matrix_mut()[(j, d)] += h;
                let mut zm = z.clone();
                zm.matrix_mut()[(j, d)] -= h;
                let fd = (f(&p, &x, &zp) - f(&p, &x, &zm)) / (2.0 * h);
                assert!((fd - zb[(j, d)]).abs() < 1e-8);
            }
        }
        for i in 0..3 {
            let mut xp = x.clone();
            xp.matrix_mut()[(i, 1)] += h;
            let mut xm = x.clone();
            xm.matrix_mut()[(i, 1)] -= h;
            let fd = (f(&p, &xp, &z) - f(&p, &xm, &z)) / (2.0 * h);
            assert!((fd - xb[(i, 1)]).abs() < 1e-8);
        }
    }

    #[test]
    fn convolved_kernel_without_convolution_is_base_kernel() {
        let g = GraphDomain::new(3, [(0, 1), (1, 2)]).unwrap();
        let x = feats(&[&[0.0], &[0.5], &[2.0]]);
        let p = KernelParams::new(1.0, &[1.0]).unwrap();
        let k = rbf_ard(&p, &x, &x).unwrap();
        for cfg in [
            ConvolutionConfig::from_weights(&[]).unwrap(),
            ConvolutionConfig::uniform(3, 0.0).unwrap(),
        ] {
            assert_eq!(convolved_node_kernel(&g, &cfg, &p, &x).unwrap(), k);
            assert_eq!(convolved_cross_kernel(&g, &cfg, &p, &x, &x).unwrap(), k);
        }
    }

    #[test]
    fn cross_kernel_single_edge_by_hand() {
        let g = GraphDomain::new(2, [(0, 1)]).unwrap();
        let x = feats(&[&[0.0], &[1.0]]);
        let z = feats(&[&[0.25]]);
        let p = KernelParams::new(1.0, &[1.0]).unwrap();
        let cfg = ConvolutionConfig::uniform(1, 1.0).unwrap();
        let c = convolved_cross_kernel(&g, &cfg, &p, &x, &z).unwrap();
        let k0 = (-0.5f64 * 0.0625).exp();
        let k1 = (-0.5f64 * 0.5625).exp();
        let expected = 0.5 * k0 + 0.5 * k1;
        assert!((c[(0, 0)] - expected).abs() < 1e-15);
        assert!((c[(1, 0)] - expected).abs() < 1e-15);
    }

    #[test]
    fn kernel_column_matches_full_matrix() {
        let g = GraphDomain::new(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (1, 4)]).unwrap();
        let x =
            FeatureMatrix::new(Matrix::from_fn(6, 2, |i, j| ((i * 3 + j) as f64).sin())).unwrap();
        let p = KernelParams::new(0.7, &[0.9, 1.4]).unwrap();
        let cfg = ConvolutionConfig::from_weights(&[0.5, 0.3]).unwrap();
        let full = convolved_node_kernel(&g, &cfg, &p, &x).unwrap();
        for c in 0..6 {
            let col = convolved_kernel_column(&g, &cfg, &p, &x, c).unwrap();
            for (i, v) in col.iter().enumerate() {
                assert!((v - full[(i, c)]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn profile_saturates_with_huge_lengthscale() {
        let g = GraphDomain::new(5, [(0, 1), (1, 2), (2, 3), (3, 4)]).unwrap();
        let x = FeatureMatrix::new(Matrix::from_fn(5, 1, |i, _| i as f64)).unwrap();
        let p = KernelParams::new(1.5, &[1e8]).unwrap();
        let cfg = ConvolutionConfig::<f64>::from_weights(&[]).unwrap();
        let prof = covariance_distance_profile(&g, &cfg, &p, &x, 0, 5).unwrap();
        for v in &prof[..4] {
            assert!((v.unwrap() - 1.5).abs() < 1e-9);
        }
        assert_eq!(prof[4], None);
    }
}
