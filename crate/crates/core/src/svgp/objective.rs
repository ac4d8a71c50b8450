//! Minibatch ELBO and its gradient with respect to every unconstrained
//! parameter, by hand-written reverse accumulation through the Cholesky,
//! the link-kernel products, the convolution stages and the RBF kernel.

use crate::data::LabeledPair;
use crate::error::{Error, Result};
use crate::graph::GraphDomain;
use crate::kernel::{rbf_ard_adjoint, FeatureMatrix, KernelGradient};
use crate::linalg::{cholesky_adjoint, dot, solve_lower, solve_lower_transposed, Matrix};
use crate::link::{batch_blocks, BatchBlocks, ConvolutionSupport, EdgePair};
use crate::scalar::Scalar;

use super::quadrature::GaussHermite;
use super::{inducing_cholesky, kl_term, variance_floor, LinkGpModel, ParameterGroup};

/// Gradient of the ELBO, laid out like [`LinkGpModel::parameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct ElboGradient<T> {
    pub flat: Vec<T>,
}

impl<T: Scalar> ElboGradient<T> {
    /// First group containing a non-finite entry.
    pub fn non_finite_group(&self, model: &LinkGpModel<T>) -> Option<ParameterGroup> {
        model
            .layout()
            .into_iter()
            .find(|&(_, off, len)| self.flat[off..off + len].iter().any(|g| !g.is_finite()))
            .map(|(g, _, _)| g)
    }
}

struct Forward<T> {
    blocks: BatchBlocks<T>,
    lu: Matrix<T>,
    jitter: T,
    /// `L_uu^{-1} K_uf`, `M̄ × B`
    y: Matrix<T>,
    /// `K_fu L_uu^{-T}`, `B × M̄`
    a: Matrix<T>,
    scale: Matrix<T>,
    /// `A L`
    a_scale: Matrix<T>,
    means: Vec<T>,
    variances: Vec<T>,
    clamped: Vec<bool>,
}

fn forward<T: Scalar>(
    model: &LinkGpModel<T>,
    graph: &GraphDomain,
    features: &FeatureMatrix<T>,
    pairs: &[EdgePair],
) -> Result<Forward<T>> {
    let blocks = batch_blocks(
        &model.prior(graph, features),
        pairs,
        model.inducing.features(),
        model.inducing.edges(),
        ConvolutionSupport::PreImage,
    )?;
    let (lu, jitter) = inducing_cholesky(&blocks.gram.inducing, model.kernel.variance())?;
    let y = solve_lower(&lu, &blocks.gram.cross.transpose());
    let a = y.transpose();
    let scale = model.variational.scale();
    let a_scale = a.matmul(&scale);
    let mut means = Vec::with_capacity(pairs.len());
    let mut variances = Vec::with_capacity(pairs.len());
    let mut clamped = Vec::with_capacity(pairs.len());
    for b in 0..pairs.len() {
        means.push(dot(a.row(b), model.variational.mean()));
        let c = blocks.gram.batch_diag[b];
        let v = c - dot(a.row(b), a.row(b)) + dot(a_scale.row(b), a_scale.row(b));
        let floor = variance_floor(c);
        clamped.push(v < floor);
        variances.push(v.max(floor));
    }
    Ok(Forward {
        blocks,
        lu,
        jitter,
        y,
        a,
        scale,
        a_scale,
        means,
        variances,
        clamped,
    })
}

fn check_batch<T>(batch: &[LabeledPair], n_total: usize) -> Result<T>
where
    T: Scalar,
{
    if batch.is_empty() {
        return Err(Error::InvalidInput("minibatch is empty".into()));
    }
    if n_total == 0 {
        return Err(Error::InvalidInput(
            "total observation count is zero".into(),
        ));
    }
    Ok(T::of_usize(n_total) / T::of_usize(batch.len()))
}

/// `(N/B) Σ_b E_q[log p(y_b | r_b)] - KL(q ‖ p)`.
pub fn minibatch_elbo<T: Scalar>(
    model: &LinkGpModel<T>,
    graph: &GraphDomain,
    features: &FeatureMatrix<T>,
    batch: &[LabeledPair],
    n_total: usize,
    quadrature: &GaussHermite,
) -> Result<T> {
    let scale = check_batch::<T>(batch, n_total)?;
    let pairs: Vec<EdgePair> = batch.iter().map(|p| p.pair).collect();
    let fwd = forward(model, graph, features, &pairs)?;
    let ell: T = batch
        .iter()
        .enumerate()
        .map(|(b, p)| quadrature.bernoulli_expected_loglik(fwd.means[b], fwd.variances[b], p.label))
        .sum();
    Ok(scale * ell - kl_term(&model.variational))
}

/// ELBO and its gradient with respect to [`LinkGpModel::parameters`].
pub fn minibatch_elbo_with_gradient<T: Scalar>(
    model: &LinkGpModel<T>,
    graph: &GraphDomain,
    features: &FeatureMatrix<T>,
    batch: &[LabeledPair],
    n_total: usize,
    quadrature: &GaussHermite,
) -> Result<(T, ElboGradient<T>)> {
    let scale_factor = check_batch::<T>(batch, n_total)?;
    let pairs: Vec<EdgePair> = batch.iter().map(|p| p.pair).collect();
    let fwd = forward(model, graph, features, &pairs)?;
    let n_batch = batch.len();
    let m_ind = model.variational.size();
    let two = T::of(2.0);

    let mut ell = T::zero();
    let mut mean_bar = vec![T::zero(); n_batch];
    let mut var_bar = vec![T::zero(); n_batch];
    for (b, p) in batch.iter().enumerate() {
        let (v, dm, dv) =
            quadrature.bernoulli_expected_loglik_with_grad(fwd.means[b], fwd.variances[b], p.label);
        ell = ell + v;
        mean_bar[b] = scale_factor * dm;
        if !fwd.clamped[b] {
            var_bar[b] = scale_factor * dv;
        }
    }
    let elbo = scale_factor * ell - kl_term(&model.variational);

    // q(v) parameters
    let m = model.variational.mean();
    let mut m_bar: Vec<T> = m.iter().map(|&x| -x).collect();
    let mut a_bar = Matrix::zeros(n_batch, m_ind);
    // ∂var/∂A = -2A + 2 (A L) Lᵀ
    let al_lt = fwd.a_scale.matmul_transposed(&fwd.scale);
    for b in 0..n_batch {
        let a_row = fwd.a.row(b);
        for (k, mb) in m_bar.iter_mut().enumerate() {
            *mb = *mb + mean_bar[b] * a_row[k];
        }
        let out = a_bar.row_mut(b);
        for k in 0..m_ind {
            out[k] = mean_bar[b] * m[k] + two * var_bar[b] * (al_lt[(b, k)] - a_row[k]);
        }
    }
    // L̄ = 2 Aᵀ diag(v̄) A L - L + diag(1/L_ii), lower triangle
    let weighted_a = Matrix::from_fn(n_batch, m_ind, |b, k| var_bar[b] * fwd.a[(b, k)]);
    let mut scale_bar = weighted_a.transpose_matmul(&fwd.a_scale).scaled(two);
    for i in 0..m_ind {
        for j in 0..m_ind {
            scale_bar[(i, j)] = if j > i {
                T::zero()
            } else {
                scale_bar[(i, j)] - fwd.scale[(i, j)]
            };
        }
        scale_bar[(i, i)] = scale_bar[(i, i)] + fwd.scale[(i, i)].recip();
    }
    let raw = model.variational.scale_raw();
    let mut scale_raw_bar = Vec::with_capacity(m_ind * (m_ind + 1) / 2);
    for i in 0..m_ind {
        for j in 0..i {
            scale_raw_bar.push(scale_bar[(i, j)]);
        }
        scale_raw_bar.push(scale_bar[(i, i)] * raw[(i, i)].sigmoid());
    }

    // A = Yᵀ, K_uf = L_uu Y
    let y_bar = a_bar.transpose();
    let kuf_bar = solve_lower_transposed(&fwd.lu, &y_bar);
    let lu_bar = kuf_bar.matmul_transposed(&fwd.y).scaled(-T::one());
    let kuu_bar = cholesky_adjoint(&fwd.lu, &lu_bar);

    let blocks = &fwd.blocks;
    let kernel = &model.kernel;
    let mut kgrad = KernelGradient::zeros(kernel.dim());
    // jitter = c · ν
    kgrad.log_variance = kgrad.log_variance + kuu_bar.trace() * fwd.jitter;

    // K_uu[(p,q),(p',q')] = Kzz[p,p'] Kzz[q,q'] + Kzz[p,q'] Kzz[q,p']
    let ind_edges = model.inducing.edges();
    let kzz = &blocks.kzz;
    let n_ind_nodes = kzz.rows();
    let mut kzz_bar = Matrix::zeros(n_ind_nodes, n_ind_nodes);
    for (a, ea) in ind_edges.iter().enumerate() {
        let (p, q) = ea.nodes();
        for (b, eb) in ind_edges.iter().enumerate() {
            let g = kuu_bar[(a, b)];
            if g == T::zero() {
                continue;
            }
            let (pp, qq) = eb.nodes();
            kzz_bar[(p, pp)] = kzz_bar[(p, pp)] + g * kzz[(q, qq)];
            kzz_bar[(q, qq)] = kzz_bar[(q, qq)] + g * kzz[(p, pp)];
            kzz_bar[(p, qq)] = kzz_bar[(p, qq)] + g * kzz[(q, pp)];
            kzz_bar[(q, pp)] = kzz_bar[(q, pp)] + g * kzz[(p, qq)];
        }
    }
    let z = model.inducing.features();
    let mut z_bar = Matrix::zeros(z.rows(), z.dim());
    let mut z_bar_right = Matrix::zeros(z.rows(), z.dim());
    rbf_ard_adjoint(
        kernel,
        z,
        z,
        kzz,
        &kzz_bar,
        &mut kgrad,
        Some(&mut z_bar),
        Some(&mut z_bar_right),
    );
    z_bar.add_assign(&z_bar_right);

    // K_fu[b,(p,q)] = Q[i,p] Q[j,q] + Q[i,q] Q[j,p]
    let kfu_bar = kuf_bar.transpose();
    let q = &blocks.q;
    let mut q_bar = Matrix::zeros(q.rows(), q.cols());
    for (b, &(ri, rj)) in blocks.pair_rows.iter().enumerate() {
        for (c, e) in ind_edges.iter().enumerate() {
            let g = kfu_bar[(b, c)];
            if g == T::zero() {
                continue;
            }
            let (p, qq) = e.nodes();
            q_bar[(ri, p)] = q_bar[(ri, p)] + g * q[(rj, qq)];
            q_bar[(rj, qq)] = q_bar[(rj, qq)] + g * q[(ri, p)];
            q_bar[(ri, qq)] = q_bar[(ri, qq)] + g * q[(rj, p)];
            q_bar[(rj, p)] = q_bar[(rj, p)] + g * q[(ri, qq)];
        }
    }
    let r = blocks.conv.rows();
    // Q = R K_UZ
    let mut r_bar = q_bar.matmul_transposed(&blocks.k_support_z);
    let kuz_bar = r.transpose_matmul(&q_bar);
    rbf_ard_adjoint(
        kernel,
        &blocks.support_features,
        z,
        &blocks.k_support_z,
        &kuz_bar,
        &mut kgrad,
        None,
        Some(&mut z_bar),
    );

    // c_b = K̂_ii K̂_jj + K̂_ij², K̂ = R K_UU Rᵀ
    let n_seeds = r.rows();
    let mut h_bar = Matrix::zeros(n_seeds, n_seeds);
    for (b, &(ri, rj)) in blocks.pair_rows.iter().enumerate() {
        let g = var_bar[b];
        if g == T::zero() {
            continue;
        }
        let (kii, kjj, kij) = blocks.node_cov[b];
        h_bar[(ri, ri)] = h_bar[(ri, ri)] + g * kjj;
        h_bar[(rj, rj)] = h_bar[(rj, rj)] + g * kii;
        h_bar[(ri, rj)] = h_bar[(ri, rj)] + two * g * kij;
    }
    let h_sym = Matrix::from_fn(n_seeds, n_seeds, |i, j| h_bar[(i, j)] + h_bar[(j, i)]);
    r_bar.add_assign(&h_sym.matmul(&blocks.r_k));
    let kuu_node_bar = r.transpose_matmul(&h_bar.matmul(r));
    rbf_ard_adjoint(
        kernel,
        &blocks.support_features,
        &blocks.support_features,
        &blocks.k_support,
        &kuu_node_bar,
        &mut kgrad,
        None,
        None,
    );

    let weight_bar = blocks.conv.weight_gradient(&r_bar);
    let logit_bar: Vec<T> = model
        .convolution
        .weights()
        .iter()
        .zip(weight_bar)
        .map(|(&w, g)| g * w * (T::one() - w))
        .collect();

    let mut flat = Vec::with_capacity(model.parameters().len());
    flat.push(kgrad.log_variance);
    flat.extend(kgrad.log_lengthscales);
    flat.extend(logit_bar);
    flat.extend_from_slice(z_bar.as_slice());
    flat.extend(m_bar);
    flat.extend(scale_raw_bar);
    Ok((elbo, ElboGradient { flat }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::ConvolutionConfig;
    use crate::inducing::InducingStructure;
    use crate::kernel::KernelParams;
    use crate::linalg::Matrix;

    fn instance() -> (
        GraphDomain,
        FeatureMatrix<f64>,
        LinkGpModel<f64>,
        Vec<LabeledPair>,
    ) {
        let g =
            GraphDomain::new(6, [(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3), (2, 3)]).unwrap();
        let x = FeatureMatrix::new(Matrix::from_fn(6, 2, |i, j| {
            ((i * 2 + j) as f64 * 0.37).sin()
        }))
        .unwrap();
        let inducing = InducingStructure::sample(&x, 3, 3, 4).unwrap();
        let mut model = LinkGpModel::new(
            ConvolutionConfig::from_weights(&[0.5, 0.3]).unwrap(),
            KernelParams::new(1.1, &[0.9, 1.6]).unwrap(),
            inducing,
        )
        .unwrap();
        let mut p = model.parameters();
        let n = p.len();
        for (k, v) in p.iter_mut().enumerate().skip(n - 9) {
            *v += 0.1 * ((k * 7) as f64).sin();
        }
        model.set_parameters(&p);
        let pairs = [(0, 1, true), (3, 5, true), (0, 4, false), (1, 5, false)]
            .iter()
            .map(|&(a, b, l)| LabeledPair::new(EdgePair::input(a, b).unwrap(), l))
            .collect();
        (g, x, model, pairs)
    }

    #[test]
    fn gradient_matches_value_function() {
        let (g, x, model, pairs) = instance();
        let gh = GaussHermite::new(20);
        let (elbo, grad) = minibatch_elbo_with_gradient(&model, &g, &x, &pairs, 10, &gh).unwrap();
        assert!((elbo - minibatch_elbo(&model, &g, &x, &pairs, 10, &gh).unwrap()).abs() < 1e-12);
        let theta = model.parameters();
        assert_eq!(grad.flat.len(), theta.len());
        let h = 1e-6;
        for k in 0..theta.len() {
            let eval = |d: f64| {
                let mut t = theta.clone();
                t[k] += d;
                let mut mm = model.clone();
                mm.set_parameters(&t);
                minibatch_elbo(&mm, &g, &x, &pairs, 10, &gh).unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let err = (fd - grad.flat[k]).abs() / fd.abs().max(grad.flat[k].abs()).max(1e-3);
            assert!(err < 1e-5, "param {k}: fd {fd} analytic {}", grad.flat[k]);
        }
    }

    #[test]
    fn empty_batch_rejected() {
        let (g, x, model, _) = instance();
        let gh = GaussHermite::new(5);
        assert!(minibatch_elbo(&model, &g, &x, &[], 4, &gh).is_err());
    }
}
