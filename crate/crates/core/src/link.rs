//! Order-invariant covariance over node pairs,
//! `C((i,j),(i',j')) = K̂_ii' K̂_jj' + K̂_ij' K̂_ji'`, and the batched
//! assembly of the blocks the sparse variational posterior needs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ConvolutionConfig, ConvolvedRows, GraphDomain};
use crate::kernel::{rbf_ard, FeatureMatrix, KernelParams};
use crate::linalg::{dot, Matrix};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    Input,
    Inducing,
}

/// A node pair on either the input graph or the inducing graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EdgePair {
    pub first: usize,
    pub second: usize,
    pub domain: Domain,
}

impl EdgePair {
    /// Keeps the given node order; see [`EdgePair::canonical`].
    pub fn new(first: usize, second: usize, domain: Domain) -> Result<Self> {
        if first == second {
            return Err(Error::InvalidInput(format!(
                "pair ({first}, {second}) is a self-loop"
            )));
        }
        Ok(Self {
            first,
            second,
            domain,
        })
    }

    pub fn input(first: usize, second: usize) -> Result<Self> {
        Self::new(first, second, Domain::Input)
    }

    pub fn inducing(first: usize, second: usize) -> Result<Self> {
        Self::new(first, second, Domain::Inducing)
    }

    pub fn canonical(self) -> Self {
        Self {
            first: self.first.min(self.second),
            second: self.first.max(self.second),
            domain: self.domain,
        }
    }

    pub fn swapped(self) -> Self {
        Self {
            first: self.second,
            second: self.first,
            domain: self.domain,
        }
    }

    pub fn nodes(self) -> (usize, usize) {
        (self.first, self.second)
    }
}

fn check<T: Scalar>(m: &Matrix<T>, rows: usize, cols: usize) -> Result<()> {
    let bad = if rows >= m.rows() {
        Some((rows, m.rows()))
    } else if cols >= m.cols() {
        Some((cols, m.cols()))
    } else {
        None
    };
    match bad {
        Some((index, node_count)) => Err(Error::NodeIndex { index, node_count }),
        None => Ok(()),
    }
}

#[inline]
fn pair_product<T: Scalar>(k: &Matrix<T>, (i, j): (usize, usize), (a, b): (usize, usize)) -> T {
    k[(i, a)] * k[(j, b)] + k[(i, b)] * k[(j, a)]
}

/// Input × input pair covariance from the node-level `K̂`.
pub fn link_cov_input_input<T: Scalar>(khat: &Matrix<T>, e1: EdgePair, e2: EdgePair) -> Result<T> {
    for e in [e1, e2] {
        check(khat, e.first.max(e.second), e.first.max(e.second))?;
    }
    Ok(pair_product(khat, e1.nodes(), e2.nodes()))
}

/// Input × inducing pair covariance from the one-sided convolved `P K_XZ`.
pub fn link_cov_input_inducing<T: Scalar>(
    cross: &Matrix<T>,
    e_in: EdgePair,
    e_ind: EdgePair,
) -> Result<T> {
    check(
        cross,
        e_in.first.max(e_in.second),
        e_ind.first.max(e_ind.second),
    )?;
    Ok(pair_product(cross, e_in.nodes(), e_ind.nodes()))
}

/// Inducing × inducing pair covariance from the unconvolved `K_ZZ`.
pub fn link_cov_inducing_inducing<T: Scalar>(
    kzz: &Matrix<T>,
    e1: EdgePair,
    e2: EdgePair,
) -> Result<T> {
    for e in [e1, e2] {
        check(kzz, e.first.max(e.second), e.first.max(e.second))?;
    }
    Ok(pair_product(kzz, e1.nodes(), e2.nodes()))
}

/// `M̄ × M̄` link Gram over inducing edges (no jitter).
pub fn inducing_link_gram<T: Scalar>(kzz: &Matrix<T>, inducing_edges: &[EdgePair]) -> Matrix<T> {
    let m = inducing_edges.len();
    let mut out = Matrix::zeros(m, m);
    for a in 0..m {
        for b in 0..=a {
            let v = pair_product(kzz, inducing_edges[a].nodes(), inducing_edges[b].nodes());
            out[(a, b)] = v;
            out[(b, a)] = v;
        }
    }
    out
}

/// Everything on the input side of the prior: graph, features, convolution
/// and base kernel.
#[derive(Debug, Clone, Copy)]
pub struct LinkPrior<'a, T> {
    pub graph: &'a GraphDomain,
    pub features: &'a FeatureMatrix<T>,
    pub convolution: &'a ConvolutionConfig<T>,
    pub kernel: &'a KernelParams<T>,
}

/// Which nodes the convolution rows are computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvolutionSupport {
    /// Only the pre-image of the batch endpoints.
    PreImage,
    /// Every node of the graph.
    Full,
}

/// Blocks of the link covariance needed for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkGram<T> {
    /// `B × M̄` batch-by-inducing covariance.
    pub cross: Matrix<T>,
    /// `M̄ × M̄` inducing Gram, without jitter.
    pub inducing: Matrix<T>,
    /// Prior variance of each batch pair.
    pub batch_diag: Vec<T>,
}

/// Node-level intermediates for one batch; kept for the reverse pass.
#[derive(Debug, Clone)]
pub(crate) struct BatchBlocks<T> {
    /// Local seed-row indices of each batch pair.
    pub pair_rows: Vec<(usize, usize)>,
    pub conv: ConvolvedRows<T>,
    pub support_features: FeatureMatrix<T>,
    /// `K(X_U, X_U)`
    pub k_support: Matrix<T>,
    /// `R K(X_U, X_U)` with `R` the convolved seed rows.
    pub r_k: Matrix<T>,
    /// `K(X_U, Z)`
    pub k_support_z: Matrix<T>,
    /// `R K(X_U, Z)`: seed rows of `P K_XZ`.
    pub q: Matrix<T>,
    /// Per pair `(K̂_ii, K̂_jj, K̂_ij)`.
    pub node_cov: Vec<(T, T, T)>,
    pub kzz: Matrix<T>,
    pub gram: LinkGram<T>,
}

pub(crate) fn batch_blocks<T: Scalar>(
    prior: &LinkPrior<'_, T>,
    batch: &[EdgePair],
    z: &FeatureMatrix<T>,
    inducing_edges: &[EdgePair],
    support: ConvolutionSupport,
) -> Result<BatchBlocks<T>> {
    if batch.is_empty() || inducing_edges.is_empty() {
        return Err(Error::InvalidInput(
            "link Gram needs non-empty batch and inducing edges".into(),
        ));
    }
    let n = prior.graph.node_count();
    if prior.features.rows() != n {
        return Err(Error::Dimension {
            context: "feature rows vs graph nodes",
            expected: n,
            actual: prior.features.rows(),
        });
    }
    let mut seed_row = vec![usize::MAX; n];
    let mut seeds = Vec::new();
    let mut pair_rows = Vec::with_capacity(batch.len());
    for e in batch {
        if e.domain != Domain::Input {
            return Err(Error::InvalidInput(
                "batch pair is not on the input graph".into(),
            ));
        }
        let mut rows = [0; 2];
        for (slot, node) in [e.first, e.second].into_iter().enumerate() {
            prior.graph.check_node(node)?;
            if seed_row[node] == usize::MAX {
                seed_row[node] = seeds.len();
                seeds.push(node);
            }
            rows[slot] = seed_row[node];
        }
        pair_rows.push((rows[0], rows[1]));
    }
    for e in inducing_edges {
        if e.domain != Domain::Inducing {
            return Err(Error::InvalidInput(
                "inducing pair is not on the inducing graph".into(),
            ));
        }
        if e.first.max(e.second) >= z.rows() {
            return Err(Error::NodeIndex {
                index: e.first.max(e.second),
                node_count: z.rows(),
            });
        }
    }

    let conv = match support {
        ConvolutionSupport::PreImage => ConvolvedRows::new(prior.graph, prior.convolution, &seeds)?,
        ConvolutionSupport::Full => {
            ConvolvedRows::unrestricted(prior.graph, prior.convolution, &seeds)?
        }
    };
    let support_features = prior.features.select(conv.support());
    let k_support = rbf_ard(prior.kernel, &support_features, &support_features)?;
    let r = conv.rows();
    let r_k = r.matmul(&k_support);
    let k_support_z = rbf_ard(prior.kernel, &support_features, z)?;
    let q = r.matmul(&k_support_z);
    let kzz = rbf_ard(prior.kernel, z, z)?;

    let m = inducing_edges.len();
    let mut cross = Matrix::zeros(batch.len(), m);
    let mut node_cov = Vec::with_capacity(batch.len());
    let mut batch_diag = Vec::with_capacity(batch.len());
    for (b, &(ri, rj)) in pair_rows.iter().enumerate() {
        for (c, ind) in inducing_edges.iter().enumerate() {
            cross[(b, c)] = pair_product(&q, (ri, rj), ind.nodes());
        }
        let kii = dot(r_k.row(ri), r.row(ri));
        let kjj = dot(r_k.row(rj), r.row(rj));
        let kij = dot(r_k.row(ri), r.row(rj));
        node_cov.push((kii, kjj, kij));
        batch_diag.push(kii * kjj + kij * kij);
    }
    let inducing = inducing_link_gram(&kzz, inducing_edges);

    Ok(BatchBlocks {
        pair_rows,
        conv,
        support_features,
        k_support,
        r_k,
        k_support_z,
        q,
        node_cov,
        kzz,
        gram: LinkGram {
            cross,
            inducing,
            batch_diag,
        },
    })
}

/// Batch-by-inducing covariance, inducing Gram and the batch prior diagonal.
pub fn assemble_link_gram<T: Scalar>(
    prior: &LinkPrior<'_, T>,
    batch: &[EdgePair],
    inducing_features: &FeatureMatrix<T>,
    inducing_edges: &[EdgePair],
    support: ConvolutionSupport,
) -> Result<LinkGram<T>> {
    Ok(batch_blocks(prior, batch, inducing_features, inducing_edges, support)?.gram)
}
