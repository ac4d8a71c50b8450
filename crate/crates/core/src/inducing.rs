//! Random connected inducing graphs and the initial placement of the
//! inducing node features.

use std::collections::HashSet;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::graph::GraphDomain;
use crate::kernel::FeatureMatrix;
use crate::linalg::Matrix;
use crate::link::{Domain, EdgePair};
use crate::scalar::Scalar;

/// Inducing graph, its trainable node features `Z` and the inducing edges.
#[derive(Debug, Clone, PartialEq)]
pub struct InducingStructure<T> {
    graph: GraphDomain,
    features: FeatureMatrix<T>,
    edges: Vec<EdgePair>,
}

impl<T: Scalar> InducingStructure<T> {
    pub fn new(graph: GraphDomain, features: FeatureMatrix<T>) -> Result<Self> {
        if !graph.is_connected() {
            return Err(Error::InvalidGraph(
                "inducing graph is not connected".into(),
            ));
        }
        if features.rows() != graph.node_count() {
            return Err(Error::Dimension {
                context: "inducing features vs inducing nodes",
                expected: graph.node_count(),
                actual: features.rows(),
            });
        }
        let edges = graph
            .edges()
            .iter()
            .map(|&(a, b)| EdgePair::new(a, b, Domain::Inducing))
            .collect::<Result<_>>()?;
        Ok(Self {
            graph,
            features,
            edges,
        })
    }

    /// Samples the graph and initialises features from `x`.
    pub fn sample(x: &FeatureMatrix<T>, n_nodes: usize, n_edges: usize, seed: u64) -> Result<Self> {
        let graph = sample_connected_er(n_nodes, n_edges, seed)?;
        let features = initialize_inducing_features(x, n_nodes, seed.wrapping_add(1), T::of(0.01))?;
        Self::new(graph, features)
    }

    pub fn graph(&self) -> &GraphDomain {
        &self.graph
    }

    pub fn features(&self) -> &FeatureMatrix<T> {
        &self.features
    }

    pub fn features_mut(&mut self) -> &mut FeatureMatrix<T> {
        &mut self.features
    }

    /// Inducing edges in canonical order; `M̄ = Ē`.
    pub fn edges(&self) -> &[EdgePair] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }
}

/// Connected simple graph with exactly `n_nodes` nodes and `n_edges` edges:
/// a uniform random spanning tree (Aldous–Broder walk on the complete
/// graph) plus uniformly chosen extra edges.
pub fn sample_connected_er(n_nodes: usize, n_edges: usize, seed: u64) -> Result<GraphDomain> {
    if n_nodes < 2 {
        return Err(Error::Infeasible(format!(
            "inducing graph needs at least 2 nodes, got {n_nodes}"
        )));
    }
    let max_edges = n_nodes * (n_nodes - 1) / 2;
    if n_edges < n_nodes - 1 || n_edges > max_edges {
        return Err(Error::Infeasible(format!(
            "{n_edges} edges cannot form a connected simple graph on {n_nodes} nodes (need {}..={max_edges})",
            n_nodes - 1
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut visited = vec![false; n_nodes];
    let mut current = rng.random_range(0..n_nodes);
    visited[current] = true;
    let mut remaining = n_nodes - 1;
    let mut edges = HashSet::with_capacity(n_edges);
    let mut ordered = Vec::with_capacity(n_edges);
    while remaining > 0 {
        // uniform step to one of the other nodes
        let mut next = rng.random_range(0..n_nodes - 1);
        if next >= current {
            next += 1;
        }
        if !visited[next] {
            visited[next] = true;
            remaining -= 1;
            let e = (current.min(next), current.max(next));
            edges.insert(e);
            ordered.push(e);
        }
        current = next;
    }

    let extra = n_edges - (n_nodes - 1);
    if extra > 0 {
        if 2 * n_edges <= max_edges {
            while ordered.len() < n_edges {
                let a = rng.random_range(0..n_nodes);
                let b = rng.random_range(0..n_nodes);
                if a == b {
                    continue;
                }
                let e = (a.min(b), a.max(b));
                if edges.insert(e) {
                    ordered.push(e);
                }
            }
        } else {
            let candidates: Vec<(usize, usize)> = (0..n_nodes)
                .flat_map(|a| ((a + 1)..n_nodes).map(move |b| (a, b)))
                .filter(|e| !edges.contains(e))
                .collect();
            for k in index::sample(&mut rng, candidates.len(), extra) {
                ordered.push(candidates[k]);
            }
        }
    }
    GraphDomain::new(n_nodes, ordered)
}

/// Default sizes `N̄ = ⌊N/2⌋` (at least 2) and `Ē = 2N̄`, clamped to the
/// feasible range for a connected simple graph.
pub fn default_inducing_sizes(input: &GraphDomain) -> (usize, usize) {
    let n = (input.node_count() / 2).max(2);
    let max_edges = n * (n - 1) / 2;
    let e = (2 * n).min(max_edges).max(n - 1);
    (n, e)
}

/// `n_rows` rows drawn from `x` (without replacement when possible), each
/// perturbed by Gaussian noise of `noise_scale` times the per-dimension
/// standard deviation of `x`.
pub fn initialize_inducing_features<T: Scalar>(
    x: &FeatureMatrix<T>,
    n_rows: usize,
    seed: u64,
    noise_scale: T,
) -> Result<FeatureMatrix<T>> {
    let n = x.rows();
    if n == 0 {
        return Err(Error::InvalidInput(
            "cannot initialise inducing features from empty features".into(),
        ));
    }
    let d = x.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<usize> = if n_rows <= n {
        index::sample(&mut rng, n, n_rows).into_vec()
    } else {
        (0..n_rows).map(|_| rng.random_range(0..n)).collect()
    };
    let nf = T::of_usize(n);
    let std: Vec<T> = (0..d)
        .map(|c| {
            let mean = (0..n).map(|i| x.matrix()[(i, c)]).sum::<T>() / nf;
            let var = (0..n)
                .map(|i| {
                    let v = x.matrix()[(i, c)] - mean;
                    v * v
                })
                .sum::<T>()
                / nf;
            var.sqrt()
        })
        .collect();
    let mut z = Matrix::zeros(n_rows, d);
    for (r, &src) in rows.iter().enumerate() {
        for c in 0..d {
            let eps: f64 = StandardNormal.sample(&mut rng);
            z[(r, c)] = x.matrix()[(src, c)] + noise_scale * std[c] * T::of(eps);
        }
    }
    FeatureMatrix::new(z)
}
