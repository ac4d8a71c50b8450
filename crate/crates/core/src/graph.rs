//! Undirected graphs and the structural operators built on them: the
//! symmetric-normalised convolution matrix `S̃ = D̃^{-1/2} (A + I) D̃^{-1/2}`,
//! interpolated convolution products, geodesic classes and pre-image sets.

use std::collections::{BTreeSet, VecDeque};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, SparseMatrix};
use crate::scalar::Scalar;

/// Immutable simple undirected graph over nodes `0..node_count`.
#[derive(Debug, Clone)]
pub struct GraphDomain {
    node_count: usize,
    /// Canonical `(a, b)` with `a < b`, sorted.
    edges: Vec<(usize, usize)>,
    /// Sorted neighbour lists.
    neighbors: Vec<Vec<usize>>,
    convolution: OnceLock<SparseMatrix<f64>>,
}

impl PartialEq for GraphDomain {
    fn eq(&self, other: &Self) -> bool {
        self.node_count == other.node_count && self.edges == other.edges
    }
}

impl GraphDomain {
    /// Builds a graph, rejecting self-loops, duplicate edges (in either
    /// orientation) and out-of-range endpoints.
    pub fn new(node_count: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::InvalidGraph("graph has no nodes".into()));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            for idx in [a, b] {
                if idx >= node_count {
                    return Err(Error::NodeIndex {
                        index: idx,
                        node_count,
                    });
                }
            }
            if a == b {
                return Err(Error::InvalidGraph(format!("self-loop on node {a}")));
            }
            if !set.insert((a.min(b), a.max(b))) {
                return Err(Error::InvalidGraph(format!("duplicate edge {a}-{b}")));
            }
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut neighbors = vec![Vec::new(); node_count];
        for &(a, b) in &edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for n in &mut neighbors {
            n.sort_unstable();
        }
        Ok(Self {
            node_count,
            edges,
            neighbors,
            convolution: OnceLock::new(),
        })
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        self.node_count
    }

    #[inline]
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Edges in canonical sorted order.
    #[inline]
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    #[inline]
    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.neighbors.iter().map(Vec::len).collect()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        a < self.node_count && self.neighbors[a].binary_search(&b).is_ok()
    }

    pub fn check_node(&self, i: usize) -> Result<()> {
        if i < self.node_count {
            Ok(())
        } else {
            Err(Error::NodeIndex {
                index: i,
                node_count: self.node_count,
            })
        }
    }

    pub fn adjacency_matrix<T: Scalar>(&self) -> Matrix<T> {
        let mut a = Matrix::zeros(self.node_count, self.node_count);
        for &(i, j) in &self.edges {
            a[(i, j)] = T::one();
            a[(j, i)] = T::one();
        }
        a
    }

    /// `L = D - A`
    pub fn laplacian<T: Scalar>(&self) -> Matrix<T> {
        let mut l = self.adjacency_matrix::<T>().scaled(-T::one());
        for i in 0..self.node_count {
            l[(i, i)] = T::of_usize(self.degree(i));
        }
        l
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.node_count];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &self.neighbors[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == self.node_count
    }

    /// BFS distances from `source`; `None` for unreachable nodes.
    pub fn bfs_distances(&self, source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.node_count];
        dist[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap();
            for &v in &self.neighbors[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    fn convolution_f64(&self) -> &SparseMatrix<f64> {
        self.convolution.get_or_init(|| {
            let deg: Vec<f64> = self
                .neighbors
                .iter()
                .map(|n| (n.len() + 1) as f64)
                .collect();
            let rows = (0..self.node_count)
                .map(|i| {
                    let mut cols: Vec<usize> = self.neighbors[i].clone();
                    let pos = cols.binary_search(&i).unwrap_err();
                    cols.insert(pos, i);
                    cols.into_iter()
                        .map(|j| (j, 1.0 / (deg[i] * deg[j]).sqrt()))
                        .collect()
                })
                .collect();
            SparseMatrix::from_row_lists(self.node_count, rows)
        })
    }

    /// `S̃ = D̃^{-1/2} Ã D̃^{-1/2}` with `Ã = A + I`, in sparse form.
    pub fn normalized_convolution<T: Scalar>(&self) -> SparseMatrix<T> {
        self.convolution_f64().map(T::of)
    }

    /// Row-stochastic `D̃^{-1} Ã`.
    pub fn asymmetric_convolution<T: Scalar>(&self) -> SparseMatrix<T> {
        let rows = (0..self.node_count)
            .map(|i| {
                let w = T::one() / T::of_usize(self.degree(i) + 1);
                let mut cols: Vec<usize> = self.neighbors[i].clone();
                let pos = cols.binary_search(&i).unwrap_err();
                cols.insert(pos, i);
                cols.into_iter().map(|j| (j, w)).collect()
            })
            .collect();
        SparseMatrix::from_row_lists(self.node_count, rows)
    }

    /// Disjoint node sets at BFS distance exactly `1..=max_d` from `center`.
    pub fn geodesic_distance_classes(
        &self,
        center: usize,
        max_d: usize,
    ) -> Result<Vec<Vec<usize>>> {
        self.check_node(center)?;
        let mut classes = vec![Vec::new(); max_d];
        for (node, d) in self.bfs_distances(center).into_iter().enumerate() {
            if let Some(d) = d {
                if d >= 1 && d <= max_d {
                    classes[d - 1].push(node);
                }
            }
        }
        Ok(classes)
    }

    /// Union of the closed `depth`-hop neighbourhoods of `seeds`, sorted.
    pub fn preimage_nodes(&self, seeds: &[usize], depth: usize) -> Result<Vec<usize>> {
        let mut dist = vec![usize::MAX; self.node_count];
        let mut queue = VecDeque::new();
        for &s in seeds {
            self.check_node(s)?;
            if dist[s] != 0 {
                dist[s] = 0;
                queue.push_back(s);
            }
        }
        while let Some(u) = queue.pop_front() {
            if dist[u] == depth {
                continue;
            }
            for &v in &self.neighbors[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        Ok((0..self.node_count)
            .filter(|&i| dist[i] != usize::MAX)
            .collect())
    }

    /// Dirichlet energy `½ Σ_ij a_ij (g_i - g_j)²`, summed over edges.
    pub fn dirichlet_norm<T: Scalar>(&self, signal: &[T]) -> Result<T> {
        if signal.len() != self.node_count {
            return Err(Error::Dimension {
                context: "dirichlet_norm signal",
                expected: self.node_count,
                actual: signal.len(),
            });
        }
        Ok(self
            .edges
            .iter()
            .map(|&(i, j)| {
                let d = signal[i] - signal[j];
                d * d
            })
            .sum())
    }

    /// Dense `P = S̃_1 ⋯ S̃_K` with `S̃_k = λ_k S̃ + (1 - λ_k) I`.
    pub fn interpolated_convolution_product<T: Scalar>(
        &self,
        cfg: &ConvolutionConfig<T>,
    ) -> Matrix<T> {
        let s = self.normalized_convolution::<T>();
        let mut p = Matrix::identity(self.node_count);
        for lambda in cfg.weights() {
            p = interpolate_step(&p, &s, lambda);
        }
        p
    }

    /// `P · v` for a single vector without forming `P`.
    pub fn apply_convolution<T: Scalar>(&self, cfg: &ConvolutionConfig<T>, v: &[T]) -> Vec<T> {
        let s = self.normalized_convolution::<T>();
        let mut out = v.to_vec();
        for lambda in cfg.weights() {
            let sv = s.mul_vec(&out);
            for (o, x) in out.iter_mut().zip(sv) {
                *o = *o + lambda * (x - *o);
            }
        }
        out
    }
}

/// `R ← R + λ (R S̃ - R)`
fn interpolate_step<T: Scalar>(r: &Matrix<T>, s: &SparseMatrix<T>, lambda: T) -> Matrix<T> {
    let rs = s.left_mul_dense(r);
    Matrix::from_fn(r.rows(), r.cols(), |i, j| {
        let x = r[(i, j)];
        x + lambda * (rs[(i, j)] - x)
    })
}

/// Convolution depth and interpolation weights, stored as unconstrained
/// logits so gradient steps keep every `λ_k` inside `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvolutionConfig<T> {
    logits: Vec<T>,
}

impl<T: Scalar> ConvolutionConfig<T> {
    /// `weights` must lie in `[0, 1]`; the endpoints map to infinite logits.
    pub fn from_weights(weights: &[T]) -> Result<Self> {
        if let Some(w) = weights
            .iter()
            .find(|w| !(**w >= T::zero() && **w <= T::one()))
        {
            return Err(Error::InvalidInput(format!(
                "convolution weight {w} outside [0, 1]"
            )));
        }
        Ok(Self {
            logits: weights.iter().map(|w| w.logit()).collect(),
        })
    }

    pub fn from_logits(logits: Vec<T>) -> Self {
        Self { logits }
    }

    /// All weights equal to `lambda`.
    pub fn uniform(depth: usize, lambda: T) -> Result<Self> {
        Self::from_weights(&vec![lambda; depth])
    }

    #[inline]
    pub fn depth(&self) -> usize {
        self.logits.len()
    }

    pub fn logits(&self) -> &[T] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [T] {
        &mut self.logits
    }

    pub fn weights(&self) -> Vec<T> {
        self.logits.iter().map(|&l| l.sigmoid()).collect()
    }
}

/// Rows of `P = S̃_1 ⋯ S̃_K` for a set of seed nodes, computed on the
/// pre-image of the seeds only. Keeps every intermediate stage so the
/// product can be differentiated with respect to the weights.
#[derive(Debug, Clone)]
pub struct ConvolvedRows<T> {
    seeds: Vec<usize>,
    /// Sorted pre-image nodes; the column space of every stage.
    support: Vec<usize>,
    local_conv: SparseMatrix<T>,
    weights: Vec<T>,
    /// `stages[k]` is `E S̃_1 ⋯ S̃_k`; `stages[0]` selects the seeds.
    stages: Vec<Matrix<T>>,
}

impl<T: Scalar> ConvolvedRows<T> {
    /// `seeds` must be distinct.
    pub fn new(graph: &GraphDomain, cfg: &ConvolutionConfig<T>, seeds: &[usize]) -> Result<Self> {
        let support = graph.preimage_nodes(seeds, cfg.depth())?;
        Self::build(graph, cfg, seeds, support)
    }

    /// Same rows computed over every node of the graph.
    pub fn unrestricted(
        graph: &GraphDomain,
        cfg: &ConvolutionConfig<T>,
        seeds: &[usize],
    ) -> Result<Self> {
        for &s in seeds {
            graph.check_node(s)?;
        }
        Self::build(graph, cfg, seeds, (0..graph.node_count()).collect())
    }

    fn build(
        graph: &GraphDomain,
        cfg: &ConvolutionConfig<T>,
        seeds: &[usize],
        support: Vec<usize>,
    ) -> Result<Self> {
        let mut local = vec![usize::MAX; graph.node_count()];
        for (k, &u) in support.iter().enumerate() {
            local[u] = k;
        }
        let full = graph.convolution_f64();
        let rows = support
            .iter()
            .map(|&u| {
                full.row(u)
                    .filter(|&(v, _)| local[v] != usize::MAX)
                    .map(|(v, w)| (local[v], T::of(w)))
                    .collect()
            })
            .collect();
        let local_conv = SparseMatrix::from_row_lists(support.len(), rows);

        let mut first = Matrix::zeros(seeds.len(), support.len());
        for (r, &s) in seeds.iter().enumerate() {
            if local[s] == usize::MAX {
                return Err(Error::InvalidInput(format!("seed {s} outside support")));
            }
            first[(r, local[s])] = T::one();
        }
        let weights = cfg.weights();
        let mut stages = Vec::with_capacity(weights.len() + 1);
        stages.push(first);
        for &lambda in &weights {
            let next = interpolate_step(stages.last().unwrap(), &local_conv, lambda);
            stages.push(next);
        }
        Ok(Self {
            seeds: seeds.to_vec(),
            support,
            local_conv,
            weights,
            stages,
        })
    }

    pub fn seeds(&self) -> &[usize] {
        &self.seeds
    }

    /// Global node ids indexing the columns of [`ConvolvedRows::rows`].
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    /// `seeds × support` block of `P`.
    pub fn rows(&self) -> &Matrix<T> {
        self.stages.last().unwrap()
    }

    /// Back-propagates `∂f/∂P_rows` to `∂f/∂λ_k` (constrained weights).
    pub fn weight_gradient(&self, rows_bar: &Matrix<T>) -> Vec<T> {
        let depth = self.weights.len();
        let mut grad = vec![T::zero(); depth];
        let mut bar = rows_bar.clone();
        for k in (0..depth).rev() {
            let prev = &self.stages[k];
            let prev_s = self.local_conv.left_mul_dense(prev);
            grad[k] = bar
                .as_slice()
                .iter()
                .zip(prev_s.as_slice().iter().zip(prev.as_slice()))
                .fold(T::zero(), |g, (&b, (&ps, &p))| g + b * (ps - p));
            // S̃ restricted to the support is symmetric
            bar = interpolate_step(&bar, &self.local_conv, self.weights[k]);
        }
        grad
    }
}
