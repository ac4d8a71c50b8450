//! Edge-list and feature files, the train/test split with negative
//! sampling, and dataset statistics.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphDomain;
use crate::kernel::FeatureMatrix;
use crate::linalg::Matrix;
use crate::link::EdgePair;
use crate::scalar::Scalar;

/// A node pair on the input graph with its link label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LabeledPair {
    pub pair: EdgePair,
    pub label: bool,
}

impl LabeledPair {
    pub fn new(pair: EdgePair, label: bool) -> Self {
        Self { pair, label }
    }
}

/// Node tokens in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NodeIds {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl NodeIds {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut ids = Self::default();
        for t in tokens {
            if ids.index.contains_key(&t) {
                return Err(Error::InvalidInput(format!("duplicate node token `{t}`")));
            }
            ids.intern(&t);
        }
        Ok(ids)
    }

    fn intern(&mut self, token: &str) -> usize {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        let i = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), i);
        i
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> &str {
        &self.tokens[index]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Parses an edge list: two whitespace-separated tokens per line, `#`
/// comments. Self-loops and duplicate edges are errors.
pub fn parse_edge_list(text: &str, source: &str) -> Result<(NodeIds, GraphDomain)> {
    let mut ids = NodeIds::default();
    let mut seen = HashSet::new();
    let mut edges = Vec::new();
    let err = |line: usize, message: String| Error::Parse {
        path: source.to_string(),
        line,
        message,
    };
    for (line, content) in content_lines(text) {
        let tokens: Vec<&str> = content.split_whitespace().collect();
        if tokens.len() != 2 {
            return Err(err(
                line,
                format!("expected 2 node tokens, found {}", tokens.len()),
            ));
        }
        if tokens[0] == tokens[1] {
            return Err(err(line, format!("self-loop on `{}`", tokens[0])));
        }
        let a = ids.intern(tokens[0]);
        let b = ids.intern(tokens[1]);
        if !seen.insert((a.min(b), a.max(b))) {
            return Err(err(
                line,
                format!("duplicate edge `{}` - `{}`", tokens[0], tokens[1]),
            ));
        }
        edges.push((a, b));
    }
    if ids.is_empty() {
        return Err(Error::InvalidGraph(format!("{source}: no edges")));
    }
    let graph = GraphDomain::new(ids.len(), edges)?;
    Ok((ids, graph))
}

pub fn read_edge_list(path: impl AsRef<Path>) -> Result<(NodeIds, GraphDomain)> {
    let path = path.as_ref();
    parse_edge_list(&std::fs::read_to_string(path)?, &path.display().to_string())
}

/// Parses a feature file: node token followed by `D` floats per line, with
/// `D` fixed by the first line. Every node in `ids` needs exactly one row.
pub fn parse_features<T: Scalar>(
    text: &str,
    source: &str,
    ids: &NodeIds,
) -> Result<FeatureMatrix<T>> {
    let err = |line: usize, message: String| Error::Parse {
        path: source.to_string(),
        line,
        message,
    };
    let mut dim = None;
    let mut rows: Vec<Option<Vec<T>>> = vec![None; ids.len()];
    for (line, content) in content_lines(text) {
        let mut tokens = content.split_whitespace();
        let token = tokens.next().unwrap_or_default();
        let values = tokens
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .map(T::of)
                    .ok_or_else(|| err(line, format!("`{t}` is not a finite number")))
            })
            .collect::<Result<Vec<T>>>()?;
        let d = *dim.get_or_insert(values.len());
        if d == 0 {
            return Err(err(line, "no feature values".into()));
        }
        if values.len() != d {
            return Err(err(
                line,
                format!("expected {d} feature values, found {}", values.len()),
            ));
        }
        let idx = ids
            .get(token)
            .ok_or_else(|| err(line, format!("node `{token}` is not in the graph")))?;
        if rows[idx].replace(values).is_some() {
            return Err(err(line, format!("duplicate features for node `{token}`")));
        }
    }
    let d = dim.ok_or_else(|| err(0, "no feature rows".into()))?;
    let mut m = Matrix::zeros(ids.len(), d);
    for (i, row) in rows.into_iter().enumerate() {
        let row = row.ok_or_else(|| {
            Error::InvalidInput(format!(
                "{source}: missing features for node `{}`",
                ids.token(i)
            ))
        })?;
        m.row_mut(i).copy_from_slice(&row);
    }
    FeatureMatrix::new(m)
}

pub fn read_features<T: Scalar>(path: impl AsRef<Path>, ids: &NodeIds) -> Result<FeatureMatrix<T>> {
    let path = path.as_ref();
    parse_features(
        &std::fs::read_to_string(path)?,
        &path.display().to_string(),
        ids,
    )
}

/// Training graph and labelled pairs for both splits.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkDataset {
    /// Full graph minus the test positives.
    pub observed_graph: GraphDomain,
    pub train: Vec<LabeledPair>,
    pub test: Vec<LabeledPair>,
}

impl LinkDataset {
    pub fn test_pairs(&self) -> Vec<EdgePair> {
        self.test.iter().map(|p| p.pair).collect()
    }
}

fn sample_non_edges(
    full: &GraphDomain,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(usize, usize)>> {
    let n = full.node_count();
    let total_pairs = n * n.saturating_sub(1) / 2;
    let available = total_pairs - full.edge_count();
    if count > available {
        return Err(Error::Infeasible(format!(
            "negative sampling needs {count} non-edges but only {available} are available"
        )));
    }
    if 2 * count <= available {
        let mut chosen = HashSet::with_capacity(count);
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            if a == b {
                continue;
            }
            let e = (a.min(b), a.max(b));
            if !full.has_edge(e.0, e.1) && chosen.insert(e) {
                out.push(e);
            }
        }
        Ok(out)
    } else {
        let candidates: Vec<(usize, usize)> = (0..n)
            .flat_map(|a| ((a + 1)..n).map(move |b| (a, b)))
            .filter(|&(a, b)| !full.has_edge(a, b))
            .collect();
        Ok(index::sample(rng, candidates.len(), count)
            .into_iter()
            .map(|k| candidates[k])
            .collect())
    }
}

fn labeled(pairs: &[(usize, usize)], label: bool) -> Result<Vec<LabeledPair>> {
    pairs
        .iter()
        .map(|&(a, b)| Ok(LabeledPair::new(EdgePair::input(a, b)?, label)))
        .collect()
}

/// Holds out `⌈test_fraction · E⌉` random edges, then samples an equal
/// number of non-edges for each split, without replacement across splits.
pub fn split_dataset(full: &GraphDomain, test_fraction: f64, seed: u64) -> Result<LinkDataset> {
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(Error::InvalidInput(format!(
            "test fraction {test_fraction} outside [0, 1]"
        )));
    }
    if full.edge_count() < 10 {
        return Err(Error::Infeasible(format!(
            "splitting needs at least 10 edges, graph has {}",
            full.edge_count()
        )));
    }
    let e = full.edge_count();
    let n_test = ((test_fraction * e as f64).ceil() as usize).min(e);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let test_idx = index::sample(&mut rng, e, n_test).into_vec();
    let mut is_test = vec![false; e];
    for &k in &test_idx {
        is_test[k] = true;
    }
    let test_pos: Vec<(usize, usize)> = test_idx.iter().map(|&k| full.edges()[k]).collect();
    let train_pos: Vec<(usize, usize)> = full
        .edges()
        .iter()
        .zip(&is_test)
        .filter(|(_, &t)| !t)
        .map(|(&edge, _)| edge)
        .collect();

    let negatives = sample_non_edges(full, e, &mut rng)?;
    let (test_neg, train_neg) = negatives.split_at(n_test);

    let observed_graph = GraphDomain::new(full.node_count(), train_pos.iter().copied())?;
    let mut train = labeled(&train_pos, true)?;
    train.extend(labeled(train_neg, false)?);
    let mut test = labeled(&test_pos, true)?;
    test.extend(labeled(test_neg, false)?);
    Ok(LinkDataset {
        observed_graph,
        train,
        test,
    })
}

/// Split description shared between runs, keyed by node tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub format_version: u32,
    pub seed: u64,
    pub test_fraction: f64,
    pub test_positives: Vec<[String; 2]>,
    pub test_negatives: Vec<[String; 2]>,
    pub train_negatives: Vec<[String; 2]>,
}

impl SplitManifest {
    pub const FORMAT_VERSION: u32 = 1;

    pub fn from_dataset(
        ids: &NodeIds,
        dataset: &LinkDataset,
        seed: u64,
        test_fraction: f64,
    ) -> Self {
        let tokens = |pairs: &[LabeledPair], label: bool| -> Vec<[String; 2]> {
            pairs
                .iter()
                .filter(|p| p.label == label)
                .map(|p| {
                    [
                        ids.token(p.pair.first).to_string(),
                        ids.token(p.pair.second).to_string(),
                    ]
                })
                .collect()
        };
        Self {
            format_version: Self::FORMAT_VERSION,
            seed,
            test_fraction,
            test_positives: tokens(&dataset.test, true),
            test_negatives: tokens(&dataset.test, false),
            train_negatives: tokens(&dataset.train, false),
        }
    }

    /// Rebuilds the dataset against the full graph, validating every pair.
    pub fn to_dataset(&self, ids: &NodeIds, full: &GraphDomain) -> Result<LinkDataset> {
        if self.format_version != Self::FORMAT_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported split manifest version {}",
                self.format_version
            )));
        }
        let resolve = |pairs: &[[String; 2]]| -> Result<Vec<(usize, usize)>> {
            pairs
                .iter()
                .map(|[a, b]| {
                    let lookup = |t: &String| {
                        ids.get(t).ok_or_else(|| {
                            Error::InvalidInput(format!("split references unknown node `{t}`"))
                        })
                    };
                    Ok((lookup(a)?, lookup(b)?))
                })
                .collect()
        };
        let test_pos = resolve(&self.test_positives)?;
        let test_neg = resolve(&self.test_negatives)?;
        let train_neg = resolve(&self.train_negatives)?;
        for &(a, b) in &test_pos {
            if !full.has_edge(a, b) {
                return Err(Error::InvalidInput(format!(
                    "test positive `{}`-`{}` is not an edge",
                    ids.token(a),
                    ids.token(b)
                )));
            }
        }
        for &(a, b) in test_neg.iter().chain(&train_neg) {
            if a == b || full.has_edge(a, b) {
                return Err(Error::InvalidInput(format!(
                    "negative pair `{}`-`{}` is an edge or self-loop",
                    ids.token(a),
                    ids.token(b)
                )));
            }
        }
        let held_out: HashSet<(usize, usize)> = test_pos
            .iter()
            .map(|&(a, b)| (a.min(b), a.max(b)))
            .collect();
        let train_pos: Vec<(usize, usize)> = full
            .edges()
            .iter()
            .copied()
            .filter(|e| !held_out.contains(e))
            .collect();
        let observed_graph = GraphDomain::new(full.node_count(), train_pos.iter().copied())?;
        let mut train = labeled(&train_pos, true)?;
        train.extend(labeled(&train_neg, false)?);
        let mut test = labeled(&test_pos, true)?;
        test.extend(labeled(&test_neg, false)?);
        Ok(LinkDataset {
            observed_graph,
            train,
            test,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetStats {
    pub nodes: usize,
    pub edges: usize,
    pub average_degree: f64,
}

pub fn dataset_stats(g: &GraphDomain) -> DatasetStats {
    DatasetStats {
        nodes: g.node_count(),
        edges: g.edge_count(),
        average_degree: 2.0 * g.edge_count() as f64 / g.node_count() as f64,
    }
}
