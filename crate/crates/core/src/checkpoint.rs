//! Versioned JSON snapshot of a trained model.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::NodeIds;
use crate::error::{Error, Result};
use crate::graph::{ConvolutionConfig, GraphDomain};
use crate::inducing::InducingStructure;
use crate::kernel::{FeatureMatrix, KernelParams};
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::svgp::{LinkGpModel, TrainingConfig, VariationalState};

pub const FORMAT_VERSION: u32 = 1;

/// Node and edge counts plus a SHA-256 of the sorted edge list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphFingerprint {
    pub nodes: usize,
    pub edges: usize,
    pub edge_hash: String,
}

impl GraphFingerprint {
    pub fn of(g: &GraphDomain) -> Self {
        let mut hasher = Sha256::new();
        hasher.update((g.node_count() as u64).to_le_bytes());
        for &(a, b) in g.edges() {
            hasher.update((a as u64).to_le_bytes());
            hasher.update((b as u64).to_le_bytes());
        }
        Self {
            nodes: g.node_count(),
            edges: g.edge_count(),
            edge_hash: hex::encode(hasher.finalize()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvolutionRecord {
    pub logits: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelRecord {
    pub log_variance: f64,
    pub log_lengthscales: Vec<f64>,
    pub variance: f64,
    pub lengthscales: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InducingRecord {
    pub nodes: usize,
    pub edges: Vec<[usize; 2]>,
    pub features: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalRecord {
    /// Whitened mean.
    pub mean: Vec<f64>,
    /// Lower triangle row by row, diagonal before the softplus.
    pub scale_unconstrained: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub node_ids: Vec<String>,
    pub graph: GraphFingerprint,
    pub convolution: ConvolutionRecord,
    pub kernel: KernelRecord,
    pub inducing: InducingRecord,
    pub variational: VariationalRecord,
    pub training: TrainingConfig,
    pub final_elbo: Option<f64>,
    pub seed: u64,
}

fn to_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

fn from_f64<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::of(x)).collect()
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(
        model: &LinkGpModel<T>,
        ids: &NodeIds,
        graph: &GraphDomain,
        training: &TrainingConfig,
        final_elbo: Option<T>,
        seed: u64,
    ) -> Self {
        let z = model.inducing.features();
        Self {
            format_version: FORMAT_VERSION,
            node_ids: ids.tokens().to_vec(),
            graph: GraphFingerprint::of(graph),
            convolution: ConvolutionRecord {
                logits: to_f64(model.convolution.logits()),
                weights: to_f64(&model.convolution.weights()),
            },
            kernel: KernelRecord {
                log_variance: model.kernel.log_variance().as_f64(),
                log_lengthscales: to_f64(model.kernel.log_lengthscales()),
                variance: model.kernel.variance().as_f64(),
                lengthscales: to_f64(&model.kernel.lengthscales()),
            },
            inducing: InducingRecord {
                nodes: model.inducing.graph().node_count(),
                edges: model
                    .inducing
                    .graph()
                    .edges()
                    .iter()
                    .map(|&(a, b)| [a, b])
                    .collect(),
                features: (0..z.rows()).map(|i| to_f64(z.row(i))).collect(),
            },
            variational: VariationalRecord {
                mean: to_f64(model.variational.mean()),
                scale_unconstrained: to_f64(&model.variational.packed_unconstrained_scale()),
            },
            training: training.clone(),
            final_elbo: final_elbo.map(|e| e.as_f64()),
            seed,
        }
    }

    fn check_finite(&self) -> Result<()> {
        let groups: [(&str, Vec<f64>); 5] = [
            ("convolution logits", self.convolution.logits.clone()),
            (
                "kernel",
                std::iter::once(self.kernel.log_variance)
                    .chain(self.kernel.log_lengthscales.iter().copied())
                    .collect(),
            ),
            ("inducing features", self.inducing.features.concat()),
            ("variational mean", self.variational.mean.clone()),
            (
                "variational scale",
                self.variational.scale_unconstrained.clone(),
            ),
        ];
        for (name, values) in groups {
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Checkpoint(format!("non-finite values in {name}")));
            }
        }
        Ok(())
    }

    pub fn node_ids(&self) -> Result<NodeIds> {
        NodeIds::from_tokens(self.node_ids.clone())
    }

    /// Errors unless `graph` has the fingerprint recorded at training time.
    pub fn verify_graph(&self, graph: &GraphDomain) -> Result<()> {
        let actual = GraphFingerprint::of(graph);
        if actual != self.graph {
            return Err(Error::Checkpoint(format!(
                "graph fingerprint mismatch: checkpoint has {} nodes / {} edges ({}), graph has {} nodes / {} edges ({})",
                self.graph.nodes, self.graph.edges, self.graph.edge_hash, actual.nodes, actual.edges, actual.edge_hash
            )));
        }
        Ok(())
    }

    pub fn to_model<T: Scalar>(&self) -> Result<LinkGpModel<T>> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        self.check_finite()?;
        let convolution = ConvolutionConfig::from_logits(from_f64(&self.convolution.logits));
        let kernel = KernelParams::from_unconstrained(
            T::of(self.kernel.log_variance),
            from_f64(&self.kernel.log_lengthscales),
        );
        let graph = GraphDomain::new(
            self.inducing.nodes,
            self.inducing.edges.iter().map(|&[a, b]| (a, b)),
        )?;
        let rows: Vec<Vec<T>> = self.inducing.features.iter().map(|r| from_f64(r)).collect();
        let features = FeatureMatrix::new(Matrix::from_rows(&rows)?)?;
        let inducing = InducingStructure::new(graph, features)?;
        let mut model = LinkGpModel::new(convolution, kernel, inducing)?;
        let variational = VariationalState::from_unconstrained(
            from_f64(&self.variational.mean),
            &from_f64::<T>(&self.variational.scale_unconstrained),
        )?;
        if variational.size() != model.variational.size() {
            return Err(Error::Checkpoint(format!(
                "variational size {} does not match {} inducing edges",
                variational.size(),
                model.variational.size()
            )));
        }
        model.variational = variational;
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::link::EdgePair;

    fn setup() -> (GraphDomain, FeatureMatrix<f64>, LinkGpModel<f64>) {
        let g =
            GraphDomain::new(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5), (1, 4)]).unwrap();
        let x = FeatureMatrix::from_rows(
            &(0..6)
                .map(|i| vec![(i as f64).sin(), (i as f64 * 0.7).cos()])
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let inducing = InducingStructure::sample(&x, 3, 2, 4).unwrap();
        let mut model = LinkGpModel::new(
            ConvolutionConfig::from_weights(&[0.5, 0.3]).unwrap(),
            KernelParams::new(1.3, &[0.9, 1.7]).unwrap(),
            inducing,
        )
        .unwrap();
        let mut p = model.parameters();
        for (k, v) in p.iter_mut().enumerate() {
            *v += 0.01 * (k as f64).sin();
        }
        model.set_parameters(&p);
        (g, x, model)
    }

    #[test]
    fn round_trip_reproduces_predictions_exactly() {
        let (g, x, model) = setup();
        let ids = NodeIds::from_tokens((0..6).map(|i| format!("v{i}")).collect()).unwrap();
        let ckpt =
            Checkpoint::from_model(&model, &ids, &g, &TrainingConfig::default(), Some(-1.25), 9);
        let back = Checkpoint::from_json(&ckpt.to_json().unwrap()).unwrap();
        assert_eq!(back, ckpt);
        let restored: LinkGpModel<f64> = back.to_model().unwrap();
        assert_eq!(restored.parameters(), model.parameters());
        let pairs = [
            EdgePair::input(0, 3).unwrap(),
            EdgePair::input(2, 5).unwrap(),
        ];
        let a = model.predict(&g, &x, &pairs).unwrap();
        let b = restored.predict(&g, &x, &pairs).unwrap();
        assert_eq!(a, b);
        back.verify_graph(&g).unwrap();
    }

    #[test]
    fn rejects_mismatches_and_non_finite() {
        let (g, _, model) = setup();
        let ids = NodeIds::from_tokens((0..6).map(|i| i.to_string()).collect()).unwrap();
        let ckpt = Checkpoint::from_model(&model, &ids, &g, &TrainingConfig::default(), None, 0);
        let other = GraphDomain::new(6, [(0, 1), (1, 2)]).unwrap();
        assert!(ckpt.verify_graph(&other).is_err());

        let mut bad = ckpt.clone();
        bad.variational.mean[0] = f64::NAN;
        assert!(bad.to_model::<f64>().is_err());
        let mut bad = ckpt.clone();
        bad.format_version = 99;
        assert!(bad.to_model::<f64>().is_err());
        assert!(Checkpoint::from_json("{").is_err());
    }

    #[test]
    fn fingerprint_depends_on_edges() {
        let a = GraphDomain::new(3, [(0, 1)]).unwrap();
        let b = GraphDomain::new(3, [(1, 2)]).unwrap();
        assert_ne!(
            GraphFingerprint::of(&a).edge_hash,
            GraphFingerprint::of(&b).edge_hash
        );
        assert_eq!(GraphFingerprint::of(&a), GraphFingerprint::of(&a.clone()));
    }
}
