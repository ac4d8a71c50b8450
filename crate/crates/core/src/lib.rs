//! Graph-convolutional Gaussian processes for link prediction.
//!
//! Node features pass through an RBF kernel that is smoothed by `K`
//! interpolated graph convolutions. Links get a symmetric product kernel
//! over their endpoints, and a sparse variational posterior over inducing
//! edges drawn from a small random graph is trained with minibatch Adam.
//!
//! Everything numerical is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision for ordinary use.

pub mod analysis;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod graph;
pub mod inducing;
pub mod kernel;
pub mod linalg;
pub mod link;
pub mod metrics;
pub mod scalar;
pub mod svgp;

pub use checkpoint::Checkpoint;
pub use data::{LabeledPair, LinkDataset, NodeIds};
pub use error::{Error, ErrorKind, Result};
pub use graph::{ConvolutionConfig, GraphDomain};
pub use inducing::InducingStructure;
pub use kernel::{FeatureMatrix, KernelParams};
pub use linalg::Matrix;
pub use link::{Domain, EdgePair};
pub use scalar::Scalar;
pub use svgp::{LinkGpModel, LinkScoring, TrainingConfig, VariationalState};

pub type Model = LinkGpModel<f64>;
pub type Model32 = LinkGpModel<f32>;
pub type Features = FeatureMatrix<f64>;
pub type Features32 = FeatureMatrix<f32>;
pub type Kernel = KernelParams<f64>;
pub type Convolution = ConvolutionConfig<f64>;
pub type Inducing = InducingStructure<f64>;
pub type DenseMatrix = Matrix<f64>;
