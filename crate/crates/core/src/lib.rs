//! Part-wise mesh generation with semi-autoregressive masked discrete diffusion.
//!
//! A mesh is segmented into edge-connected parts, each part is serialized
//! into a fixed-length token block, and a transformer denoises one block at a
//! time while cross-attending to point-cloud features of the whole shape and
//! of the part being generated.

pub mod autodiff;
pub mod conditioning;
pub mod diffusion;
pub mod error;
pub mod mesh;
pub mod metrics;
pub mod params;
pub mod part_graph;
pub mod pipeline;
pub mod scalar;
pub mod tensor;
pub mod tokenizer;
pub mod transformer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Mesh32 = mesh::TriangleMesh<f32>;
pub type Mesh64 = mesh::TriangleMesh<f64>;
pub type Model32 = transformer::PartDiffusionModel<f32>;
pub type Model64 = transformer::PartDiffusionModel<f64>;
pub type Cloud32 = conditioning::LabeledPointCloud<f32>;
pub type Cloud64 = conditioning::LabeledPointCloud<f64>;
