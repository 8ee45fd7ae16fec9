//! Link prediction with gradient-flow graph neural networks.
//!
//! The crate is organised bottom-up:
//!
//! - [`graph`]: undirected graphs, the normalized adjacency, edge gradients,
//!   Dirichlet energies and homophily statistics;
//! - [`tensor`], [`nn`], [`optim`], [`gradcheck`]: dense/sparse kernels,
//!   layers with hand-written backward passes, Adam, finite-difference checks;
//! - [`model`]: GRAFF-LP and the GCN / MLP baselines;
//! - [`split`], [`synth`], [`bundle`]: edge splits, negative sampling,
//!   synthetic heterophilic graphs and on-disk graph bundles;
//! - [`metrics`]: AUROC, gradient separability and class-mix AUCs;
//! - [`harness`]: training with early stopping, evaluation, grids, timing.

pub mod bundle;
pub mod checkpoint;
pub mod error;
pub mod graph;
pub mod harness;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod split;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{build_graph, normalized_adjacency, Edge, Graph, NormalizedAdjacency};
pub use tensor::Tensor2;
