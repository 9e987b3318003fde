//! Cross-view visual place classification.
//!
//! Each place class gets exactly one real training frame. Scene graphs are
//! synthesized at virtual viewpoints around the place by warping the real
//! frame's semantics through its depth, then a small graph convolutional
//! network is trained on the real and synthesized graphs.
//!
//! Module map:
//! - [`geometry`]: pinhole camera, back-projection, Z-buffer projection, cones.
//! - [`raster`]: rasters and the binary raster / pose file formats.
//! - [`synthworld`]: procedural box worlds and a ray-cast renderer.
//! - [`scene_graph`]: semantic parts and the two-level scene graph.
//! - [`descriptors`]: local features, NBNN distance, reciprocal rank vectors.
//! - [`synthesis`]: virtual viewpoints and scene-graph synthesis.
//! - [`gcn`]: the graph network, its gradients and training loop.
//! - [`dataset`]: place classes, the grid rule and train/test splits.
//! - [`eval`]: MRR, baselines and the benchmark harness.

pub mod dataset;
pub mod descriptors;
pub mod error;
pub mod eval;
pub mod gcn;
pub mod geometry;
pub mod instrument;
pub mod raster;
pub mod scene_graph;
pub mod synthesis;
pub mod synthworld;

pub use error::{Error, Result};
