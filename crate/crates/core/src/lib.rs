//! 6D object pose estimation as conditional flow matching in R3.
//!
//! The crate is organized as a pipeline of largely independent layers:
//!
//! - [`geom`]: point clouds, rigid transforms, nearest-neighbor index,
//!   normal estimation, depth lifting, seeded noise sampling.
//! - [`features`]: per-point descriptors, synthetic semantic features,
//!   overlap labels and classifier, PCA reduction, feature fusion and
//!   sinusoidal positional encoding.
//! - [`flow`]: the conditional flow matching core — linear interpolation
//!   path, training-pair sampling, CFM loss, velocity models and Euler
//!   integration with anchor masking.
//! - [`register`]: Kabsch solver, RANSAC loop, SVD baseline, ICP
//!   refinement and the inlier-ratio metric.
//! - [`pipeline`]: synthetic scenes, end-to-end estimation, metrics,
//!   benchmark/ablation runners and file I/O for the CLI.

pub mod error;
pub mod features;
pub mod flow;
pub mod geom;
pub mod pipeline;
pub mod register;

pub use error::{Error, Result};
