//! Multi-view adaptive graph convolutions for whole-graph classification.
//!
//! The engine learns one Mahalanobis metric per "view" of a graph signal,
//! turns each metric into a similarity graph and hybrid Laplacian, filters
//! the signal through Chebyshev-approximated spectral convolutions per view,
//! fuses views by batch-normalized max pooling, and trains everything
//! end-to-end with plain SGD under a stratified k-fold harness.
//!
//! Layout:
//! - [`matrix`], [`rng`], [`eigen`]: dense `f64` kernels, seeded randomness,
//!   and a reference Jacobi eigensolver used by the test oracles
//! - [`graph`]: graphs and Laplacian constructions
//! - [`tu`]: TU-format benchmark parsing, feature encodings, stratified folds
//! - [`view`]: trainable metric views (distances, kernel, hybrid Laplacian)
//! - [`cheb`]: Chebyshev basis, per-view signal projection
//! - [`model`]: the three-block network, view pooling, readout, head
//! - [`train`]: exact gradients, finite-difference checking, SGD,
//!   cross-validation, reports
//! - [`checkpoint`]: binary model container
//! - [`synth`]: deterministic synthetic datasets for self-contained runs

pub mod cheb;
pub mod checkpoint;
pub mod eigen;
pub mod error;
pub mod graph;
pub mod matrix;
pub mod model;
pub mod rng;
pub mod synth;
pub mod train;
pub mod tu;
pub mod view;

pub use error::{Error, Result};
pub use matrix::DenseMatrix;
