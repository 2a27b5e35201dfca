//! Interpretable, monotonicity-constrained set functions built from deep
//! lattice network layers, and a feature engine that turns sparse
//! categorical inputs into dense per-token features for them.
//!
//! A model computes `f(x) = rho(mean_m phi(x_m))` over the tokens `x_m` of
//! an example. `phi` is `K` calibrated lattices, `rho` is a calibrated
//! `K`-dimensional lattice followed by an output calibrator. Every lookup
//! table can be constrained monotone, and the constraints compose into an
//! end-to-end guarantee.
//!
//! Modules:
//!
//! - [`lattice`]: calibrators, lattices, interpolation and projections;
//! - [`model`]: the aggregation function, explanations, exports;
//! - [`train`]: losses, backprop, projected Adagrad, grid search;
//! - [`sfe`]: tokenization with fallback, token tables, token features;
//! - [`data`]: dataset files, splits, and metrics.

pub mod data;
pub mod error;
pub mod lattice;
pub mod model;
pub mod sfe;
pub mod sum;
pub mod testkit;
pub mod train;

pub use error::{Error, Result};
pub use lattice::{Bounds, Calibrator, Lattice, Monotonicity};
pub use model::{AggModel, Architecture, ExampleSet, Token};
