//! Ensemble multi-relational graph learning.
//!
//! The library propagates node features over a multi-relational graph by
//! iterating a two-step layer: a coefficient step that reweights the
//! relations on a simplex via entropic mirror descent, and a propagation
//! step that mixes each node's features with its relation-weighted
//! neighborhood average while anchoring to the input features. The layer
//! is the exact minimization step of a graph-smoothness objective, so
//! deep stacks do not wash out class signal the way plain stacked
//! averaging does.
//!
//! Around that core: closed-form and personalized-PageRank reference
//! solvers, a two-affine-map classifier trained with Adam whose gradient
//! is the hand-derived adjoint of the propagation, a deterministic
//! multi-relational stochastic block model generator, plain-text dataset
//! and report formats, and the `emr` command-line interface.

// Validation guards are written `!(x > 0.0)` on purpose: the negation
// rejects NaN along with out-of-range values in one comparison.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod cli;
pub mod coefficients;
pub mod config;
pub mod data;
pub mod enmp;
pub mod error;
pub mod graph;
pub mod model;
pub mod report;

/// Dense column-major feature matrix used throughout (nodes x channels).
pub type FeatureMatrix = nalgebra::DMatrix<f64>;

pub use error::{EmrError, Result};
