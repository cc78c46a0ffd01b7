//! Loopy neural networks over graphs.
//!
//! A loopy neural network ties the hidden states of adjacent graph nodes
//! together: every node carries an input, `k` hidden, and an output neuron,
//! and same-layer hidden neurons of neighboring nodes feed each other. The
//! resulting neuron graph is cyclic, so plain backpropagation does not
//! terminate. Training instead extracts, per node, a g-hop rooted spanning
//! tree of the neuron graph, unrolls the forward pass over that tree (leaf
//! hidden neurons are bootstrapped from their node's raw features), and
//! back-propagates the node's error along the tree links only.
//!
//! The crate provides:
//!
//! - [`graph`]: loading, validating, and generating the input graphs;
//! - [`model`]: the neuron graph, trainable parameters, activations, losses;
//! - [`tree`]: g-hop subgraph and rooted spanning tree extraction;
//! - [`backprop`]: tree-unrolled forward pass, the gradient sweep, and a
//!   finite-difference gradient checker;
//! - [`train`]: SGD/Adam loops, k-fold cross-validation, and metrics;
//! - [`config`] and [`cli`]: the JSON run configuration and the command-line
//!   entry points.

pub mod backprop;
pub mod cli;
pub mod config;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod model;
pub mod train;
pub mod tree;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
