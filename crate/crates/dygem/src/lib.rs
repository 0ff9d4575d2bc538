//! Probabilistic dynamic-graph embedding with selective state-space models
//! and transformer encoders.
//!
//! The crate trains three temporal graph embedding models over discrete
//! snapshot sequences, represents every node as a diagonal Gaussian, and
//! evaluates the embeddings on temporal link prediction:
//!
//! - `st-transformerg2g`: per-snapshot GCN stack feeding a single-head
//!   transformer encoder over the lookback window;
//! - `dg-mamba`: selective state-space (Mamba-style) block over per-node
//!   feature sequences;
//! - `gdg-mamba`: the same pipeline with a GINE convolution enriching each
//!   snapshot's features with edge attributes first.
//!
//! Everything runs on a small reverse-mode autodiff tape ([`tape`]) over
//! dense 64-bit tensors, with deterministic seeded streams end to end.
//! See the crate examples for runnable walkthroughs of each capability and
//! the `dygem` binary for the file-based workflow (ingest, generate-sbm,
//! train, eval, inspect, export-embeddings).

pub mod artifacts;
pub mod cli;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gnn;
pub mod graph;
pub mod ingest;
pub mod loss;
pub mod mamba;
pub mod models;
pub mod params;
pub mod rng;
pub mod sbm;
pub mod ssm;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
