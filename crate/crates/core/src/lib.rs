//! Rumor-source detection on hypergraphs with a graph-aware selective
//! state-space model.

pub mod diffusion;
pub mod eval;
pub mod error;
pub mod features;
pub mod harness;
pub mod hypergraph;
pub mod layers;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod ssm;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
