//! Invariant graph representation learning in a latent discrete space.
//!
//! Everything here is pure computation over `alloc` collections: the tape
//! autodiff engine, the graph data model and batching, the synthetic OOD
//! generator, GIN encoders, residual vector quantization, the invariant
//! learning objective, metrics, the Adam optimizer and the training loop.
//! File formats, checkpoints and the command line live in the `imold` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod rvq;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::Tensor;
