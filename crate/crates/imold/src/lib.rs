//! Dataset files, checkpoints, multi-seed experiments and the command-line
//! front end for [`imold_core`].

pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod eval;
pub mod io;
pub mod runner;

pub use error::{Error, Result};
