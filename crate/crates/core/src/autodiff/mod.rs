//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s during a
//! forward pass. [`Var::backward`] walks the record in reverse and returns
//! the gradient of a scalar with respect to every node that depends on a
//! parameter. A tape is built fresh for every forward pass and dropped after
//! the parameter update.
//!
//! ```
//! use imold_core::autodiff::Tape;
//! use imold_core::Tensor;
//!
//! let tape = Tape::new();
//! let x = tape.param(Tensor::scalar(3.0));
//! let y = x.mul(x).unwrap();
//! let grads = y.backward().unwrap();
//! assert_eq!(grads.get(x).unwrap().item(), 6.0);
//! ```

mod gradcheck;
mod ops;
mod tape;

pub use gradcheck::{grad_check, grad_check_many, GradCheckReport};
pub use tape::{Gradients, Tape, Var, COSINE_EPS};
