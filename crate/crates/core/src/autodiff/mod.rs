//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of one forward evaluation. Calling
//! [`Tape::backward`] on a scalar node sweeps the tape in reverse and returns
//! the adjoint of every node that depends on a leaf. Tapes are meant to be
//! short-lived: build one per loss evaluation and drop it afterwards.
//!
//! ```
//! use dapp::autodiff::{Matrix, Tape};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Matrix::scalar(2.0));
//! let y = tape.leaf(Matrix::scalar(3.0));
//! let z = tape.mul(x, y).unwrap();
//! let grads = tape.backward(z).unwrap();
//! assert_eq!(grads.get(x).unwrap().item(), 3.0);
//! assert_eq!(grads.get(y).unwrap().item(), 2.0);
//! ```

mod gradcheck;
mod matrix;
mod tape;

pub use gradcheck::{grad_check, GradCheckReport};
pub use matrix::{dot, Matrix};
pub use tape::{sigmoid, softplus, softplus_inverse, Gradients, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{op} is undefined at {value}")]
    Domain { op: &'static str, value: f64 },
    #[error("backward needs a 1x1 root, got {shape:?}")]
    NonScalarRoot { shape: (usize, usize) },
    #[error("concat of zero blocks")]
    EmptyConcat,
}
