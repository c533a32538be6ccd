//! Dense 64-bit arrays, a reverse-mode tape over them, and a
//! finite-difference gradient checker.

mod array;
mod gradcheck;
mod tape;

pub use array::{DenseArray, LOG_FLOOR};
pub use gradcheck::{compare_gradient, grad_check, numeric_gradient, relative_error};
pub use tape::{Gradients, Tape, Var};
