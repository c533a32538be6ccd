// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Source-free domain adaptation with a two-stage dual-evaluation procedure.
//!
//! A frozen prior model with a learnable prompt-context vector supplies
//! pseudo-labels; the target classifier is adapted with mutual-information
//! consistency losses and norm-bounded PGD perturbations whose initialization
//! scale follows the per-sample consistency measured in the first stage.

pub mod adaptation;
pub mod data;
pub mod distributions;
pub mod error;
pub mod losses;
pub mod models;
pub mod numerics;
pub mod perturbation;
pub mod pseudo_label;

pub use error::{Error, Result};
