//! Optimal-transport attention with trainable positional priors.
//!
//! Attention rows are the closed-form minimizers of a KL-regularized
//! transport problem, `softmax(s / tau + log pi)`. The log-prior is split
//! into a translation-equivariant trigonometric component and a key-only
//! sink bias, both of which are folded into ordinary scaled dot-product
//! attention by widening the query and key vectors.
//!
//! The crate is `no_std` and only needs `alloc`; IO, file formats and the
//! command-line harness live in the companion `goat` crate.
//!
//! Modules:
//! - [`eot`]: transport objective, closed forms and a mirror-descent oracle.
//! - [`prior`]: spectral relative prior, sink bias, composite vectors.
//! - [`attention`]: reference SDPA, dense-bias attention and the GOAT head.
//! - [`theory`]: executable checks of the collapse, margin, sensitivity,
//!   max-entropy and rank-one results.
//! - [`toy_lm`]: a tiny causal LM with analytic gradients and the
//!   copy-mixture task.
//! - [`verify`]: randomized property sweeps producing [`verify::CheckReport`]s.
#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN.
#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;

pub mod attention;
pub mod eot;
mod error;
pub mod linalg;
pub mod prior;
mod real;
pub mod theory;
pub mod toy_lm;
pub mod verify;

pub use error::{Error, Result};
pub use real::Real;
