//! Markov-modulated mean-field particle systems: regime chains, weakly
//! coupled diffusions, their McKean–Vlasov limit, the stochastic maximum
//! principle, and ε-Nash experiments.
//!
//! Regimes are 0-based in this crate; file formats and the CLI use 1-based
//! labels.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chain;
pub mod control;
pub mod error;
pub mod mean_field;
pub mod metrics;
pub mod model;
pub mod nash;
pub mod par;
pub mod particle;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
