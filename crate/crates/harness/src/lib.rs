//! Experiment orchestration for the `modmf` binary: strict JSON configs,
//! dispatch to the core modules, 17-digit CSV/JSON output, rate plots and a
//! checksummed run manifest.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod output;
pub mod plot;
pub mod run;

pub use config::{ConfigLayer, ExperimentConfig, FeedbackSpec, Kind};
pub use error::{HarnessError, Result};
pub use plot::emit_rate_plot;
pub use run::{run, RunManifest};
