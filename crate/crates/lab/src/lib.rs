//! Experiment harness for `devae-core`: run configuration, checkpoint and
//! dataset files, metric CSVs and reports, image grids, and the ablation and
//! pressure-sweep drivers behind the `devae` command.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod error;
pub mod io;
pub mod run;

pub use config::RunConfig;
pub use error::{LabError, LabResult};
