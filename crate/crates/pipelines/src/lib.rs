//! Pipelines, scenarios and reports on top of `quasilie-core`.

pub mod config;
pub mod error;
pub mod ode;
pub mod scenarios;
pub mod surface;
pub mod report;

pub use error::{PipelineError, Result};
pub use report::{Check, Report};
