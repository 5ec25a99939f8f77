//! Orchestration of the audit pipeline: configuration, stages, reports and
//! the synthetic end-to-end validation.

pub mod config;
pub mod report;
pub mod stages;
pub mod validate;
