pub mod audit;
pub mod casebook;
pub mod dml;
pub mod error;
pub mod estimands;
pub mod learners;
pub mod popgen;
pub mod resume;
pub mod scorer;
pub mod sfm;

pub use error::{Error, Result};

/// Library version embedded in reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
