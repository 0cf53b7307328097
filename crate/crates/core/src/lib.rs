//! Construction, leakage auditing and evaluation of entity-matching
//! benchmarks under open-world conditions: unseen entities, heavy label
//! imbalance and multi-modal records.

pub mod audit;
pub mod builder;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod features;
pub mod io;
pub mod matcher;
pub mod pairs;
pub mod report;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
