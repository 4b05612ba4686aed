//! Configuration and stage drivers for end-to-end runs.

mod config;
mod pipeline;
mod runner;

pub use config::*;
pub use pipeline::*;
pub use runner::*;
