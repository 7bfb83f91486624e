//! Declarative multi-agent coordination specs, an interpreter that runs them
//! against pluggable agent backends on prediction-market fixtures, and the
//! scoring and statistics used to compare architectures.

pub mod agents;
pub mod engine;
pub mod fixture;
pub mod harness;
pub mod reference;
pub mod scoring;
pub mod seed;
pub mod spec;
pub mod stats;
