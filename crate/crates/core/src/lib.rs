//! Orchestration engine and evaluation harness for class-level,
//! test-driven code generation with language models.
//!
//! The pipeline predicts intra-class method dependencies, generates methods
//! one at a time in a dependency-respecting order, runs each method's public
//! tests in an isolated sandbox and repairs failures within a fixed budget.
//! The final class is scored against hidden private suites.

pub mod depgraph;
pub mod metrics;
pub mod prompting;
pub mod pysrc;
pub mod sandbox;
pub mod taskmodel;
pub mod tddloop;
