//! Multi-objective tuning of heap allocator parameters.
//!
//! A candidate is a vector of allocator tunables, rendered into environment
//! variables and judged by peak heap and wallclock of a synthetic workload
//! derived from a recorded allocation trace. NSGA-II searches the space and
//! the resulting Pareto front is analysed and turned into deployable
//! environment recipes.

pub mod campaign;
pub mod error;
pub mod evaluator;
pub mod metrics;
pub mod moo;
pub mod pareto;
pub mod space;
pub mod workload;

pub use error::{Error, Result};
