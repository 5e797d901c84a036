//! Cost-model driven tuning of LSM trees.
//!
//! The crate covers four layers:
//!
//! * [`cost`]: closed-form expected I/O per query type for leveling and tiering.
//! * [`nominal`] and [`robust`]: tuners that pick size ratio, filter memory and
//!   compaction policy for a known workload, or for the worst workload inside a
//!   KL-divergence ball around it.
//! * [`workloads`] and [`evaluation`]: the expected-workload catalog, the
//!   sampled benchmark set, and the throughput metrics used to compare tunings.
//! * [`sim`]: a small in-memory LSM tree with real Bloom filters and fence
//!   pointers that counts logical page I/O, used to check the model.

// `!(x > y)` guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cost;
pub mod error;
pub mod evaluation;
pub mod nominal;
pub mod params;
pub mod robust;
pub mod search;
pub mod sim;
pub mod workloads;

pub use cost::{cost_vector, workload_cost};
pub use error::{Error, Result};
pub use evaluation::{delta_throughput, run_sweep, throughput_range, ComparisonRecord, SweepReport};
pub use nominal::{tune_nominal, TuningResult};
pub use params::{CostVector, Policy, SystemConfig, SystemParams, Tuning, Workload};
pub use robust::{tune_robust, worst_case_cost, DualVars, RobustResult, WorstCase};
pub use search::{Diagnostics, SearchOptions};
pub use workloads::{expected_catalog, kl_divergence, sample_benchmark, BenchmarkSet, UncertaintyRegion};
