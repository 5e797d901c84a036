//! Shared fixtures for the criterion benchmarks.

use lsmtune::sim::{SimConfig, SimTree};
use lsmtune::{Policy, SystemParams, Tuning};

/// One hundred thousand 1 KB entries, 4 KB pages, a 1 MB write buffer and
/// `filter_bits_per_entry` bits of filter memory per entry.
pub fn small_system(filter_bits_per_entry: f64) -> (SystemParams, f64) {
    let n = 100_000u64;
    let filter_bits = filter_bits_per_entry * n as f64;
    let sys = SystemParams {
        total_memory_bits: filter_bits + 1024.0 * 8192.0,
        entry_size_bits: 8192.0,
        page_capacity: 4,
        num_entries: n,
        rw_asymmetry: 1.0,
        range_selectivity: 1e-4,
    };
    (sys, filter_bits)
}

/// A bulk-loaded tree over [`small_system`].
pub fn loaded_tree(size_ratio: f64, policy: Policy, seed: u64) -> SimTree {
    let (sys, filter_bits) = small_system(5.0);
    let cfg = SimConfig::new(&sys, &Tuning::new(size_ratio, filter_bits, policy), seed).expect("valid tuning");
    SimTree::bulk_load(cfg, sys.num_entries).expect("tree fits")
}
