//! Closed-form expected I/O cost of an LSM tree.
//!
//! Level `i` (1-based) holds up to `(T-1) * T^(i-1) * m_buf / E` entries and
//! the number of levels is `ceil(log_T(N * E / m_buf + 1))`. Bloom filters
//! follow the per-level allocation where deeper levels get exponentially
//! higher false positive rates:
//!
//! ```text
//! f_i = T^(T/(T-1)) / T^(L+1-i) * exp(-(m_filt / N) * ln(2)^2),  clamped to [0, 1]
//! ```
//!
//! Under tiering each level holds up to `T-1` runs of equal size, so probe
//! and seek counts pick up a factor of `T-1`.

use std::f64::consts::LN_2;

use crate::error::Result;
use crate::params::{CostVector, Policy, SystemParams, Tuning, Workload};

/// Number of disk-resident levels.
pub fn levels(sys: &SystemParams, tun: &Tuning) -> Result<u32> {
    sys.validate()?;
    tun.validate(sys)?;
    Ok(level_count(sys, tun))
}

pub(crate) fn level_count(sys: &SystemParams, tun: &Tuning) -> u32 {
    let t = tun.size_ratio;
    let x = sys.n() * sys.entry_size_bits / tun.buffer_bits(sys) + 1.0;
    let mut l = (x.ln() / t.ln()).ceil().max(1.0);
    // ln-ratio rounding can land one off when x is an exact power of T.
    while l > 1.0 && t.powf(l - 1.0) >= x {
        l -= 1.0;
    }
    while t.powf(l) < x {
        l += 1.0;
    }
    l as u32
}

/// Per-level false positive rates `f_1..f_L`, each clamped into `[0, 1]`.
pub fn fp_rates(sys: &SystemParams, tun: &Tuning) -> Result<Vec<f64>> {
    let l = levels(sys, tun)?;
    Ok((1..=l).map(|i| fp_rate(sys, tun, l, i)).collect())
}

/// Rate for level `i` of a tree sized for `levels` levels; `i` may exceed `levels`.
pub(crate) fn fp_rate(sys: &SystemParams, tun: &Tuning, levels: u32, i: u32) -> f64 {
    let t = tun.size_ratio;
    let ln_t = t.ln();
    let ln_f =
        t / (t - 1.0) * ln_t - (f64::from(levels) + 1.0 - f64::from(i)) * ln_t - tun.bits_per_entry(sys) * LN_2 * LN_2;
    ln_f.exp().clamp(0.0, 1.0)
}

/// Expected I/O of a point lookup for a key that is not in the tree.
pub fn empty_point_cost(sys: &SystemParams, tun: &Tuning) -> Result<f64> {
    Ok(cost_vector(sys, tun)?.empty_read)
}

/// Expected I/O of a point lookup for a key that is in the tree.
pub fn nonempty_point_cost(sys: &SystemParams, tun: &Tuning) -> Result<f64> {
    Ok(cost_vector(sys, tun)?.nonempty_read)
}

/// Expected I/O of a range lookup: one seek per run plus the scanned pages.
pub fn range_cost(sys: &SystemParams, tun: &Tuning) -> Result<f64> {
    Ok(cost_vector(sys, tun)?.range_read)
}

/// Amortized I/O per write, counting the merges each entry takes part in.
pub fn write_cost(sys: &SystemParams, tun: &Tuning) -> Result<f64> {
    Ok(cost_vector(sys, tun)?.write)
}

/// All four per-query costs at a tuning.
pub fn cost_vector(sys: &SystemParams, tun: &Tuning) -> Result<CostVector> {
    sys.validate()?;
    tun.validate(sys)?;
    Ok(evaluate(sys, tun))
}

/// Expected I/O per query of a workload, `w . c(tuning)`.
pub fn workload_cost(wkl: &Workload, sys: &SystemParams, tun: &Tuning) -> Result<f64> {
    Ok(wkl.dot(&cost_vector(sys, tun)?))
}

/// Unchecked evaluation; callers validate inputs.
pub(crate) fn evaluate(sys: &SystemParams, tun: &Tuning) -> CostVector {
    let t = tun.size_ratio;
    let l = level_count(sys, tun);
    let lf = f64::from(l);
    let ln_t = t.ln();
    // ln(T^L - 1), the normalizer of the per-level occupancy weights.
    let ln_full = lf * ln_t + (-(-lf * ln_t).exp()).ln_1p();
    let ln_tm1 = (t - 1.0).ln();

    let mut fp_sum = 0.0;
    let mut nonempty = 0.0;
    for i in 1..=l {
        let f = fp_rate(sys, tun, l, i);
        let weight = (f64::from(i - 1) * ln_t + ln_tm1 - ln_full).exp();
        let probes = match tun.policy {
            Policy::Leveling => 1.0 + fp_sum,
            Policy::Tiering => 1.0 + (t - 1.0) * fp_sum + (t - 2.0) / 2.0 * f,
        };
        nonempty += weight * probes;
        fp_sum += f;
    }

    let scan = sys.range_selectivity * sys.n() / sys.b();
    let write_io = lf / sys.b() * (1.0 + sys.rw_asymmetry);
    match tun.policy {
        Policy::Leveling => CostVector {
            empty_read: fp_sum,
            nonempty_read: nonempty,
            range_read: scan + lf,
            write: write_io * (t - 1.0) / 2.0,
        },
        Policy::Tiering => CostVector {
            empty_read: (t - 1.0) * fp_sum,
            nonempty_read: nonempty,
            range_read: scan + lf * (t - 1.0),
            write: write_io * (t - 1.0) / t,
        },
    }
}
